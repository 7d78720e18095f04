"""Timely MMSE estimation of an OU process over a noisy channel with processing delay."""
from .channel import (ChannelTooNoisy, CodeConfig, DelayDistribution, SuccessProbs,
                      delay_distribution, delay_pmf_iir, enhanced_delay, enhanced_saving,
                      kappa, mds_success_probs, original_delay, sample_attempts_fr,
                      simulate_timeline_iir)
from .ou import OUParams, SamplePath, ou_path, ou_paths, ou_step, steady_state_variance
from .penalty import (AgePenalty, CustomPenalty, MMSEPenalty, NonMonotonePenalty,
                      expected_end_penalty, wait_for_level)
from .policy import (FRPolicy, IIRPolicy, fr_mmse, fr_optimal_delta, fr_zero_wait_check,
                     iir_auxiliary, iir_waiting_closed_form, solve_iir)
from .quantizer import Codebook, lloyd_fit, lloyd_train, quantize, rd_quantizer_mse
from .sim import EpochStats, TrackingResult, simulate_fr, simulate_iir, simulate_tracking

__version__ = "0.1.0"
