import math

import numpy as np
import pytest

from timely_ou.channel import CodeConfig, DelayDistribution, delay_distribution, mds_success_probs
from timely_ou.ou import OUParams, make_rng
from timely_ou.penalty import CustomPenalty, MMSEPenalty
from timely_ou.policy import FRPolicy, IIRPolicy, fr_mmse, fr_optimal_delta, solve_iir
from timely_ou.quantizer import lloyd_fit
from timely_ou.sim import EpochStats, simulate_fr, simulate_iir, simulate_tracking

DEFAULT = OUParams(0.01, 1.0)
DEFAULT_CODE = CodeConfig(5, 7, 0.05, 0.15)


def test_iir_point_mass_zero_wait_is_exact():
    law = DelayDistribution.point_mass(0.4)
    g = MMSEPenalty(OUParams(0.3, 1.0), 2)
    pol = IIRPolicy(0.0, g, law, 0.0, 0)  # lambda at the floor: never wait
    st = simulate_iir(pol, law, g, 1000, make_rng(0))
    assert st.average == pytest.approx(g.area(0.4, 0.4) / 0.4, rel=1e-12)
    assert st.stderr == pytest.approx(0.0, abs=1e-12)


def test_fr_deterministic_channel_is_exact():
    params = OUParams(0.25, 1.0)
    code = CodeConfig(4, 6, 0.05, 0.5)
    g = MMSEPenalty(params, 4)
    dstar = fr_optimal_delta(code)
    st = simulate_fr(FRPolicy(dstar, code), 1.0, code, g, 500, make_rng(0))
    assert st.average == pytest.approx(fr_mmse(params, code, 1.0, dstar), rel=1e-12)
    assert st.mean_attempts == 1.0


def test_default_configuration_within_three_standard_errors():
    sp, law = delay_distribution(DEFAULT_CODE, 0.1, True)
    g = MMSEPenalty(DEFAULT, 5)
    pol = solve_iir(g, law)
    rng = make_rng(42)
    st = simulate_iir(pol, law, g, 200_000, rng)
    assert abs(st.average - pol.lambda_star) <= 3 * st.stderr
    assert st.mean_delay == pytest.approx(law.mean(), rel=0.01)
    dstar = fr_optimal_delta(DEFAULT_CODE)
    st = simulate_fr(FRPolicy(dstar, DEFAULT_CODE), sp.p0, DEFAULT_CODE, g, 200_000, rng)
    assert abs(st.average - fr_mmse(DEFAULT, DEFAULT_CODE, sp.p0, dstar)) <= 3 * st.stderr
    assert st.mean_attempts == pytest.approx(1 / sp.p0, rel=0.01)


def test_fr_large_beta_uses_processing_bound_period():
    # delta = beta > n Tb: every message waits for the previous decode
    params = OUParams(0.25, 1.0)
    code = CodeConfig(3, 4, 0.05, 0.6)
    p0 = mds_success_probs(code, 0.2, 0).p0
    g = MMSEPenalty(params, 3)
    for delta in (fr_optimal_delta(code), code.beta):
        st = simulate_fr(FRPolicy(delta, code), p0, code, g, 200_000, make_rng(5))
        assert abs(st.average - fr_mmse(params, code, p0, delta)) <= 3 * st.stderr


def test_standard_error_scales_with_root_epochs():
    sp, law = delay_distribution(CodeConfig(4, 6, 0.05, 0.15), 0.3, True)
    g = MMSEPenalty(OUParams(0.25, 1.0), 4)
    pol = solve_iir(g, law)
    a = simulate_iir(pol, law, g, 100_000, make_rng(1)).stderr
    b = simulate_iir(pol, law, g, 200_000, make_rng(2)).stderr
    assert a / b == pytest.approx(math.sqrt(2), rel=0.05)


def test_custom_penalty_simulation_matches_policy_ratio():
    _, law = delay_distribution(CodeConfig(2, 3, 0.05, 0.3), 0.3, False)
    g = CustomPenalty(lambda a: a * a)
    pol = solve_iir(g, law)
    st = simulate_iir(pol, law, g, 100_000, make_rng(3))
    assert abs(st.average - pol.lambda_star) <= 3 * st.stderr


def test_epoch_stats_row():
    st = EpochStats(10.0, 4.0, 3, 0.5, 0.01)
    assert st.average == 2.5
    assert EpochStats.CSV_HEADER == ["scheme", "epochs", "avg_penalty", "stderr", "mean_delay"]
    assert st.csv_row("iir")[0] == "iir"
    with pytest.raises(ValueError):
        simulate_iir(None, DelayDistribution.point_mass(1.0), None, 0, make_rng(0))


# --- tracking


def _codebook(params, ell, seed=0):
    x = make_rng(seed).standard_normal(200_000) * math.sqrt(params.steady_state_variance)
    return lloyd_fit(x, ell).codebook


@pytest.fixture(scope="module")
def default_tracking():
    sp, _ = delay_distribution(DEFAULT_CODE, 0.1, True)
    cb = _codebook(DEFAULT, 5)
    iir = simulate_tracking("iir", cb, sp, DEFAULT_CODE, DEFAULT, 200.0, 9)
    fr = simulate_tracking("fr", cb, sp, DEFAULT_CODE, DEFAULT, 200.0, 9)
    return iir, fr


def test_tracking_decode_times_and_estimator_form(default_tracking):
    for res in default_tracking:
        assert np.all(np.diff(res.decode_times) > 0)
        assert np.all(res.decode_times > res.sample_times)
        t = res.truth_path.times
        xhat = res.estimate_path.values
        k = np.searchsorted(res.decode_times, t, side="right") - 1
        held = k >= 0
        expect = res.reconstructions[k[held]] * np.exp(-DEFAULT.theta * (t[held] - res.sample_times[k[held]]))
        np.testing.assert_allclose(xhat[held], expect, rtol=1e-12, atol=1e-12)
        assert np.all(xhat[~held] == 0.0)


def test_tracking_age_is_a_sawtooth(default_tracking):
    res = default_tracking[0]
    t = res.truth_path.times
    age = res.age_at(t)
    held = ~np.isnan(age)
    assert np.all(age[held] >= 0)
    # slope one between decodes, reset to the delay at each decode
    dec = np.searchsorted(res.decode_times, t, side="right")
    same = (dec[1:] == dec[:-1]) & held[1:] & held[:-1]
    np.testing.assert_allclose(np.diff(age)[same], DEFAULT_CODE.Tb, rtol=1e-9)
    at = res.age_at(res.decode_times)
    np.testing.assert_allclose(at, res.decode_times - res.sample_times, rtol=1e-12)


def test_tracking_is_deterministic_and_uses_shared_path():
    sp, _ = delay_distribution(DEFAULT_CODE, 0.1, True)
    cb = _codebook(DEFAULT, 5)
    a = simulate_tracking("iir", cb, sp, DEFAULT_CODE, DEFAULT, 50.0, np.random.SeedSequence(4))
    b = simulate_tracking("iir", cb, sp, DEFAULT_CODE, DEFAULT, 50.0, np.random.SeedSequence(4))
    assert np.array_equal(a.estimate_path.values, b.estimate_path.values)
    c = simulate_tracking("fr", cb, sp, DEFAULT_CODE, DEFAULT, 50.0, 4, path=a.truth_path)
    assert c.truth_path is a.truth_path


def test_near_perfect_tracking_limit():
    params = OUParams(0.01, 1.0)
    # short bits and no processing: every sample arrives almost at once
    code = CodeConfig(8, 8, 0.001, 0.0)
    sp, _ = delay_distribution(code, 1e-6, True)
    cb = _codebook(params, 8)
    res = simulate_tracking("iir", cb, sp, code, params, 50.0, 1)
    assert res.empirical_mse < 0.05
    assert res.empirical_mse < 1e-3 * params.steady_state_variance


def test_tracking_rejects_bad_inputs():
    sp, _ = delay_distribution(DEFAULT_CODE, 0.1, True)
    with pytest.raises(ValueError):
        simulate_tracking("iir", _codebook(DEFAULT, 3), sp, DEFAULT_CODE, DEFAULT, 50.0, 0)
    with pytest.raises(ValueError):
        simulate_tracking("xx", _codebook(DEFAULT, 5), sp, DEFAULT_CODE, DEFAULT, 50.0, 0)
    with pytest.raises(ValueError):
        simulate_tracking("fr", _codebook(DEFAULT, 5), sp, DEFAULT_CODE, DEFAULT, 0.3, 0)


def test_tracking_csv(tmp_path, default_tracking):
    res = default_tracking[1]
    res.write_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,x_true,x_hat"
    assert len(lines) == len(res.truth_path) + 1
