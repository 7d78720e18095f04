"""Monte Carlo: renewal epochs for IIR/FR and the sample-path tracking experiment."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import (CodeConfig, DelayDistribution, SuccessProbs, delay_pmf_iir,
                      simulate_timeline_iir)
from .ou import OUParams, SamplePath, make_rng, ou_path
from .penalty import AgePenalty, MMSEPenalty
from .policy import FRPolicy, IIRPolicy, fr_optimal_delta, solve_iir
from .quantizer import Codebook


@dataclass
class EpochStats:
    total_penalty_area: float
    total_time: float
    epochs: int
    mean_delay: float
    stderr: float
    mean_attempts: float = math.nan

    @property
    def average(self) -> float:
        return self.total_penalty_area / self.total_time

    def csv_row(self, scheme: str) -> list:
        return [scheme, self.epochs, repr(self.average), repr(self.stderr), repr(self.mean_delay)]

    CSV_HEADER = ["scheme", "epochs", "avg_penalty", "stderr", "mean_delay"]


def _ratio_stats(areas: np.ndarray, lengths: np.ndarray) -> tuple[float, float]:
    """Renewal-reward ratio and its delta-method standard error.

    Consecutive IIR epochs share a delay draw, so the residual sequence is
    1-dependent; the lag-1 autocovariance is included.
    """
    n = len(areas)
    ratio = areas.sum() / lengths.sum()
    e = areas - ratio * lengths
    e = e - e.mean()
    var = np.dot(e, e) / n
    if n > 2:
        var += 2.0 * np.dot(e[1:], e[:-1]) / n
    var = max(var, 0.0)
    return float(ratio), float(math.sqrt(var / n) / lengths.mean())


def simulate_iir(policy: IIRPolicy, dist: DelayDistribution, g: AgePenalty, epochs: int,
                 rng: np.random.Generator) -> EpochStats:
    """Renewal simulation: the starting age is the previous epoch's delay."""
    if epochs < 1:
        raise ValueError("need at least one epoch")
    y = dist.support
    idx = rng.choice(len(y), size=epochs + 1, p=dist.weights)
    start, end = idx[:-1], idx[1:]
    waits = np.atleast_1d(np.asarray(policy.wait(y), dtype=float))
    lengths = waits[start] + y[end]
    if isinstance(g, MMSEPenalty):
        areas = g.area(y[start], lengths)
    else:
        pairs, inv = np.unique(np.stack([start, end]), axis=1, return_inverse=True)
        cell = np.array([g.area(y[a], waits[a] + y[b]) for a, b in pairs.T])
        areas = cell[inv.ravel()]
    areas = np.asarray(areas, dtype=float)
    _, se = _ratio_stats(areas, lengths)
    return EpochStats(float(areas.sum()), float(lengths.sum()), epochs, float(y[end].mean()), se)


def simulate_fr(policy: FRPolicy, p0: float, cfg: CodeConfig, g: AgePenalty, epochs: int,
                rng: np.random.Generator) -> EpochStats:
    """Per-message FR timeline.

    Message i is sampled at i*K (K = n Tb + delta), fully received at
    i*K + n Tb, and decoded FIFO in beta; its decode ends at
    nbar + i*max(K, beta). Each decode succeeds independently with
    probability ``p0``. Epochs run between successful decodes.
    """
    if epochs < 1:
        raise ValueError("need at least one epoch")
    K = policy.period
    P = max(K, cfg.beta)
    attempts = rng.geometric(p0, size=epochs)
    # message 0 is the success that opens the first epoch
    succ = np.concatenate([[0], np.cumsum(attempts)])
    decode = cfg.nbar + succ * P
    sample = succ * K
    start_age = (decode - sample)[:-1]
    lengths = attempts * P
    if isinstance(g, MMSEPenalty):
        areas = g.area(start_age, lengths)
    else:
        keys, inv = np.unique(np.stack([start_age, lengths]), axis=1, return_inverse=True)
        cell = np.array([g.area(a, l) for a, l in keys.T])
        areas = cell[inv.ravel()]
    areas = np.asarray(areas, dtype=float)
    lengths = lengths.astype(float)
    _, se = _ratio_stats(areas, lengths)
    mean_delay = float(np.mean((decode - sample)[1:]))
    return EpochStats(float(areas.sum()), float(lengths.sum()), epochs, mean_delay, se,
                      float(attempts.mean()))


# --------------------------------------------------------------------------
# tracking


@dataclass
class TrackingResult:
    truth_path: SamplePath
    estimate_path: SamplePath
    empirical_mse: float
    sample_times: np.ndarray
    decode_times: np.ndarray
    reconstructions: np.ndarray
    scheme: str
    messages_sent: int = 0
    extras: dict = field(default_factory=dict)

    def age_at(self, t) -> np.ndarray:
        """AoI at times ``t``; NaN before the first decode."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.decode_times, t, side="right") - 1
        age = np.where(k >= 0, t - self.sample_times[np.maximum(k, 0)], np.nan)
        return age

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x_true", "x_hat"])
            for t, x, xh in zip(self.truth_path.times, self.truth_path.values, self.estimate_path.values):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(xh))])


def _iir_deliveries(path, cb, sp, cfg, policy, enhanced, horizon, rng):
    samples, decodes, levels = [], [], []
    t = 0.0
    sent = 0
    while True:
        x = float(path.value_at(t))
        level = float(cb.reconstruct(x))
        delay = simulate_timeline_iir(cfg, enhanced, sp=sp, rng=rng).delay_float
        sent += 1
        d = t + delay
        if d > horizon:
            break
        samples.append(t)
        decodes.append(d)
        levels.append(level)
        t = d + float(policy.wait(delay))
    return samples, decodes, levels, sent


def _fr_deliveries(path, cb, sp, cfg, delta, horizon, rng):
    K = cfg.n * cfg.Tb + delta
    P = max(K, cfg.beta)
    count = int(math.floor((horizon - cfg.nbar) / P)) + 1
    if count <= 0:
        return [], [], [], 0
    i = np.arange(count)
    sample = i * K
    decode = cfg.nbar + i * P
    ok = rng.random(count) < sp.p0
    levels = cb.reconstruct(path.value_at(sample[ok]))
    return list(sample[ok]), list(decode[ok]), list(np.atleast_1d(levels)), count


def simulate_tracking(scheme: str, cb: Codebook, sp: SuccessProbs, cfg: CodeConfig,
                      params: OUParams, horizon: float, seed, enhanced: bool = True,
                      path: SamplePath | None = None, policy: IIRPolicy | None = None) -> TrackingResult:
    """Track one OU sample path through sampling, quantization, coding and decoding.

    The path lives on a grid of step Tb; sampling instants are snapped to the
    nearest grid point only to read the path value. Between decodes the
    receiver holds the last reconstruction decayed at rate theta; before the
    first decode it uses the prior mean 0. The empirical MSE is the grid
    time-average of the squared error from the first decode on.
    """
    if scheme not in ("iir", "fr"):
        raise ValueError("scheme must be 'iir' or 'fr'")
    if len(cb.levels) != 2**cfg.ell:
        raise ValueError(f"codebook has {len(cb.levels)} levels, expected {2**cfg.ell}")
    if isinstance(seed, np.random.SeedSequence):
        # a fresh copy, so spawning does not depend on the caller's spawn history
        root = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key)
    else:
        root = np.random.SeedSequence(seed)
    path_seed, channel_seed = root.spawn(2)
    if path is None:
        path = ou_path(params, horizon, cfg.Tb, path_seed)
    rng = make_rng(channel_seed)

    if scheme == "iir":
        if policy is None:
            dist = delay_pmf_iir(sp, cfg, enhanced)
            policy = solve_iir(MMSEPenalty(params, cfg.ell), dist)
        samples, decodes, levels, sent = _iir_deliveries(path, cb, sp, cfg, policy, enhanced, horizon, rng)
        extras = {"lambda_star": policy.lambda_star}
    else:
        delta = fr_optimal_delta(cfg) if enhanced else cfg.beta
        samples, decodes, levels, sent = _fr_deliveries(path, cb, sp, cfg, delta, horizon, rng)
        extras = {"delta": delta}
    if not decodes:
        raise ValueError(f"horizon {horizon} ends before the first successful decode")

    samples = np.asarray(samples, dtype=float)
    decodes = np.asarray(decodes, dtype=float)
    levels = np.asarray(levels, dtype=float)
    t = path.times
    k = np.searchsorted(decodes, t, side="right") - 1
    held = k >= 0
    xhat = np.zeros_like(t)
    kk = k[held]
    xhat[held] = levels[kk] * np.exp(-params.theta * (t[held] - samples[kk]))
    err = (path.values - xhat)[held]
    mse = float(np.mean(err**2))
    est = SamplePath(path.t0, path.dt, xhat)
    label = ("enhanced-" if enhanced else "") + scheme
    return TrackingResult(path, est, mse, samples, decodes, levels, label, sent, extras)
