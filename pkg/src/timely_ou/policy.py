"""Optimal sampling: threshold waiting for IIR, zero-wait / just-in-time for FR."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import CodeConfig, DelayDistribution
from .ou import OUParams
from .penalty import AgePenalty, MMSEPenalty, UnreachablePenalty

BISECTION_TOL = 1e-9
BISECTION_MAX_ITER = 200


class BracketError(RuntimeError):
    """The Dinkelbach gap does not change sign over the analytic bracket."""


# --------------------------------------------------------------------------
# IIR


def _area_matrix(g: AgePenalty, dist: DelayDistribution, waits: np.ndarray) -> np.ndarray:
    """area[i, j]: penalty over an epoch starting at age support[i], waiting waits[i], delay support[j]."""
    y = dist.support
    start = np.broadcast_to(y[:, None], (len(y), len(y)))
    length = waits[:, None] + y[None, :]
    return np.asarray(g.area(start, length), dtype=float)


def iir_epoch_terms(g: AgePenalty, dist: DelayDistribution, waits) -> tuple[float, float]:
    """(E[epoch penalty], E[epoch length]) when the wait after delay support[i] is waits[i].

    The starting age is distributed as the delay law itself.
    """
    w = np.asarray(waits, dtype=float)
    if w.shape != dist.support.shape:
        w = np.broadcast_to(w, dist.support.shape)
    pw = dist.weights
    ey = dist.mean()
    if isinstance(g, MMSEPenalty):
        # E over Y factors through E[exp(-2 theta Y)]
        phi = g.decay_moment(dist)
        y = dist.support
        per_start = g.c * (w + ey) - g.c * g.q / g.rate * (
            np.exp(-g.rate * y) - np.exp(-g.rate * (y + w)) * phi)
        num = float(np.dot(pw, per_start))
    else:
        num = float(pw @ _area_matrix(g, dist, w) @ pw)
    den = float(np.dot(pw, w)) + ey
    return num, den


def iir_ratio(g: AgePenalty, dist: DelayDistribution, waits) -> float:
    """Long-term average penalty of an IIR waiting rule."""
    num, den = iir_epoch_terms(g, dist, waits)
    return num / den


def iir_auxiliary(lam: float, g: AgePenalty, dist: DelayDistribution) -> float:
    """Dinkelbach gap: min over waiting rules of E[penalty] - lam E[length].

    The minimiser is the threshold rule ``wait_for_level(g, ybar, lam)``;
    the root in ``lam`` is the optimal long-term average penalty.
    """
    waits = g.wait_for_level(dist.support, lam, dist)
    num, den = iir_epoch_terms(g, dist, waits)
    return num - lam * den


@dataclass(frozen=True)
class IIRPolicy:
    lambda_star: float
    penalty: AgePenalty
    dist: DelayDistribution
    residual: float
    iterations: int

    @property
    def threshold(self) -> float | None:
        """Age at which sampling resumes (MMSE penalty only)."""
        if isinstance(self.penalty, MMSEPenalty):
            return self.penalty.threshold_age(self.lambda_star, self.dist)
        return None

    def wait(self, ybar):
        return self.penalty.wait_for_level(ybar, self.lambda_star, self.dist)

    def ratio(self) -> float:
        return iir_ratio(self.penalty, self.dist, self.wait(self.dist.support))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ybar", "wait"])
            for y, x in zip(self.dist.support, np.atleast_1d(self.wait(self.dist.support))):
                w.writerow([repr(float(y)), repr(float(x))])


def _iir_bracket(g: AgePenalty, dist: DelayDistribution) -> tuple[float, float]:
    if isinstance(g, MMSEPenalty):
        return g.floor, g.c
    # optimum averages g over ages >= min delay, and zero-wait is feasible
    lo = float(g.evaluate(dist.minimum))
    hi = iir_ratio(g, dist, np.zeros_like(dist.support))
    return lo, hi


def solve_iir(g: AgePenalty, dist: DelayDistribution, tol: float = BISECTION_TOL,
              max_iter: int = BISECTION_MAX_ITER) -> IIRPolicy:
    """Bisection on the Dinkelbach gap.

    Stops when the bracket is narrower than ``tol`` times the lower end,
    i.e. ``tol`` is a relative accuracy on lambda*.
    """
    lo, hi = _iir_bracket(g, dist)
    floor = 1e-12 * max(abs(hi), 1e-300)

    def gap(lam):
        try:
            return iir_auxiliary(lam, g, dist)
        except UnreachablePenalty:
            return -math.inf

    if gap(lo) < 0:
        raise BracketError(f"Dinkelbach gap negative at lower bracket {lo}")
    if hi > lo and gap(hi) > 0:
        raise BracketError(f"Dinkelbach gap positive at upper bracket {hi}")
    it = 0
    while hi - lo > tol * max(abs(lo), floor) and it < max_iter:
        mid = 0.5 * (lo + hi)
        if gap(mid) > 0:
            lo = mid
        else:
            hi = mid
        it += 1
    lam = 0.5 * (lo + hi)
    return IIRPolicy(lam, g, dist, gap(lam), it)


def iir_waiting_closed_form(ybar, lam: float, params: OUParams, ell: int,
                            dist: DelayDistribution):
    """Optimal IIR wait for the OU MMSE penalty, written out explicitly."""
    c = params.steady_state_variance
    if lam >= c:
        raise ValueError(f"lambda={lam} must be below sigma^2/2theta={c}")
    rate = 2.0 * params.theta
    phi = float(np.dot(dist.weights, np.exp(-rate * dist.support)))
    arg = c * (1.0 - 2.0 ** (-2 * ell)) * phi / (c - lam)
    out = np.maximum(np.log(arg) / rate - np.asarray(ybar, dtype=float), 0.0)
    return float(out) if out.ndim == 0 else out


def brute_force_threshold(g: AgePenalty, dist: DelayDistribution, span: float,
                          points: int = 10_000, refine: bool = True) -> tuple[float, float]:
    """Best constant-threshold rule by direct evaluation of the ratio.

    Scans thresholds T in [min delay, min delay + span]; the wait after
    delay y is [T - y]^+. Optionally polishes the grid winner with a bounded
    scalar search between its neighbours. Returns (ratio, T).
    """
    from scipy.optimize import minimize_scalar

    y0 = dist.minimum
    grid = np.linspace(y0, y0 + span, points)

    def ratio(T):
        return iir_ratio(g, dist, np.maximum(T - dist.support, 0.0))

    vals = np.array([ratio(T) for T in grid])
    k = int(np.argmin(vals))
    best, T = float(vals[k]), float(grid[k])
    if refine:
        a, b = grid[max(k - 1, 0)], grid[min(k + 1, points - 1)]
        res = minimize_scalar(ratio, bounds=(a, b), method="bounded",
                              options={"xatol": 1e-12 * max(1.0, b)})
        if res.fun < best:
            best, T = float(res.fun), float(res.x)
    return best, T


# --------------------------------------------------------------------------
# FR


@dataclass(frozen=True)
class FRPolicy:
    delta: float
    cfg: CodeConfig

    def __post_init__(self):
        if not 0 <= self.delta <= self.cfg.beta + 1e-15:
            raise ValueError("delta must lie in [0, beta]")

    @property
    def period(self) -> float:
        """Time between consecutive transmissions, n*Tb + delta."""
        return self.cfg.n * self.cfg.Tb + self.delta

    @classmethod
    def original(cls, cfg: CodeConfig) -> "FRPolicy":
        """Wait for feedback before the next sample (delta = beta)."""
        return cls(cfg.beta, cfg)

    @classmethod
    def just_in_time(cls, cfg: CodeConfig) -> "FRPolicy":
        return cls(fr_optimal_delta(cfg), cfg)


def fr_optimal_delta(cfg: CodeConfig) -> float:
    """[beta - n Tb]^+ : transmit so delivery coincides with the end of decoding."""
    return max(cfg.beta - cfg.n * cfg.Tb, 0.0)


def fr_mmse(params: OUParams, cfg: CodeConfig, p0: float, delta: float) -> float:
    """Long-term average MMSE of FR sending every n Tb + delta.

    Valid for delta >= [beta - n Tb]^+. Sending faster than the receiver
    decodes builds an unbounded queue, the age of decoded samples grows
    without limit and the average MMSE is sigma^2/2theta.
    """
    if not 0 < p0 <= 1:
        raise ValueError("p0 must lie in (0, 1]")
    if not 0 <= delta <= cfg.beta + 1e-15:
        raise ValueError("delta must lie in [0, beta]")
    c = params.steady_state_variance
    if delta < fr_optimal_delta(cfg) - 1e-15:
        return c
    rate = 2.0 * params.theta
    K = cfg.n * cfg.Tb + delta
    q = 1.0 - 2.0 ** (-2 * cfg.ell)
    z = math.exp(-rate * K)
    gain = q * math.exp(-rate * cfg.nbar) * p0 * -math.expm1(-rate * K) / (rate * K * (1.0 - (1.0 - p0) * z))
    return c * (1.0 - gain)


def fr_epoch_terms(g: AgePenalty, nbar: float, p0: float, first_wait: float,
                   attempt_time: float | None = None, mass_tol: float = 1e-15) -> tuple[float, float]:
    """(E[epoch penalty], E[epoch length]) for FR waiting ``first_wait`` then sending until success.

    Every epoch starts at age ``nbar``; each attempt lasts ``attempt_time``
    (``nbar`` by default) and later attempts do not wait.
    """
    T = nbar if attempt_time is None else attempt_time
    den = first_wait + T / p0
    if isinstance(g, MMSEPenalty):
        if p0 == 1.0:
            e_decay = math.exp(-g.rate * (first_wait + T))
        else:
            z = math.exp(-g.rate * T)
            e_decay = math.exp(-g.rate * first_wait) * p0 * z / (1.0 - (1.0 - p0) * z)
        num = g.c * den - g.c * g.q / g.rate * math.exp(-g.rate * nbar) * (1.0 - e_decay)
        return num, den
    num, m, prob = 0.0, 1, p0
    tail = 1.0
    while tail > mass_tol:
        num += prob * g.area(nbar, first_wait + m * T)
        tail -= prob
        m += 1
        prob *= 1.0 - p0
        if m > 100_000:
            break
    return num, den


def fr_ratio(g: AgePenalty, nbar: float, p0: float, first_wait: float,
             attempt_time: float | None = None) -> float:
    num, den = fr_epoch_terms(g, nbar, p0, first_wait, attempt_time)
    return num / den


def fr_zero_wait_check(g: AgePenalty, cfg: CodeConfig, p0: float, grid) -> float:
    """Grid argmin of the FR objective over the first wait (later waits fixed at 0).

    Zero-wait optimality predicts 0.
    """
    grid = np.asarray(grid, dtype=float)
    if not np.any(grid == 0):
        raise ValueError("grid must contain 0")
    vals = np.array([fr_ratio(g, cfg.nbar, p0, w) for w in grid])
    return float(grid[int(np.argmin(vals))])
