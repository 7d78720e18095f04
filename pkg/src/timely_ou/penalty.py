"""Age-penalty functionals and their delay expectations.

Two kinds are supported: the OU MMSE functional

    h(a) = c (1 - q exp(-2 theta a)),   c = sigma^2/2theta,  q = 1 - 2^(-2 ell)

for which everything has a closed form, and an arbitrary increasing
callable, handled by quadrature and bisection.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.integrate import quad

from .channel import DelayDistribution
from .ou import OUParams

QUAD_TOL = 1e-10
INVERSE_TOL = 1e-12


class NonMonotonePenalty(ValueError):
    pass


class UnreachablePenalty(ValueError):
    """No finite wait brings the expected end-of-epoch penalty to the target."""


class AgePenalty:
    """Increasing penalty g of the age of information."""

    supremum: float = math.inf

    def __call__(self, age):
        return self.evaluate(age)

    def evaluate(self, age):
        raise NotImplementedError

    def area(self, start, length):
        """Integral of g over ages [start, start + length]."""
        raise NotImplementedError

    def expected_end(self, ybar, x, dist: DelayDistribution):
        """E[g(ybar + x + Y)]."""
        raise NotImplementedError

    def wait_for_level(self, ybar, lam, dist: DelayDistribution):
        """[x : E[g(ybar + x + Y)] = lam]^+ ."""
        raise NotImplementedError


class MMSEPenalty(AgePenalty):
    def __init__(self, params: OUParams, ell: int):
        if ell < 1:
            raise ValueError("ell must be >= 1")
        self.params = params
        self.ell = ell
        self.c = params.steady_state_variance
        self.q = -math.expm1(-2 * ell * math.log(2.0))
        self.rate = 2.0 * params.theta
        self.floor = self.c * 2.0 ** (-2 * ell)
        self.supremum = self.c

    def __repr__(self):
        return f"MMSEPenalty(theta={self.params.theta}, sigma={self.params.sigma}, ell={self.ell})"

    def evaluate(self, age):
        age = np.asarray(age, dtype=float)
        if np.any(age < 0):
            raise ValueError("age must be non-negative")
        out = self.c * (1.0 - self.q * np.exp(-self.rate * age))
        return float(out) if out.ndim == 0 else out

    def area(self, start, length):
        start = np.asarray(start, dtype=float)
        length = np.asarray(length, dtype=float)
        out = self.c * (length + self.q / self.rate * np.exp(-self.rate * start)
                        * np.expm1(-self.rate * length))
        return float(out) if out.ndim == 0 else out

    def decay_moment(self, dist: DelayDistribution) -> float:
        """E[exp(-2 theta Y)]; the only delay statistic the closed forms need."""
        return dist.laplace(self.rate)

    def expected_end(self, ybar, x, dist):
        phi = self.decay_moment(dist)
        s = np.asarray(ybar, dtype=float) + np.asarray(x, dtype=float)
        out = self.c * (1.0 - self.q * np.exp(-self.rate * s) * phi)
        return float(out) if out.ndim == 0 else out

    def threshold_age(self, lam: float, dist: DelayDistribution) -> float:
        """Age T with E[h(T + Y)] = lam; waiting stops once ybar + w reaches T."""
        if lam >= self.c:
            raise UnreachablePenalty(f"lambda={lam} is not below the penalty supremum {self.c}")
        phi = self.decay_moment(dist)
        return math.log(self.c * self.q * phi / (self.c - lam)) / self.rate

    def wait_for_level(self, ybar, lam, dist):
        out = np.maximum(self.threshold_age(lam, dist) - np.asarray(ybar, dtype=float), 0.0)
        return float(out) if out.ndim == 0 else out


class CustomPenalty(AgePenalty):
    """User-supplied increasing penalty.

    Monotonicity is audited on a 1000-point grid over ``[0, audit_horizon]``
    at construction; a decrease raises :class:`NonMonotonePenalty`.
    """

    def __init__(self, fn: Callable[[float], float], audit_horizon: float = 100.0,
                 supremum: float = math.inf, audit_points: int = 1000):
        self.fn = fn
        self.supremum = supremum
        grid = np.linspace(0.0, audit_horizon, audit_points)
        vals = np.array([float(fn(a)) for a in grid])
        if not np.all(np.isfinite(vals)):
            raise NonMonotonePenalty("penalty is not finite on the audit grid")
        drops = np.flatnonzero(np.diff(vals) < 0)
        if len(drops):
            a = grid[drops[0]]
            raise NonMonotonePenalty(f"penalty decreases near age {a:.6g}")

    def __repr__(self):
        return f"CustomPenalty({getattr(self.fn, '__name__', self.fn)!r})"

    def evaluate(self, age):
        if np.ndim(age) == 0:
            if age < 0:
                raise ValueError("age must be non-negative")
            return float(self.fn(float(age)))
        age = np.asarray(age, dtype=float)
        if np.any(age < 0):
            raise ValueError("age must be non-negative")
        return np.array([float(self.fn(a)) for a in age.ravel()]).reshape(age.shape)

    def area(self, start, length):
        if np.ndim(start) == 0 and np.ndim(length) == 0:
            if length == 0:
                return 0.0
            val, _ = quad(self.fn, float(start), float(start + length), epsabs=QUAD_TOL,
                          epsrel=QUAD_TOL, limit=200)
            return val
        start, length = np.broadcast_arrays(np.asarray(start, float), np.asarray(length, float))
        return np.array([self.area(s, l) for s, l in zip(start.ravel(), length.ravel())]).reshape(start.shape)

    def expected_end(self, ybar, x, dist):
        if np.ndim(ybar) or np.ndim(x):
            ybar, x = np.broadcast_arrays(np.asarray(ybar, float), np.asarray(x, float))
            return np.array([self.expected_end(a, b, dist) for a, b in zip(ybar.ravel(), x.ravel())]).reshape(ybar.shape)
        vals = np.array([self.fn(ybar + x + y) for y in dist.support], dtype=float)
        return float(np.dot(dist.weights, vals))

    def wait_for_level(self, ybar, lam, dist):
        if np.ndim(ybar):
            return np.array([self.wait_for_level(y, lam, dist) for y in np.ravel(ybar)]).reshape(np.shape(ybar))
        if lam <= self.expected_end(ybar, 0.0, dist):
            return 0.0
        if lam >= self.supremum:
            raise UnreachablePenalty(f"lambda={lam} is not below the penalty supremum")
        lo, hi = 0.0, 1.0
        while self.expected_end(ybar, hi, dist) < lam:
            lo, hi = hi, 2.0 * hi
            if hi > 1e12:
                raise UnreachablePenalty(f"lambda={lam} not reached by any finite wait")
        while hi - lo > INVERSE_TOL * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            if self.expected_end(ybar, mid, dist) < lam:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


def mmse_penalty(params: OUParams, ell: int) -> MMSEPenalty:
    return MMSEPenalty(params, ell)


def evaluate(g: AgePenalty, age):
    return g.evaluate(age)


def expected_end_penalty(g: AgePenalty, ybar, x, dist: DelayDistribution):
    """E[g(ybar + x + Y)] for the starting age ``ybar`` and wait ``x``."""
    if np.any(np.asarray(x) < 0):
        raise ValueError("wait must be non-negative")
    return g.expected_end(ybar, x, dist)


def wait_for_level(g: AgePenalty, ybar, lam: float, dist: DelayDistribution):
    """Smallest non-negative wait whose expected end-of-epoch penalty reaches ``lam``."""
    if not math.isfinite(lam):
        raise ValueError("lambda must be finite")
    return g.wait_for_level(ybar, lam, dist)
