"""Ornstein-Uhlenbeck process: exact transitions, stationary paths, moments."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

# Paths are reproducible bit-for-bit: PCG64 seeded through SeedSequence.
GENERATOR = "numpy.random.PCG64"


def make_rng(seed: int | np.random.SeedSequence | None) -> np.random.Generator:
    """Seeded generator with a fixed bit generator (PCG64)."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def spawn_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(count)


@dataclass(frozen=True)
class OUParams:
    theta: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.theta) and self.theta > 0):
            raise ValueError(f"theta must be positive and finite, got {self.theta}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")

    @property
    def steady_state_variance(self) -> float:
        return self.sigma**2 / (2.0 * self.theta)


def steady_state_variance(params: OUParams) -> float:
    """sigma^2 / (2 theta)."""
    return params.steady_state_variance


def transition_moments(x, dt, params: OUParams):
    """Conditional mean and variance of X_{t+dt} given X_t = x."""
    decay = np.exp(-params.theta * dt)
    var = params.steady_state_variance * -np.expm1(-2.0 * params.theta * dt)
    return x * decay, var


def ou_step(x, dt, params: OUParams, z):
    """Exact OU transition over ``dt`` driven by the standard normal draw ``z``.

    Works elementwise on arrays. ``dt == 0`` returns ``x`` unchanged.
    """
    x = np.asarray(x, dtype=float)
    dt = np.asarray(dt, dtype=float)
    if np.any(~np.isfinite(x)):
        raise ValueError("state must be finite")
    if np.any(dt < 0):
        raise ValueError("dt must be non-negative")
    mean, var = transition_moments(x, dt, params)
    out = mean + np.sqrt(var) * z
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SamplePath:
    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if len(self.values) == 0:
            raise ValueError("a sample path needs at least one value")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.values))

    def value_at(self, t) -> np.ndarray:
        """Path value at the grid point nearest to ``t``."""
        idx = np.rint((np.asarray(t, dtype=float) - self.t0) / self.dt).astype(int)
        return self.values[np.clip(idx, 0, len(self.values) - 1)]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x"])
            for t, x in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(x))])

    @classmethod
    def read_csv(cls, path: str | Path) -> "SamplePath":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        t = np.array([float(r["t"]) for r in rows])
        x = np.array([float(r["x"]) for r in rows])
        dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
        return cls(float(t[0]), dt, x)


def _ar1_filter(params: OUParams, dt: float, x0: np.ndarray, z: np.ndarray) -> np.ndarray:
    # x[k] = a x[k-1] + s z[k]; same arithmetic as repeated ou_step, done by lfilter.
    a = math.exp(-params.theta * dt)
    s = math.sqrt(params.steady_state_variance * -math.expm1(-2.0 * params.theta * dt))
    drive = s * z
    zi = (a * x0)[..., None]
    rest, _ = lfilter([1.0], [1.0, -a], drive, axis=-1, zi=zi)
    return np.concatenate([x0[..., None], rest], axis=-1)


def _n_steps(horizon: float, dt: float) -> int:
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if not dt > 0:
        raise ValueError("dt must be positive")
    # guard against 500/0.05 = 10000.000000000002
    return int(math.ceil(horizon / dt - 1e-9))


def ou_path(params: OUParams, horizon: float, dt: float, seed) -> SamplePath:
    """Stationary OU path on a uniform grid: X_0 ~ N(0, sigma^2/2theta), then exact steps.

    Returns ``ceil(horizon/dt) + 1`` states.
    """
    steps = _n_steps(horizon, dt)
    rng = make_rng(seed)
    x0 = rng.standard_normal() * math.sqrt(params.steady_state_variance)
    z = rng.standard_normal(steps)
    values = _ar1_filter(params, dt, np.array(x0), z)
    return SamplePath(0.0, dt, values)


def ou_paths(params: OUParams, horizon: float, dt: float, count: int, seed: int) -> list[SamplePath]:
    """``count`` independent stationary paths, one spawned stream per path."""
    return [ou_path(params, horizon, dt, s) for s in spawn_seeds(seed, count)]
