"""Quantization error model and an empirical Lloyd-Max scalar quantizer."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ou import OUParams, SamplePath

log = logging.getLogger(__name__)


def rd_quantizer_mse(params: OUParams, ell: int) -> float:
    """Steady-state mean square quantization error (sigma^2/2theta) 2^(-2 ell)."""
    if ell < 1:
        raise ValueError("need at least one quantization bit")
    return params.steady_state_variance * 2.0 ** (-2 * ell)


@dataclass(frozen=True)
class Codebook:
    levels: np.ndarray
    boundaries: np.ndarray = field(default=None)

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        if levels.ndim != 1 or len(levels) < 1:
            raise ValueError("levels must be a non-empty 1-d sequence")
        if np.any(np.diff(levels) <= 0):
            raise ValueError("levels must be strictly increasing")
        object.__setattr__(self, "levels", levels)
        if self.boundaries is None:
            object.__setattr__(self, "boundaries", 0.5 * (levels[1:] + levels[:-1]))
        else:
            object.__setattr__(self, "boundaries", np.asarray(self.boundaries, dtype=float))

    @property
    def bits(self) -> int:
        return int(round(np.log2(len(self.levels))))

    def index(self, x) -> np.ndarray:
        # side="left": a value exactly on a boundary maps to the lower cell
        return np.searchsorted(self.boundaries, x, side="left")

    def reconstruct(self, x) -> np.ndarray:
        return self.levels[self.index(x)]

    def mse(self, samples) -> float:
        samples = np.asarray(samples, dtype=float)
        return float(np.mean((samples - self.reconstruct(samples)) ** 2))

    def write_csv(self, path: str | Path) -> None:
        lower = np.concatenate([[-np.inf], self.boundaries])
        upper = np.concatenate([self.boundaries, [np.inf]])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "level", "lower_boundary", "upper_boundary"])
            for k, (lv, lo, hi) in enumerate(zip(self.levels, lower, upper)):
                w.writerow([k, repr(float(lv)), repr(float(lo)), repr(float(hi))])

    @classmethod
    def read_csv(cls, path: str | Path) -> "Codebook":
        with open(path, newline="") as fh:
            rows = sorted(csv.DictReader(fh), key=lambda r: int(r["index"]))
        levels = [float(r["level"]) for r in rows]
        bounds = [float(r["upper_boundary"]) for r in rows[:-1]]
        return cls(np.array(levels), np.array(bounds))


def quantize(cb: Codebook, x: float) -> tuple[int, float]:
    """Nearest level to ``x``; ties go to the lower index."""
    if not np.isfinite(x):
        raise ValueError("cannot quantize a non-finite value")
    k = int(cb.index(x))
    return k, float(cb.levels[k])


@dataclass
class LloydFit:
    codebook: Codebook
    mse_history: list[float]
    iterations: int
    converged: bool


def _cell_stats(sorted_x: np.ndarray, csum: np.ndarray, csum2: np.ndarray, bounds: np.ndarray):
    edges = np.concatenate([[0], np.searchsorted(sorted_x, bounds, side="right"), [len(sorted_x)]])
    counts = np.diff(edges)
    sums = csum[edges[1:]] - csum[edges[:-1]]
    sums2 = csum2[edges[1:]] - csum2[edges[:-1]]
    return edges, counts, sums, sums2


def lloyd_fit(samples, ell: int, max_iter: int = 1000, tol: float = 1e-8,
              init: np.ndarray | None = None) -> LloydFit:
    """Lloyd iteration on one training set.

    Alternates the nearest-neighbour and centroid conditions until no level
    moves by more than ``tol`` times the data spread. Training MSE is
    recorded after every centroid update and never increases.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    k = 2**ell
    if len(np.unique(x)) < k:
        raise ValueError(f"need at least {k} distinct training values for {ell} bits")
    csum = np.concatenate([[0.0], np.cumsum(x)])
    csum2 = np.concatenate([[0.0], np.cumsum(x * x)])
    scale = max(x[-1] - x[0], np.finfo(float).tiny)

    if init is None:
        levels = np.quantile(x, (np.arange(k) + 0.5) / k)
    else:
        levels = np.sort(np.asarray(init, dtype=float))
    levels = _dedupe(levels, x)

    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        bounds = 0.5 * (levels[1:] + levels[:-1])
        edges, counts, sums, sums2 = _cell_stats(x, csum, csum2, bounds)
        empty = counts == 0
        new = np.where(empty, levels, sums / np.maximum(counts, 1))
        if np.any(empty):
            new = _reseed_empty(new, empty, counts, edges, x)
        new = np.sort(new)
        # distortion of the updated levels under the old partition
        err = np.sum(sums2 - 2 * new * sums + counts * new**2) / len(x)
        history.append(float(err))
        moved = np.max(np.abs(new - levels))
        levels = new
        if moved <= tol * scale:
            converged = True
            break
    levels = _dedupe(levels, x)
    return LloydFit(Codebook(levels), history, it, converged)


def _dedupe(levels: np.ndarray, x: np.ndarray) -> np.ndarray:
    # strictly increasing levels are required; nudge ties apart by a data-scale epsilon
    levels = np.sort(levels)
    eps = 1e-12 * max(1.0, float(np.max(np.abs(x))))
    for i in range(1, len(levels)):
        if levels[i] <= levels[i - 1]:
            levels[i] = levels[i - 1] + eps
    return levels


def _reseed_empty(levels, empty, counts, edges, x):
    """Move each empty level to the midpoint of the most populated cell's data range."""
    levels = levels.copy()
    counts = counts.copy()
    for k in np.flatnonzero(empty):
        big = int(np.argmax(counts))
        lo, hi = x[edges[big]], x[edges[big + 1] - 1]
        levels[k] = 0.5 * (lo + hi)
        counts[big] //= 2
        log.debug("re-seeded empty Lloyd cell %d inside cell %d", k, big)
    return levels


def average_codebooks(books: Iterable[Codebook]) -> Codebook:
    """Element-wise average of sorted levels; boundaries are midpoints of the averages."""
    stack = np.vstack([np.sort(b.levels) for b in books])
    return Codebook(stack.mean(axis=0))


def lloyd_train(training: Sequence[SamplePath] | Sequence[np.ndarray], ell: int,
                max_iter: int = 1000, tol: float = 1e-8, method: str = "average") -> Codebook:
    """Train a codebook on a set of sample paths.

    ``method="average"`` fits one Lloyd codebook per path and averages the
    sorted levels element-wise. ``method="pooled"`` runs a single Lloyd fit
    on all paths' samples together. A single slow-mixing path only visits
    part of the stationary range, so the averaged codebook under-covers the
    tails; the pooled fit approaches the Lloyd-Max quantizer of the
    stationary marginal.
    """
    if len(training) == 0:
        raise ValueError("empty training set")
    arrays = [p.values if isinstance(p, SamplePath) else np.asarray(p, dtype=float) for p in training]
    if method == "pooled":
        return lloyd_fit(np.concatenate(arrays), ell, max_iter=max_iter, tol=tol).codebook
    if method != "average":
        raise ValueError(f"unknown training method {method!r}")
    return average_codebooks(lloyd_fit(a, ell, max_iter=max_iter, tol=tol).codebook for a in arrays)
