"""Experiment configuration: one JSON document, every tolerance surfaced."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class ExperimentConfig:
    theta: float = 0.01
    sigma: float = 1.0
    epsilons: tuple[float, ...] = (0.1,)
    Tb: float = 0.05
    beta: float = 0.15
    ell_range: tuple[int, int] = (1, 10)
    # n - ell; every codeword corrects at least one bit error by default
    redundancy_range: tuple[int, int] = (2, 20)
    scheme: str = "iir"
    enhanced: bool = True
    # for sweep-beta / enhance-ratio: [start, stop] inclusive with step
    beta_grid: tuple[float, float, float] = (0.0, 2.0, 0.01)
    # tracking experiment
    ell: int = 5
    n: int = 7
    horizon: float = 500.0
    seeds: int = 1
    seed: int = 0
    train: bool = True
    codebook: str | None = None
    train_paths: int = 1000
    train_horizon: float = 500.0
    training_method: str = "pooled"
    lloyd_max_iter: int = 1000
    lloyd_tol: float = 1e-8
    # validation / Monte Carlo
    epochs: int = 100_000
    # numerics
    tail_tol: float = 1e-12
    max_support: int = 100_000
    bisection_tol: float = 1e-9
    bisection_max_iter: int = 200
    output_dir: str = "out"
    jobs: int = 1

    def __post_init__(self):
        if isinstance(self.epsilons, (int, float)):
            self.epsilons = (float(self.epsilons),)
        self.epsilons = tuple(float(e) for e in self.epsilons)
        self.ell_range = tuple(int(v) for v in self.ell_range)
        self.redundancy_range = tuple(int(v) for v in self.redundancy_range)
        self.beta_grid = tuple(float(v) for v in self.beta_grid)
        self.validate()

    def validate(self) -> None:
        errs = []
        if not self.theta > 0:
            errs.append("theta must be positive")
        if not self.sigma > 0:
            errs.append("sigma must be positive")
        if not self.epsilons:
            errs.append("at least one epsilon is required")
        for e in self.epsilons:
            if not 0 < e < 0.5:
                errs.append(f"epsilon {e} outside (0, 1/2)")
        if not self.Tb > 0:
            errs.append("Tb must be positive")
        if not self.beta >= 0:
            errs.append("beta must be non-negative")
        lo, hi = self.ell_range
        if not 1 <= lo <= hi:
            errs.append(f"ell_range {self.ell_range} must satisfy 1 <= lo <= hi")
        rlo, rhi = self.redundancy_range
        if not 0 <= rlo <= rhi:
            errs.append(f"redundancy_range {self.redundancy_range} must satisfy 0 <= lo <= hi")
        b0, b1, step = self.beta_grid
        if not (0 <= b0 <= b1 and step > 0):
            errs.append(f"beta_grid {self.beta_grid} must be (start <= stop, step > 0)")
        if self.scheme not in ("iir", "fr"):
            errs.append("scheme must be 'iir' or 'fr'")
        if self.n < self.ell or self.ell < 1:
            errs.append("tracking needs 1 <= ell <= n")
        if self.training_method not in ("pooled", "average"):
            errs.append("training_method must be 'pooled' or 'average'")
        if self.seeds < 1 or self.epochs < 1 or self.jobs < 1:
            errs.append("seeds, epochs and jobs must be >= 1")
        if not self.horizon > 0 or not self.train_horizon > 0:
            errs.append("horizons must be positive")
        if errs:
            raise ValueError("invalid configuration: " + "; ".join(errs))

    @property
    def betas(self) -> np.ndarray:
        b0, b1, step = self.beta_grid
        k = int(round((b1 - b0) / step))
        return np.round(b0 + step * np.arange(k + 1), 12)

    def grid(self) -> list[tuple[int, int]]:
        lo, hi = self.ell_range
        rlo, rhi = self.redundancy_range
        return [(ell, ell + r) for ell in range(lo, hi + 1) for r in range(rlo, rhi + 1)]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        if "epsilon" in data:
            data["epsilons"] = data.pop("epsilon")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
