"""Experiment drivers: (ell, n) sweeps, beta sweeps, enhancement ratios, tracking, validation.

Every driver returns plain row lists; writing CSVs and figures is left to
:mod:`timely_ou.report`.
"""
from __future__ import annotations

import functools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .channel import (ChannelTooNoisy, CodeConfig, DelayDistribution, delay_distribution,
                      enhanced_delay, enhanced_saving, mds_success_probs, original_delay,
                      simulate_timeline_iir)
from .config import ExperimentConfig
from .ou import OUParams, make_rng, ou_paths
from .penalty import CustomPenalty, MMSEPenalty, NonMonotonePenalty
from .policy import (FRPolicy, brute_force_threshold, fr_mmse, fr_optimal_delta,
                     fr_zero_wait_check, solve_iir)
from .quantizer import Codebook, lloyd_fit, lloyd_train
from .sim import TrackingResult, simulate_fr, simulate_iir, simulate_tracking

log = logging.getLogger(__name__)

# independent sub-streams derived from the user seed
TRAIN_STREAM = 1
TRACK_STREAM = 2
VALIDATE_STREAM = 3


# --------------------------------------------------------------------------
# per-grid-point analytic evaluation


@dataclass(frozen=True)
class GridPoint:
    theta: float
    sigma: float
    epsilon: float
    Tb: float
    beta: float
    ell: int
    n: int
    enhanced: bool
    tail_tol: float = 1e-12
    max_support: int = 100_000
    bisection_tol: float = 1e-9
    bisection_max_iter: int = 200


@dataclass(frozen=True)
class PointResult:
    point: GridPoint
    mmse_iir: float
    mmse_fr: float
    note: str = ""

    @property
    def ok(self) -> bool:
        return not self.note


@functools.lru_cache(maxsize=200_000)
def evaluate_point(pt: GridPoint) -> PointResult:
    """Analytic long-term average MMSE of IIR and FR at one grid point.

    IIR uses the optimal threshold wait on the (enhanced or original) delay
    law; FR uses delta* when enhanced and delta = beta otherwise. A point
    whose delay law cannot be built is returned with NaNs and a note.
    """
    if pt.n < pt.ell:
        return PointResult(pt, math.nan, math.nan, f"skipped: n={pt.n} < ell={pt.ell}")
    params = OUParams(pt.theta, pt.sigma)
    cfg = CodeConfig(pt.ell, pt.n, pt.Tb, pt.beta)
    try:
        _, dist = delay_distribution(cfg, pt.epsilon, pt.enhanced, pt.tail_tol, pt.max_support)
    except ChannelTooNoisy as exc:
        return PointResult(pt, math.nan, math.nan, f"skipped: {exc}")
    pol = solve_iir(MMSEPenalty(params, pt.ell), dist, pt.bisection_tol, pt.bisection_max_iter)
    p0 = mds_success_probs(cfg, pt.epsilon, 0).p0
    delta = fr_optimal_delta(cfg) if pt.enhanced else cfg.beta
    return PointResult(pt, pol.lambda_star, fr_mmse(params, cfg, p0, delta))


def parallel_map(fn: Callable, items: list, jobs: int = 1) -> list:
    """Order-preserving map; a process pool when ``jobs`` > 1."""
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def _points(config: ExperimentConfig, epsilon: float, beta: float, enhanced: bool) -> list[GridPoint]:
    return [GridPoint(config.theta, config.sigma, epsilon, config.Tb, float(beta), ell, n, enhanced,
                      config.tail_tol, config.max_support, config.bisection_tol,
                      config.bisection_max_iter)
            for ell, n in config.grid()]


def _argmin(results: list[PointResult], attr: str) -> PointResult | None:
    ok = [r for r in results if r.ok]
    if not ok:
        return None
    # ties resolve to the smallest (ell, n), matching grid order
    return min(ok, key=lambda r: getattr(r, attr))


# --------------------------------------------------------------------------
# (ell, n) sweep


SWEEP_LN_HEADER = ["ell", "n_best_iir", "mmse_iir", "n_best_fr", "mmse_fr"]
SWEEP_GRID_HEADER = ["ell", "n", "mmse_iir", "mmse_fr", "note"]


@dataclass
class SweepLN:
    epsilon: float
    grid: list[PointResult]
    per_ell: list[list]
    best_iir: tuple[int, int] | None
    best_fr: tuple[int, int] | None
    mmse_iir: float
    mmse_fr: float
    seconds: float

    def notes(self) -> list[str]:
        return [f"ell={r.point.ell} n={r.point.n}: {r.note}" for r in self.grid if not r.ok]


def sweep_ln(config: ExperimentConfig, jobs: int | None = None) -> list[SweepLN]:
    """Minimise the analytic MMSE over n for every ell, once per epsilon."""
    jobs = config.jobs if jobs is None else jobs
    out = []
    for eps in config.epsilons:
        t0 = time.perf_counter()
        results = parallel_map(evaluate_point, _points(config, eps, config.beta, config.enhanced), jobs)
        per_ell = []
        for ell in range(config.ell_range[0], config.ell_range[1] + 1):
            rows = [r for r in results if r.point.ell == ell]
            bi, bf = _argmin(rows, "mmse_iir"), _argmin(rows, "mmse_fr")
            per_ell.append([ell,
                            bi.point.n if bi else "", bi.mmse_iir if bi else math.nan,
                            bf.point.n if bf else "", bf.mmse_fr if bf else math.nan])
        bi, bf = _argmin(results, "mmse_iir"), _argmin(results, "mmse_fr")
        out.append(SweepLN(
            eps, results, per_ell,
            (bi.point.ell, bi.point.n) if bi else None,
            (bf.point.ell, bf.point.n) if bf else None,
            bi.mmse_iir if bi else math.nan, bf.mmse_fr if bf else math.nan,
            time.perf_counter() - t0))
    return out


# --------------------------------------------------------------------------
# beta sweep and enhancement ratio


SWEEP_BETA_HEADER = ["beta", "mmse_iir", "ell_iir", "n_iir", "mmse_fr", "ell_fr", "n_fr"]
ENHANCE_HEADER = ["beta", "mmse_iir_enhanced", "mmse_iir_original", "ratio_iir",
                  "mmse_fr_enhanced", "mmse_fr_original", "ratio_fr"]


@dataclass
class BetaSweep:
    epsilon: float
    enhanced: bool
    rows: list[list]
    crossover: float | None


def _best_over_grid(config, eps, beta, enhanced, jobs):
    results = parallel_map(evaluate_point, _points(config, eps, beta, enhanced), jobs)
    bi, bf = _argmin(results, "mmse_iir"), _argmin(results, "mmse_fr")
    return bi, bf


def _optimised_curve(config: ExperimentConfig, eps: float, enhanced: bool, jobs: int):
    curve = []
    for beta in config.betas:
        bi, bf = _best_over_grid(config, eps, float(beta), enhanced, jobs)
        curve.append((float(beta), bi, bf))
    return curve


def crossover_beta(betas, mmse_iir, mmse_fr) -> float | None:
    """First beta on the grid where FR is no worse than IIR, or None."""
    for b, i, f in zip(betas, mmse_iir, mmse_fr):
        if f <= i:
            return float(b)
    return None


def sweep_beta(config: ExperimentConfig, jobs: int | None = None) -> list[BetaSweep]:
    """Per beta, the best IIR and FR MMSE over the (ell, n) grid, and the crossover."""
    jobs = config.jobs if jobs is None else jobs
    out = []
    for eps in config.epsilons:
        rows = []
        for beta, bi, bf in _optimised_curve(config, eps, config.enhanced, jobs):
            rows.append([beta,
                         bi.mmse_iir if bi else math.nan, bi.point.ell if bi else "", bi.point.n if bi else "",
                         bf.mmse_fr if bf else math.nan, bf.point.ell if bf else "", bf.point.n if bf else ""])
        cross = crossover_beta([r[0] for r in rows], [r[1] for r in rows], [r[4] for r in rows])
        out.append(BetaSweep(eps, config.enhanced, rows, cross))
    return out


@dataclass
class EnhancementStudy:
    epsilon: float
    rows: list[list]

    @property
    def peak_iir(self) -> tuple[float, float]:
        """(max ratio, beta at max) for IIR."""
        k = int(np.nanargmax([r[3] for r in self.rows]))
        return self.rows[k][3], self.rows[k][0]

    @property
    def peak_fr(self) -> tuple[float, float]:
        k = int(np.nanargmax([r[6] for r in self.rows]))
        return self.rows[k][6], self.rows[k][0]


def enhancement_ratio(config: ExperimentConfig, jobs: int | None = None) -> list[EnhancementStudy]:
    """1 - mmse_enhanced / mmse_original per beta, each side optimised over (ell, n)."""
    jobs = config.jobs if jobs is None else jobs
    out = []
    for eps in config.epsilons:
        enh = _optimised_curve(config, eps, True, jobs)
        orig = _optimised_curve(config, eps, False, jobs)
        rows = []
        for (beta, ei, ef), (_, oi, of) in zip(enh, orig):
            mi_e = ei.mmse_iir if ei else math.nan
            mi_o = oi.mmse_iir if oi else math.nan
            mf_e = ef.mmse_fr if ef else math.nan
            mf_o = of.mmse_fr if of else math.nan
            rows.append([beta, mi_e, mi_o, 1.0 - mi_e / mi_o, mf_e, mf_o, 1.0 - mf_e / mf_o])
        out.append(EnhancementStudy(eps, rows))
    return out


# --------------------------------------------------------------------------
# tracking


TRACK_SUMMARY_HEADER = ["scheme", "seeds", "mean_mse", "std_mse", "stderr_mse", "analytic_mse"]
TRACK_SEEDS_HEADER = ["seed_index", "scheme", "empirical_mse"]


@dataclass
class TrackingStudy:
    codebook: Codebook
    first: dict[str, TrackingResult]
    per_seed: dict[str, list[float]]
    analytic: dict[str, float]

    def summary_rows(self) -> list[list]:
        rows = []
        for scheme, vals in self.per_seed.items():
            v = np.asarray(vals)
            sd = float(v.std(ddof=1)) if len(v) > 1 else 0.0
            rows.append([scheme, len(v), float(v.mean()), sd, sd / math.sqrt(len(v)),
                         self.analytic[scheme]])
        return rows


def tracking_codebook(config: ExperimentConfig) -> Codebook:
    """Load the configured codebook, or train one on fresh stationary paths."""
    if config.codebook:
        cb = Codebook.read_csv(config.codebook)
        if len(cb.levels) != 2**config.ell:
            raise ValueError(f"codebook {config.codebook} has {len(cb.levels)} levels, "
                             f"expected {2**config.ell}")
        return cb
    if not config.train:
        raise ValueError("no codebook given and training is disabled")
    params = OUParams(config.theta, config.sigma)
    paths = ou_paths(params, config.train_horizon, config.Tb, config.train_paths,
                     [config.seed, TRAIN_STREAM])
    return lloyd_train(paths, config.ell, config.lloyd_max_iter, config.lloyd_tol,
                       method=config.training_method)


def track(config: ExperimentConfig, codebook: Codebook | None = None) -> TrackingStudy:
    """Run the IIR and FR tracking experiment over ``config.seeds`` sample paths.

    Both schemes see the same OU path for a given seed.
    """
    params = OUParams(config.theta, config.sigma)
    cfg = CodeConfig(config.ell, config.n, config.Tb, config.beta)
    eps = config.epsilons[0]
    cb = tracking_codebook(config) if codebook is None else codebook
    sp, dist = delay_distribution(cfg, eps, config.enhanced, config.tail_tol, config.max_support)
    pol = solve_iir(MMSEPenalty(params, cfg.ell), dist, config.bisection_tol, config.bisection_max_iter)
    delta = fr_optimal_delta(cfg) if config.enhanced else cfg.beta
    analytic = {"iir": pol.lambda_star, "fr": fr_mmse(params, cfg, sp.p0, delta)}

    seeds = np.random.SeedSequence([config.seed, TRACK_STREAM]).spawn(config.seeds)
    first: dict[str, TrackingResult] = {}
    per_seed: dict[str, list[float]] = {"iir": [], "fr": []}
    for k, s in enumerate(seeds):
        iir = simulate_tracking("iir", cb, sp, cfg, params, config.horizon, s, config.enhanced,
                                policy=pol)
        fr = simulate_tracking("fr", cb, sp, cfg, params, config.horizon, s, config.enhanced,
                               path=iir.truth_path)
        per_seed["iir"].append(iir.empirical_mse)
        per_seed["fr"].append(fr.empirical_mse)
        if k == 0:
            first = {"iir": iir, "fr": fr}
    return TrackingStudy(cb, first, per_seed, analytic)


# --------------------------------------------------------------------------
# validation suite


@dataclass
class Check:
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: measured={self.measured:.3e} tolerance={self.tolerance:.1e} {self.detail}".rstrip()


VALIDATE_HEADER = ["check", "status", "measured", "tolerance", "detail"]
INJECTIONS = ("tail-drop", "nonmonotone")


def _drop_tail(dist: DelayDistribution) -> DelayDistribution:
    # discard the upper half of the support without booking the lost mass
    keep = max(1, len(dist.support) // 2)
    return DelayDistribution(dist.support[:keep], dist.pmf[:keep], dist.truncated_mass,
                             dist.ir_bits[:keep] if dist.ir_bits is not None else None)


def _sample_penalty(age: float) -> float:
    return math.log1p(age)


def _bumpy_penalty(age: float) -> float:
    return math.log1p(age) - 0.5 * math.exp(-((age - 3.0) ** 2))


def validate(config: ExperimentConfig, inject: tuple[str, ...] = ()) -> list[Check]:
    """Run the invariant and oracle suite; ``inject`` plants known faults."""
    bad = set(inject) - set(INJECTIONS)
    if bad:
        raise ValueError(f"unknown injections {sorted(bad)}; choose from {INJECTIONS}")
    params = OUParams(config.theta, config.sigma)
    eps = config.epsilons[0]
    cfg = CodeConfig(config.ell, config.n, config.Tb, config.beta)
    checks: list[Check] = []
    rng = make_rng([config.seed, VALIDATE_STREAM])

    # delay laws for both IIR modes
    sp, enh = delay_distribution(cfg, eps, True, config.tail_tol, config.max_support)
    _, orig = delay_distribution(cfg, eps, False, config.tail_tol, config.max_support)
    laws = {"enhanced": enh, "original": orig}
    if "tail-drop" in inject:
        laws = {k: _drop_tail(v) for k, v in laws.items()}
    for name, d in laws.items():
        checks.append(Check(f"pmf mass conservation ({name} IIR)", d.mass_defect, 1e-12,
                            d.mass_defect <= 1e-12, f"support={len(d.support)}"))

    # stochastic dominance: P(enhanced <= y) >= P(original <= y) everywhere
    ys = np.union1d(enh.support, orig.support)
    cdf_e = np.cumsum(enh.pmf)[np.searchsorted(enh.support, ys, side="right") - 1]
    cdf_o = np.where(ys >= orig.support[0],
                     np.cumsum(orig.pmf)[np.maximum(np.searchsorted(orig.support, ys, side="right") - 1, 0)],
                     0.0)
    gap = float(np.max(cdf_o - cdf_e))
    checks.append(Check("enhanced delay stochastically dominated by original", max(gap, 0.0), 1e-12,
                        gap <= 1e-12))

    # inverse round trip for the MMSE and a custom penalty
    mmse = MMSEPenalty(params, cfg.ell)
    try:
        custom = CustomPenalty(_bumpy_penalty if "nonmonotone" in inject else _sample_penalty)
        checks.append(Check("custom penalty monotonicity audit", 0.0, 0.0, True))
    except NonMonotonePenalty as exc:
        custom = CustomPenalty(_sample_penalty)
        checks.append(Check("custom penalty monotonicity audit", 1.0, 0.0, False, str(exc)))
    worst = 0.0
    for g in (mmse, custom):
        y0 = enh.support[:5]
        lo = float(np.max(g.expected_end(y0, 0.0, enh)))
        hi = g.supremum if math.isfinite(g.supremum) else lo + 10.0
        for lam in np.linspace(lo, hi, 12)[1:-1]:
            w = g.wait_for_level(y0, lam, enh)
            back = g.expected_end(y0, w, enh)
            worst = max(worst, float(np.max(np.abs(back - lam) / abs(lam))))
    checks.append(Check("penalty inverse round trip", worst, 1e-10, worst <= 1e-10))

    # threshold structure of the optimal IIR policy, at the configured point and in a
    # regime (short code, long processing, noisy channel) where waiting is optimal
    pol = solve_iir(mmse, enh, config.bisection_tol, config.bisection_max_iter)
    wait_cfg = CodeConfig(2, 2, config.Tb, 20 * config.Tb)
    _, wait_law = delay_distribution(wait_cfg, 0.45, False, config.tail_tol, config.max_support)
    wait_pen = MMSEPenalty(OUParams(0.05, config.sigma), 2)
    cases = [("configured", mmse, enh, pol), ("waiting regime", wait_pen, wait_law,
              solve_iir(wait_pen, wait_law, config.bisection_tol, config.bisection_max_iter))]
    for label, g, law, p in cases:
        waits = np.atleast_1d(p.wait(law.support))
        struct = float(np.max(np.abs(waits - np.maximum(p.threshold - law.support, 0.0))))
        mono = bool(np.all(np.diff(waits) <= 0))
        checks.append(Check(f"threshold structure of optimal wait ({label})", struct, 1e-12,
                            struct <= 1e-12 and mono,
                            f"threshold={p.threshold:.6g} waiting_states={int(np.sum(waits > 0))}"))

    # Lloyd monotone per iteration
    train = ou_paths(params, min(config.train_horizon, 200.0), config.Tb, 4, [config.seed, TRAIN_STREAM])
    fit = lloyd_fit(np.concatenate([p.values for p in train]), cfg.ell, config.lloyd_max_iter,
                    config.lloyd_tol)
    h = np.asarray(fit.mse_history)
    rise = float(np.max(np.diff(h) / h[:-1])) if len(h) > 1 else 0.0
    checks.append(Check("Lloyd MSE monotone per iteration", max(rise, 0.0), 1e-12, rise <= 1e-12,
                        f"iterations={fit.iterations}"))

    # delay-saving arithmetic against the timeline, exact
    off = 0
    for ratio in (0.2, 0.5, 1, 1.5, 2, 3.7):
        c = CodeConfig(cfg.ell, cfg.n, cfg.Tb, ratio * cfg.Tb)
        for r in range(0, 21):
            e = simulate_timeline_iir(c, True, r=r).delay
            o = simulate_timeline_iir(c, False, r=r).delay
            off += (e != enhanced_delay(r, c)) + (o != original_delay(r, c)) + (o - e != enhanced_saving(r, c))
    checks.append(Check("enhanced delay saving exact on timeline", float(off), 0.0, off == 0))

    # Dinkelbach root against brute-force threshold search
    worst = 0.0
    for _, g, law, p in cases:
        span = max(4.0 * (p.threshold - law.minimum), 1.0)
        brute, _ = brute_force_threshold(g, law, span=span, points=2000)
        worst = max(worst, abs(brute - p.lambda_star) / p.lambda_star)
    checks.append(Check("bisection root vs brute-force threshold", worst, 1e-4, worst <= 1e-4))

    # FR: zero wait and just-in-time
    p0 = sp.p0
    arg = fr_zero_wait_check(mmse, cfg, p0, np.linspace(0.0, 10.0 * cfg.nbar, 200))
    checks.append(Check("FR zero-wait is optimal", arg, 0.0, arg == 0.0))
    dstar = fr_optimal_delta(cfg)
    base = fr_mmse(params, cfg, p0, dstar)
    worst_jit = max(base - fr_mmse(params, cfg, p0, d) for d in np.linspace(dstar, cfg.beta, 100))
    checks.append(Check("FR just-in-time offset is optimal", max(worst_jit, 0.0), 1e-15, worst_jit <= 1e-15))

    # Monte Carlo against the closed forms
    st = simulate_iir(pol, enh, mmse, config.epochs, rng)
    z = abs(st.average - pol.lambda_star) / st.stderr
    checks.append(Check("IIR Monte Carlo vs optimum (standard errors)", z, 3.0, z <= 3.0,
                        f"sim={st.average:.6g} analytic={pol.lambda_star:.6g}"))
    frp = FRPolicy(dstar, cfg)
    st = simulate_fr(frp, p0, cfg, mmse, config.epochs, rng)
    z = abs(st.average - base) / st.stderr
    checks.append(Check("FR Monte Carlo vs closed form (standard errors)", z, 3.0, z <= 3.0,
                        f"sim={st.average:.6g} analytic={base:.6g}"))
    return checks
