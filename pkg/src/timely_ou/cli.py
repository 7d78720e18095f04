"""Command-line driver: ``timely-ou <subcommand> [--config F] [--seed S] [--out DIR] [--jobs K]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .config import ExperimentConfig
from .report import Figure, Series, emit, eps_tag, write_rows

log = logging.getLogger("timely_ou")


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = args.out
    if args.jobs is not None:
        changes["jobs"] = args.jobs
    cfg = cfg.replace(**changes) if changes else cfg
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    return cfg


def cmd_sweep_ln(cfg: ExperimentConfig, draw: bool) -> int:
    out = Path(cfg.output_dir)
    series = []
    for res in ex.sweep_ln(cfg):
        tag = eps_tag(res.epsilon)
        write_rows(out / f"sweep_ln_{tag}.csv", ex.SWEEP_LN_HEADER, res.per_ell)
        write_rows(out / f"sweep_ln_grid_{tag}.csv", ex.SWEEP_GRID_HEADER,
                   [[r.point.ell, r.point.n, r.mmse_iir, r.mmse_fr, r.note] for r in res.grid])
        series += [Series(f"sweep_ln_{tag}.csv", "ell", "mmse_iir", f"IIR eps={res.epsilon:g}", "o-"),
                   Series(f"sweep_ln_{tag}.csv", "ell", "mmse_fr", f"FR eps={res.epsilon:g}", "s--")]
        print(f"eps={res.epsilon:g}: IIR best (ell,n)={res.best_iir} mmse={res.mmse_iir:.6g}; "
              f"FR best (ell,n)={res.best_fr} mmse={res.mmse_fr:.6g}; {res.seconds:.2f}s")
        for note in res.notes():
            print(f"  note: {note}")
    emit(Figure("sweep_ln", "quantization bits ell", "long-term average MMSE (best n)", series,
                title=f"theta={cfg.theta:g} beta={cfg.beta:g}", logy=True), out, draw)
    return 0


def cmd_sweep_beta(cfg: ExperimentConfig, draw: bool) -> int:
    out = Path(cfg.output_dir)
    series, marks, summary = [], [], []
    for res in ex.sweep_beta(cfg):
        tag = eps_tag(res.epsilon)
        write_rows(out / f"sweep_beta_{tag}.csv", ex.SWEEP_BETA_HEADER, res.rows)
        series += [Series(f"sweep_beta_{tag}.csv", "beta", "mmse_iir", f"IIR eps={res.epsilon:g}", "-"),
                   Series(f"sweep_beta_{tag}.csv", "beta", "mmse_fr", f"FR eps={res.epsilon:g}", "--")]
        summary.append([res.epsilon, "" if res.crossover is None else res.crossover])
        if res.crossover is not None:
            row = next(r for r in res.rows if r[0] == res.crossover)
            marks.append((res.crossover, row[4], f"beta_sw={res.crossover:g}"))
        print(f"eps={res.epsilon:g}: crossover beta_sw="
              f"{'none in range' if res.crossover is None else f'{res.crossover:g}'}")
    write_rows(out / "crossover.csv", ["epsilon", "beta_sw"], summary)
    emit(Figure("sweep_beta", "processing time beta", "long-term average MMSE", series,
                title=f"theta={cfg.theta:g}", marks=marks), out, draw)
    return 0


def cmd_enhance_ratio(cfg: ExperimentConfig, draw: bool) -> int:
    out = Path(cfg.output_dir)
    series, peaks = [], []
    for res in ex.enhancement_ratio(cfg):
        tag = eps_tag(res.epsilon)
        write_rows(out / f"enhance_ratio_{tag}.csv", ex.ENHANCE_HEADER, res.rows)
        series += [Series(f"enhance_ratio_{tag}.csv", "beta", "ratio_iir", f"IIR eps={res.epsilon:g}", "-"),
                   Series(f"enhance_ratio_{tag}.csv", "beta", "ratio_fr", f"FR eps={res.epsilon:g}", "--")]
        (pi, bi), (pf, bf) = res.peak_iir, res.peak_fr
        peaks.append([res.epsilon, pi, bi, pf, bf])
        print(f"eps={res.epsilon:g}: peak IIR ratio {100 * pi:.2f}% at beta={bi:g}; "
              f"peak FR ratio {100 * pf:.2f}% at beta={bf:g}")
    write_rows(out / "enhance_peaks.csv", ["epsilon", "peak_ratio_iir", "beta_iir", "peak_ratio_fr", "beta_fr"],
               peaks)
    emit(Figure("enhance_ratio", "processing time beta", "enhancement ratio", series,
                title=f"theta={cfg.theta:g}"), out, draw)
    return 0


def cmd_track(cfg: ExperimentConfig, draw: bool) -> int:
    out = Path(cfg.output_dir)
    study = ex.track(cfg)
    study.codebook.write_csv(out / "codebook.csv")
    for scheme, res in study.first.items():
        res.write_csv(out / f"track_{scheme}.csv")
    write_rows(out / "track_seeds.csv", ex.TRACK_SEEDS_HEADER,
               [[k, s, v] for s, vals in study.per_seed.items() for k, v in enumerate(vals)])
    rows = study.summary_rows()
    write_rows(out / "track_summary.csv", ex.TRACK_SUMMARY_HEADER, rows)
    for scheme, n, mean, sd, se, analytic in rows:
        first = study.first[scheme].empirical_mse
        print(f"{scheme}: first-path MSE {first:.4f}; {n} seed(s) mean {mean:.4f} +/- {sd:.4f} "
              f"(stderr {se:.4f}); analytic {analytic:.4f}")
    series = [Series("track_iir.csv", "t", "x_true", "OU path", "-"),
              Series("track_iir.csv", "t", "x_hat", "IIR estimate", "-"),
              Series("track_fr.csv", "t", "x_hat", "FR estimate", "--")]
    emit(Figure("track", "time", "value", series,
                title=f"ell={cfg.ell} n={cfg.n} eps={cfg.epsilons[0]:g} beta={cfg.beta:g}"), out, draw)
    return 0


def cmd_validate(cfg: ExperimentConfig, inject: tuple[str, ...]) -> int:
    checks = ex.validate(cfg, inject)
    for c in checks:
        print(c.line())
    write_rows(Path(cfg.output_dir) / "validate.csv", ex.VALIDATE_HEADER,
               [[c.name, "pass" if c.passed else "fail", c.measured, c.tolerance, c.detail] for c in checks])
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timely-ou", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, help="worker processes for grid sweeps")
    common.add_argument("--no-plots", action="store_true", help="write plot scripts without rendering PNGs")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sweep-ln", parents=[common], help="optimal (ell, n) per ell")
    sub.add_parser("sweep-beta", parents=[common], help="optimised MMSE versus beta and the crossover")
    sub.add_parser("enhance-ratio", parents=[common], help="gain of the enhanced schemes versus beta")
    sub.add_parser("track", parents=[common], help="track OU sample paths with a Lloyd codebook")
    v = sub.add_parser("validate", parents=[common], help="run the invariant and oracle suite")
    v.add_argument("--inject", action="append", choices=ex.INJECTIONS, default=[],
                   help="plant a known fault (negative test)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    draw = not args.no_plots
    if args.command == "sweep-ln":
        return cmd_sweep_ln(cfg, draw)
    if args.command == "sweep-beta":
        return cmd_sweep_beta(cfg, draw)
    if args.command == "enhance-ratio":
        return cmd_enhance_ratio(cfg, draw)
    if args.command == "track":
        try:
            return cmd_track(cfg, draw)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    return cmd_validate(cfg, tuple(args.inject))


if __name__ == "__main__":
    sys.exit(main())
