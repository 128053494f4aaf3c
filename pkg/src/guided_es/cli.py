"""Command-line entry point: ``guided-es <experiment> --config <path> ...``.

Exit codes: 0 all checks passed, 1 config error, 2 statistical check failed,
3 IO failure. ``GUIDED_ES_OUT`` sets the default output root.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

from . import experiments as ex
from . import reports
from .config import KINDS, ConfigError, load_config
from .datasets import IdxParseError
from .estimators import EvaluationError

EXIT_OK, EXIT_CONFIG, EXIT_STAT, EXIT_IO = 0, 1, 2, 3
OUT_ENV = "GUIDED_ES_OUT"

log = logging.getLogger("guided_es")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="guided-es", description=__doc__.splitlines()[0])
    p.add_argument("experiment", choices=KINDS)
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"run directory (default: ${OUT_ENV} or ./runs, plus <experiment>-seed<N>)")
    p.add_argument("--threads", type=int, help="worker threads for objective evaluations")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="config override, e.g. optimizer.learning_rate=0.01 (repeatable)")
    p.add_argument("--mnist-images", help="IDX image file (sets data.source=mnist)")
    p.add_argument("--mnist-labels", help="IDX label file")
    p.add_argument("--no-figures", action="store_true", help="skip matplotlib output")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args) -> list[str]:
    ov = []
    if args.seed is not None:
        ov.append(f"seed={args.seed}")
    if args.threads is not None:
        ov.append(f"threads={args.threads}")
    if args.mnist_images or args.mnist_labels:
        ov += ['data.source="mnist"', f"data.mnist_images={args.mnist_images or ''!r}",
               f"data.mnist_labels={args.mnist_labels or ''!r}"]
    if args.no_figures:
        ov.append("run.figures=false")
    return ov + list(args.override)


def run_dir(args, cfg) -> Path:
    if args.out:
        return Path(args.out)
    root = Path(cfg.out or os.environ.get(OUT_ENV) or "runs")
    return root / f"{cfg.kind}-seed{cfg.seed}"


def run_experiment(cfg, out: Path, executor=None) -> list[ex.Check]:
    figures = cfg.run.figures
    if figures:
        from . import figures as fig
    echo = cfg.to_dict()
    kind = cfg.kind
    if kind.startswith("theory."):
        checks = ex.run_theory(cfg)
        reports.write_checks(checks, out, config=echo, seed=cfg.seed)
        return checks

    checks: list[ex.Check] = []
    per_seed = {}
    for seed in cfg.seeds():
        scfg = replace(cfg, seed=seed)
        sdir = out / f"seed{seed}"
        if kind == "train":
            results = ex.run_train(scfg, executor)
            for method, res in results.items():
                reports.emit_reports(res.records, sdir / method, config=scfg.to_dict(), seed=seed,
                                     summary=res.summary, figure=figures)
            if figures:
                fig.train_comparison(results, sdir / "comparison.svg",
                                     next(iter(results.values())).threshold)
            per_seed[seed] = results
        elif kind == "gradient-alignment":
            records, summ = ex.run_gradient_alignment(scfg, executor)
            reports.emit_reports(records, sdir, config=scfg.to_dict(), seed=seed, summary=summ,
                                 figure=figures)
            if figures:
                fig.alignment(records, summ, sdir / "alignment.svg")
            per_seed[seed] = summ
        elif kind == "noise":
            results = ex.run_noise_study(scfg, executor)
            for (name, noisy), res in results.items():
                reports.emit_reports(res.records, sdir / f"{name}-{'noisy' if noisy else 'clean'}",
                                     config=scfg.to_dict(), seed=seed, summary=res.summary, figure=False)
            if figures:
                fig.noise_panels(results, sdir / "noise.svg")
            per_seed[seed] = ex.noise_summary(results)
    if kind == "train":
        checks = ex.train_checks(per_seed)
    elif kind == "gradient-alignment":
        checks = ex.alignment_checks(per_seed)
    else:
        checks = ex.noise_checks(per_seed)
    reports.write_checks(checks, out, config=echo, seed=cfg.seed)
    return checks


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args), kind=args.experiment)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = run_dir(args, cfg)
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else nullcontext()
    try:
        with pool as executor:
            checks = run_experiment(cfg, out, executor)
    except (OSError, IdxParseError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, EvaluationError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_STAT
    print("check,result,measured,expected")
    for c in checks:
        print(f"{c.name},{'pass' if c.passed else 'FAIL'},{reports.fmt_value(c.measured)},{reports.fmt_value(c.expected)}")
    failed = [c.name for c in checks if not c.passed]
    print(f"# output: {out}")
    if failed:
        print(f"statistical check failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_STAT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
