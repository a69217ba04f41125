"""Command-line front end.

    projdiff run <config> [--seed N] [--mode MODE] [--out DIR]
    projdiff check <samples> <config> [--seed N] [--mode MODE]
    projdiff trace <run-dir>

`run` executes a configured experiment and writes its artifact directory.
The output root is --out, else $NSD_OUT_DIR, else ./runs; inside it each run
gets <scenario>-<mode>-seed<seed>. `check` recomputes per-constraint
violation percentages from an emitted samples file and compares them with
the stored report when one sits next to the samples. `trace` prints a run's
violation trace CSV to stdout.

Exit codes: 0 success, 2 configuration error (also check mismatch), 3 retry
exhaustion (no feasible sample within the retry budget).
"""

import argparse
import os
import sys

from .errors import ConfigError, RetryExhaustedError
from .harness import check_samples, load_config, load_report, run_experiment


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "mode", None) is not None:
        cfg.mode = args.mode
    cfg.__post_init__()
    return cfg


def _resolve_out(args, cfg) -> str:
    root = args.out or os.environ.get("NSD_OUT_DIR") or "runs"
    return os.path.join(root, f"{cfg.scenario}-{cfg.mode}-seed{cfg.seed}")


def _cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out_dir = _resolve_out(args, cfg)
    report = run_experiment(cfg, out_dir)
    print(f"run: {cfg.scenario} mode={cfg.mode} seed={cfg.seed} "
          f"n={cfg.n_samples} -> {out_dir}")
    for name in sorted(report.violations):
        print(f"  violation[{name}] = {report.violations[name]:.2f}%")
    for name in sorted(report.fidelity):
        print(f"  fidelity[{name}] = {report.fidelity[name]:.6g}")
    print(f"  wall time {report.wall_time_s:.2f}s")
    return 0


def _cmd_check(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    recomputed = check_samples(cfg, args.samples)
    for name in sorted(recomputed):
        print(f"  violation[{name}] = {recomputed[name]:.2f}%")
    report_path = os.path.join(os.path.dirname(os.path.abspath(args.samples)),
                               "report.json")
    if not os.path.exists(report_path):
        print("no stored report found; recomputation only")
        return 0
    stored = load_report(report_path).violations
    if stored == recomputed:
        print("check: matches stored report")
        return 0
    print(f"check: MISMATCH\n  stored:     {stored}\n  recomputed: {recomputed}",
          file=sys.stderr)
    return 2


def _cmd_trace(args) -> int:
    path = os.path.join(args.run_dir, "trace.csv")
    try:
        with open(path, encoding="utf-8") as fh:
            sys.stdout.write(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read trace at {path}: {exc}") from exc
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="projdiff",
                                description="constrained diffusion sampling runs")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a configured experiment")
    run.add_argument("config", help="TOML or JSON experiment config")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--mode", choices=("nsd", "unconstrained", "post_only"),
                     default=None)
    run.add_argument("--out", default=None, help="output root directory")
    run.set_defaults(fn=_cmd_run)

    check = sub.add_parser("check",
                           help="recompute violations from emitted samples")
    check.add_argument("samples", help="samples.csv or samples.txt from a run")
    check.add_argument("config", help="the config the run used")
    check.add_argument("--seed", type=int, default=None)
    check.add_argument("--mode", choices=("nsd", "unconstrained", "post_only"),
                       default=None)
    check.set_defaults(fn=_cmd_check)

    trace = sub.add_parser("trace", help="print a run's violation trace CSV")
    trace.add_argument("run_dir")
    trace.set_defaults(fn=_cmd_trace)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RetryExhaustedError as exc:
        print(f"retry exhaustion: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
