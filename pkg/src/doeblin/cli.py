"""Command line entry point.

Commands::

    doeblin run <config.json | preset-name> [...] [--out DIR] [--seed N] [--jobs K]
    doeblin compare <report_a.json> <report_b.json> [--rel-tol X]
    doeblin presets list

Exit codes: 0 all checks passed, 1 at least one check failed,
2 configuration error.  Output CSVs are byte-identical for a fixed
config and seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .experiments import ConfigError, compare_reports, run_experiment
from .presets import PRESETS, get_preset


def _load_config(source: str) -> dict:
    if source in PRESETS:
        return get_preset(source)
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"{source!r} is neither a preset nor a config file")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"could not parse {source}: {exc}") from exc


def _default_out() -> Path:
    return Path(os.environ.get("DOEBLIN_OUT", "doeblin-out"))


def _run_one(source: str, out_root: Path, seed: int | None) -> tuple[str, dict]:
    config = _load_config(source)
    if seed is not None:
        config["seed"] = seed
    label = config.get("label") or Path(source).stem
    outdir = out_root / label
    report = run_experiment(config, outdir)
    return label, report


def cmd_run(args) -> int:
    out_root = Path(args.out) if args.out else _default_out()
    results: list[tuple[str, dict]] = []
    try:
        if args.jobs > 1 and len(args.config) > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                futures = [pool.submit(_run_one, c, out_root, args.seed)
                           for c in args.config]
                results = [f.result() for f in futures]
        else:
            results = [_run_one(c, out_root, args.seed) for c in args.config]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    all_passed = True
    for label, report in results:
        for check in report["checks"]:
            status = "PASS" if check["passed"] else "FAIL"
            bound = f" (bound {check['bound']:.6g})" if "bound" in check else ""
            print(f"[{status}] {label}/{check['name']}: {check['value']:.6g}{bound}")
        all_passed = all_passed and report["passed"]
        print(f"{label}: {'ok' if report['passed'] else 'CHECK FAILURES'} "
              f"in {report['wall_seconds']}s -> {out_root / label}")
    return 0 if all_passed else 1


def cmd_compare(args) -> int:
    try:
        with open(args.a) as fh:
            rep_a = json.load(fh)
        with open(args.b) as fh:
            rep_b = json.load(fh)
        diffs = compare_reports(rep_a, rep_b, rel_tol=args.rel_tol)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"compare error: {exc}", file=sys.stderr)
        return 2
    if not diffs:
        print("reports identical within tolerance")
        return 0
    for path, va, vb in diffs:
        print(f"{path}: {va!r} != {vb!r}")
    return 1


def cmd_presets(args) -> int:
    if args.action == "list":
        for name in sorted(PRESETS):
            print(f"{name}: {PRESETS[name]['experiment']}")
        return 0
    print(f"unknown presets action {args.action!r}", file=sys.stderr)
    return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="doeblin",
                                     description="semigroup ergodicity experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one or more experiment configs")
    run_p.add_argument("config", nargs="+",
                       help="preset name or path to a JSON config")
    run_p.add_argument("--out", default=None, help="output directory root")
    run_p.add_argument("--seed", type=int, default=None, help="override the seed")
    run_p.add_argument("--jobs", type=int, default=1,
                       help="parallel experiments in a batch")
    run_p.set_defaults(func=cmd_run)

    cmp_p = sub.add_parser("compare", help="diff two report.json files")
    cmp_p.add_argument("a")
    cmp_p.add_argument("b")
    cmp_p.add_argument("--rel-tol", type=float, default=1e-12)
    cmp_p.set_defaults(func=cmd_compare)

    pre_p = sub.add_parser("presets", help="preset utilities")
    pre_p.add_argument("action", choices=["list"])
    pre_p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
