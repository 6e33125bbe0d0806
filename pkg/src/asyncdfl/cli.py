"""Command-line entry point: ``asyncdfl {run,suite,plotdata,verify}``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .analysis import write_json
from .config import ExperimentSuite, SimConfig, load_config
from .engine import run_any
from .errors import DFLError, ConfigError
from .experiments import emit_plotdata, expand_globs, load_plot_layout, run_problems, run_suite
from .trace import records_to_csv

log = logging.getLogger("asyncdfl")


def _apply_flags(cfg: SimConfig, args) -> SimConfig:
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.strict_eta:
        changes["strict_eta"] = True
    if args.observe_gamma:
        changes["observe_gamma"] = True
    return dataclasses.replace(cfg, **changes).validate() if changes else cfg


def _load_sim(path) -> SimConfig:
    cfg = load_config(path)
    if isinstance(cfg, ExperimentSuite):
        raise ConfigError(f"{path}: expected a single run, found a suite")
    return cfg


def cmd_run(args) -> int:
    cfg = _apply_flags(_load_sim(args.config), args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kwargs = {}
    if cfg.algorithm not in ("FedAvg", "FedAvgPartial", "FedSemiAsync"):
        kwargs["dump_path"] = out / f"{cfg.name}.bin"
        if args.replay:
            kwargs["replay_path"] = args.replay
    res = run_any(cfg, **kwargs)
    records_to_csv(res.records, out / f"{cfg.name}.csv")
    write_json(out / f"{cfg.name}.json", res.summary())
    print(f"{cfg.name}: {len(res.records)} iterations, final loss {res.final_loss:.6g}")
    return 0


def cmd_suite(args) -> int:
    suite = load_config(args.config)
    if not isinstance(suite, ExperimentSuite):
        raise ConfigError(f"{args.config}: expected a suite with 'base' and 'sweeps'")
    base = _apply_flags(suite.base, args)
    suite = dataclasses.replace(suite, base=base)
    result = run_suite(suite, args.out_dir or suite.out_dir)
    for p in result.summary["points"]:
        print(f"{p['label']}: mean final loss {p['mean_final_loss']}")
    for f in result.failures:
        print(f"FAILED {f['run']}: {f['error']}", file=sys.stderr)
    return result.exit_code


def cmd_plotdata(args) -> int:
    paths = expand_globs(args.glob)
    rows = emit_plotdata(paths, load_plot_layout(args.layout), args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_verify(args) -> int:
    cfg = _apply_flags(_load_sim(args.config), args)
    res = run_any(cfg)
    problems = run_problems(res)
    summary = res.summary()
    b = res.bound
    if b is not None:
        state = "vacuous" if b.vacuous else ("heuristic" if b.heuristic else "asserted")
        print(f"bound: u(eta)={b.u:.6g} ({state}), violations={len(b.violations)}")
    print(f"messages balanced: {res.counts.balanced}; staleness violations: {res.staleness_violations}")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / f"{cfg.name}.verify.json", {"summary": summary, "problems": problems})
    for p in problems:
        print(f"FAIL: {p}", file=sys.stderr)
    print("OK" if not problems else "FAILED")
    return 0 if not problems else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asyncdfl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="out"):
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out-dir", default=out_default)
        p.add_argument("--strict-eta", action="store_true",
                       help="reject learning rates outside the admissible window")
        p.add_argument("--observe-gamma", action="store_true",
                       help="record realized staleness instead of aborting on violations")

    p = sub.add_parser("run", help="simulate one configuration")
    p.add_argument("config")
    p.add_argument("--replay", help="take deliveries from a previously dumped trace")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("suite", help="run every point of an experiment suite")
    p.add_argument("config")
    common(p, out_default=None)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("plotdata", help="export traces as long-format CSV")
    p.add_argument("glob", nargs="+", help="trace CSV files or glob patterns")
    p.add_argument("layout", help="YAML file naming the x column and metrics")
    p.add_argument("--out", default="plotdata.csv")
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("verify", help="run and check invariants and the bound")
    p.add_argument("config")
    common(p, out_default=None)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DFLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
