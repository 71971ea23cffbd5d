"""Command-line entry point: ``sope {sweep,oracle,check,demo}``.

Exit status is 0 on success, 1 when a check or an estimator fails and 2 for
usage or configuration errors. Diagnostics go to standard error; data goes to
files under ``--out`` (or to standard output where documented).
"""
from __future__ import annotations

import argparse
import json
import platform
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .checks import run_checks
from .config import dump_config, parse_config
from .harness import ConfigError, SweepError, emit_svg, run_sweep, write_csv
from .mdp import RNG_ALGORITHM
from .occupancy import exact_j, exact_q, occupancy_tables
from .ratios import oracle_ratio
from .textio import format_s_table, format_sa_table, format_tsa_table

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _log(args, message: str) -> None:
    if not getattr(args, "quiet", False):
        print(message, file=sys.stderr)


def _config(args, preset: Optional[str] = None):
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"base_seed={args.seed}")
    return parse_config(args.config or preset, overrides)


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _metadata(args, config, extra: Optional[dict] = None) -> dict:
    meta = {
        "command": args.command,
        "version": __version__,
        "config_path": str(args.config) if args.config else None,
        "overrides": list(args.set or []),
        "seed": config.base_seed,
        "rng_algorithm": RNG_ALGORITHM,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config_toml": dump_config(config),
    }
    meta.update(extra or {})
    return meta


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def _run_sweep(args, preset: Optional[str] = None) -> int:
    config = _config(args, preset)
    out = _out_dir(args, "sope-out")
    _log(args, f"sweep: {config.environment}, L={config.resolved_horizon}, batches {config.batch_sizes}, "
               f"{config.trials} trials, families {config.families}")
    report = run_sweep(config)
    write_csv(report, out / "raw.csv", "raw")
    write_csv(report, out / "aggregate.csv", "aggregate")
    emit_svg(report, out / "sweep.svg")
    _write_json(out / "metadata.json", _metadata(args, config, {"sweep": report.metadata}))
    _log(args, f"true J(pi_e) = {report.true_j!r}; wrote raw.csv, aggregate.csv, sweep.svg, metadata.json to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.config:
        raise ConfigError("sweep needs --config (a file or a preset name)")
    return _run_sweep(args)


def cmd_demo(args) -> int:
    return _run_sweep(args, preset="demo")


def cmd_oracle(args) -> int:
    config = _config(args, "graph")
    mdp = config.build_mdp()
    pi_e, pi_b = config.build_policies(mdp)
    files = {}
    for label, pol in (("pi_e", pi_e), ("pi_b", pi_b)):
        tabs = occupancy_tables(mdp, pol)
        files[f"occupancy_t_{label}.txt"] = format_tsa_table(tabs.d_t)
        files[f"occupancy_avg_{label}.txt"] = format_sa_table(tabs.d_avg)
    ratio = oracle_ratio(mdp, pi_e, pi_b)
    files["ratio_avg.txt"] = format_sa_table(ratio.w, ratio.support_mask)
    q = exact_q(mdp, pi_e, config.dr_q_horizon)
    files["q_pi_e.txt"] = format_sa_table(q.q)
    files["v_pi_e.txt"] = format_s_table(q.v)
    summary = {
        "environment": mdp.name,
        "horizon": mdp.horizon,
        "gamma": mdp.gamma,
        "j_pi_e": exact_j(mdp, pi_e),
        "j_pi_b": exact_j(mdp, pi_b),
        "q_horizon_mode": config.dr_q_horizon,
    }
    if args.out:
        out = _out_dir(args, args.out)
        for name, text in files.items():
            (out / name).write_text(text, encoding="utf-8")
        _write_json(out / "metadata.json", _metadata(args, config, {"oracle": summary}))
        _log(args, f"wrote {len(files)} tables and metadata.json to {out}")
    else:
        for name, text in files.items():
            sys.stdout.write(f"# {name}\n{text}\n")
    print(f"J(pi_e) = {summary['j_pi_e']!r}")
    print(f"J(pi_b) = {summary['j_pi_b']!r}")
    return EXIT_OK


def cmd_check(args) -> int:
    results = run_checks()
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: worst deviation {r.worst:.3g}" + ("" if r.passed else f" ({r.detail})"))
    failed = [r.name for r in results if not r.passed]
    if failed:
        _log(args, f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_FAILURE
    _log(args, f"all {len(results)} checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file, or the name of a shipped preset")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override sweep.base_seed")
    common.add_argument("--quiet", action="store_true", help="suppress progress messages on stderr")

    parser = argparse.ArgumentParser(prog="sope", description="Spectrum of off-policy estimators: sweeps and oracles.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sweep", parents=[common], help="run a bias/variance/MSE sweep and write CSV, SVG and metadata")
    sub.add_parser("oracle", parents=[common], help="dump exact occupancies, ratios, q-values and J")
    sub.add_parser("check", parents=[common], help="run the built-in verification suite")
    sub.add_parser("demo", parents=[common], help="run the small demo sweep (defaults to the demo preset)")
    return parser


COMMANDS = {"sweep": cmd_sweep, "oracle": cmd_oracle, "check": cmd_check, "demo": cmd_demo}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"sope: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SweepError as exc:
        print(f"sope: estimator failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"sope: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
