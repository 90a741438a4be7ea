"""Command-line interface: ``mccda {train,sweep,verify,boundary,ablate}``.

Exit status is 0 on success, 1 on a configuration or run error and 2 when
``verify`` finds a failing property suite.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from . import __version__
from .config import (
    TRAIN_KEYS,
    RunManifest,
    build_scenario,
    config_from_dict,
    dump_config,
    load_config,
)
from .confusion import ABLATIONS
from .errors import ConfigError, MCCError
from .nn import load_params
from .reporting import atomic_write_text, export_boundary_grid, write_report
from .trainer import TrainConfig, train

log = logging.getLogger("mccda")

OUT_ROOT_ENV = "MCCDA_OUT_ROOT"
DEFAULT_OUT_ROOT = "runs"
DEFAULT_BOUNDS = (-2.0, 3.0, -2.0, 2.5)

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2

_DEFAULTS = TrainConfig()
CONFIG_HELP = "config keys and defaults:\n" + "\n".join(
    f"  {k:<15} {getattr(_DEFAULTS, k)!r}" for k in TRAIN_KEYS
) + "\n  scenario        (required) preset name or inline descriptor"


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1, like every other bad input."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    # SUPPRESS keeps a subcommand's defaults from clobbering flags given
    # before the subcommand name; run_command fills in the real defaults
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the run seed from the config")
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help=f"output directory (default: ${OUT_ROOT_ENV} or ./{DEFAULT_OUT_ROOT}"
                             "/<config name>)")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="only print errors")

    parser = _Parser(prog="mccda", description="Minimum Class Confusion toolkit",
                     parents=[common], formatter_class=argparse.RawDescriptionHelpFormatter,
                     epilog=CONFIG_HELP)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="train one run from a config or manifest",
                       epilog=CONFIG_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config", help="JSON config file or manifest.json of an earlier run")

    p = sub.add_parser("sweep", parents=[common], help="train over a cartesian grid of overrides")
    p.add_argument("config")
    p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2,...",
                   help="values for one config key; repeat for more keys")
    p.add_argument("--workers", type=int, default=1, help="parallel runs (default 1)")

    p = sub.add_parser("verify", parents=[common], help="run the property and oracle suites")

    p = sub.add_parser("boundary", parents=[common], help="export a decision-boundary grid")
    p.add_argument("checkpoint", help="model.json or a run directory containing one")
    p.add_argument("--grid-res", type=int, default=100, help="grid points per axis (default 100)")
    p.add_argument("--bounds", type=float, nargs=4, default=list(DEFAULT_BOUNDS),
                   metavar=("XMIN", "XMAX", "YMIN", "YMAX"))

    p = sub.add_parser("ablate", parents=[common],
                       help="train the four component variants of the confusion loss")
    p.add_argument("config")
    return parser


def _out_dir(args, name: str) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUT_ROOT_ENV) or DEFAULT_OUT_ROOT
    return Path(root) / name


def _config_name(path: str) -> str:
    p = Path(path)
    return p.parent.name if p.name == "manifest.json" else p.stem


def _with_seed(cfg: TrainConfig, seed: Optional[int]) -> TrainConfig:
    return cfg if seed is None else replace(cfg, seed=seed)


def run_one(command: str, scenario: Dict, cfg: TrainConfig, out: Path, save_model: bool = True):
    """Write the manifest, train, then write the report files."""
    resolved = dump_config(scenario, cfg)
    manifest = RunManifest(command, resolved, str(out), cfg.seed).to_dict()
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    spec = build_scenario(scenario, cfg.seed)
    params, report = train(spec, cfg)
    write_report(report, out, resolved, manifest, params if save_model else None)
    return params, report


def _summary(report) -> str:
    return (f"target acc {report.target_accuracy_final:.4f}  "
            f"source acc {report.source_accuracy_final:.4f}")


def cmd_train(args) -> int:
    scenario, cfg = load_config(args.config)
    cfg = _with_seed(cfg, args.seed)
    out = _out_dir(args, _config_name(args.config))
    log.info("training %s (%s) -> %s", cfg.method, args.config, out)
    _, report = run_one("train", scenario, cfg, out)
    log.info("done: %s", _summary(report))
    return EXIT_OK


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_grid(items: Sequence[str]) -> List[Tuple[str, List]]:
    grid = []
    for item in items:
        key, sep, values = item.partition("=")
        if not sep or not key or not values:
            raise ConfigError(f"--grid expects KEY=V1,V2,..., got {item!r}")
        if key not in TRAIN_KEYS:
            raise ConfigError(f"--grid: unknown config key {key!r}")
        if key in (k for k, _ in grid):
            raise ConfigError(f"--grid: key {key!r} given twice")
        grid.append((key, [_parse_value(v) for v in values.split(",")]))
    return grid


def _sweep_job(job):
    index, scenario, raw_cfg, out = job
    cfg = TrainConfig(**raw_cfg)
    _, report = run_one("sweep", scenario, cfg, Path(out), save_model=False)
    return index, report.target_accuracy_final, report.source_accuracy_final, \
        report.a_distance, report.eps_ideal


def _rank_key(row):
    acc = row["target_accuracy"]
    return (0 if not math.isnan(acc) else 1, -acc if not math.isnan(acc) else 0.0, row["run"])


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def cmd_sweep(args) -> int:
    with open(args.config) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if "config" in raw and "command" in raw:
        raw = raw["config"]
    grid = parse_grid(args.grid)
    if args.workers < 1:
        raise ConfigError(f"--workers must be at least 1, got {args.workers}")
    keys = [k for k, _ in grid]
    combos = list(itertools.product(*(v for _, v in grid))) if grid else [()]
    out = _out_dir(args, _config_name(args.config) + "-sweep")

    jobs = []
    for i, combo in enumerate(combos):  # validate everything before any run starts
        scenario, cfg = config_from_dict({**raw, **dict(zip(keys, combo))})
        cfg = _with_seed(cfg, args.seed)
        jobs.append((i, scenario, cfg.to_dict(), str(out / f"run-{i:03d}")))
    log.info("sweep of %d runs -> %s", len(jobs), out)

    if args.workers == 1:
        results = [_sweep_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    results.sort(key=lambda r: r[0])  # completion order never matters

    rows = []
    for (i, tgt, src, adist, eps), combo in zip(results, combos):
        rows.append({"run": f"run-{i:03d}", **dict(zip(keys, combo)),
                     "target_accuracy": tgt, "source_accuracy": src,
                     "a_distance": adist, "eps_ideal": eps})
    rows.sort(key=_rank_key)
    for rank, r in enumerate(rows, 1):
        r["rank"] = rank
    header = ["rank", "run", *keys, "target_accuracy", "source_accuracy", "a_distance", "eps_ideal"]
    atomic_write_text(out / "summary.csv", _csv(header, rows))
    for r in rows:
        log.info("%d. %s %s target acc %.4f", r["rank"], r["run"],
                 " ".join(f"{k}={r[k]}" for k in keys), r["target_accuracy"])
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(0 if args.seed is None else args.seed)
    for r in results:
        if not args.quiet or not r.passed:
            print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def cmd_boundary(args) -> int:
    path = Path(args.checkpoint)
    model = path / "model.json" if path.is_dir() else path
    try:
        params = load_params(model)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"{model}: cannot load checkpoint: {exc}") from exc
    target = Path(args.out) if args.out else model.parent / "boundary.csv"
    export_boundary_grid(params, tuple(args.bounds), args.grid_res, target)
    log.info("wrote %d grid points to %s", args.grid_res ** 2, target)
    return EXIT_OK


def cmd_ablate(args) -> int:
    scenario, cfg = load_config(args.config)
    cfg = _with_seed(cfg, args.seed)
    if not cfg.method.endswith("mcc"):
        raise ConfigError(f"ablate needs an mcc method, config has {cfg.method!r}")
    out = _out_dir(args, _config_name(args.config) + "-ablate")
    rows = []
    for name, tog in ABLATIONS.items():
        variant = replace(cfg, pr=tog.pr, ur=tog.ur, cn=tog.cn)
        _, report = run_one("ablate", scenario, variant, out / name, save_model=False)
        rows.append({"variant": name, "pr": tog.pr, "ur": tog.ur, "cn": tog.cn,
                     "target_accuracy": report.target_accuracy_final,
                     "source_accuracy": report.source_accuracy_final})
        log.info("%-9s %s", name, _summary(report))
    header = ["variant", "pr", "ur", "cn", "target_accuracy", "source_accuracy"]
    atomic_write_text(out / "ablation.csv", _csv(header, rows))
    return EXIT_OK


GLOBAL_DEFAULTS = {"seed": None, "out": None, "quiet": False}

COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "verify": cmd_verify,
            "boundary": cmd_boundary, "ablate": cmd_ablate}


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for key, default in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, default)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MCCError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
