"""Command-line runner: ``run``, ``experiment`` and ``plot``.

Outputs go to ``--out``, else ``$FLOWBO_OUTPUT_DIR``, else ``./flowbo_output``.
Exit codes: 0 success, 1 run error, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .engine import ConfigFieldError, RunConfig, log_regret, run_experiment, run_from_config
from .experiments import PRESETS, experiment_config
from .kernels import InvalidInputError
from .plotting import MalformedCSVError, plot_aggregate_files, plot_history

log = logging.getLogger("flowbo")

EXIT_OK, EXIT_RUN_ERROR, EXIT_CONFIG_ERROR = 0, 1, 2
OUTPUT_ENV = "FLOWBO_OUTPUT_DIR"


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------- config resolution


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def load_config_file(path) -> tuple:
    """Read a JSON config (or a previous run's manifest). Returns ``(dict, text)``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: line 1: config must be a JSON object")
    if "config" in data and isinstance(data["config"], dict):
        # a manifest: reuse the resolved config and any stored Lorenz setup
        cfg = dict(data["config"])
        if data.get("lorenz_setup"):
            cfg["lorenz"] = data["lorenz_setup"]
        return cfg, text
    return data, text


def resolve_config(args) -> RunConfig:
    overrides = {}
    for flag, key in (("seed", "seed"), ("iterations", "iterations"), ("inner_steps", "inner_steps"),
                      ("samples", "samples")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    source, text = "command line", ""
    try:
        if args.config:
            data, text = load_config_file(args.config)
            source = str(args.config)
            name = args.experiment or data.pop("experiment", None)
            flow = args.flow or data.get("flow", "stein")
            data.pop("flow", None)
            if name is not None:
                base = experiment_config(name, flow).to_dict()
                base.update(data)
                data = base
            data["flow"] = flow
            data.update(overrides)
            if name is not None:
                data["experiment"] = name
            return RunConfig.from_dict(data)
        if not args.experiment:
            raise ConfigError("either --experiment or --config is required")
        return experiment_config(args.experiment, args.flow or "stein", **overrides)
    except ConfigFieldError as exc:
        line = _line_of(text, exc.field) if text else None
        where = f"{source}: line {line}" if line else source
        raise ConfigError(f"{where}: field '{exc.field}': {exc}") from None
    except (InvalidInputError, TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


# --------------------------------------------------------------------------- writers


def output_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "flowbo_output")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_history(record, path: Path, dim: int):
    header = ["iteration", "eval_index"] + [f"x_{k + 1}" for k in range(dim)] + ["value", "best_so_far", "log_regret"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in record.history_rows():
            w.writerow(_fmt(v) for v in row)


def write_aggregate(result, path: Path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "q10", "median", "q90"])
        for row in result.rows():
            w.writerow(_fmt(v) for v in row)


def write_manifest(path: Path, command: str, cfg: RunConfig, setup, started: str, extra=None):
    manifest = {
        "software": "flowbo",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "lorenz_setup": setup.to_dict() if setup is not None else None,
        "started": started,
        "finished": _now(),
    }
    manifest.update(extra or {})
    path.write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# --------------------------------------------------------------------------- commands


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    out = output_dir(args)
    started = _now()
    record, setup = run_from_config(cfg)
    write_history(record, out / "history.csv", cfg.dim)
    series = log_regret(record)
    if np.all(np.isfinite(series)):
        plot_history([it.iteration for it in record.iterations], series, out / "convergence.svg",
                     title=f"{cfg.experiment or cfg.objective} ({cfg.flow})")
    write_manifest(out / "manifest.json", "run", cfg, setup, started, {"status": record.status})
    print(f"wrote {out / 'history.csv'}")
    if record.failed:
        print(f"run error: {record.status}", file=sys.stderr)
        return EXIT_RUN_ERROR
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = resolve_config(args)
    if args.n_inits < 1 or args.n_repeats < 1 or args.workers < 1:
        raise ConfigError("--n-inits, --n-repeats and --workers must be >= 1")
    out = output_dir(args)
    started = _now()
    result, setup = run_experiment(cfg, args.n_inits, args.n_repeats, workers=args.workers)
    write_aggregate(result, out / "aggregate.csv")
    hist = out / "histories"
    hist.mkdir(exist_ok=True)
    for k, rec in enumerate(result.records):
        write_history(rec, hist / f"init{k // args.n_repeats:02d}_rep{k % args.n_repeats:02d}.csv", cfg.dim)
    plot_aggregate_files([out / "aggregate.csv"], out / "aggregate.svg", [f"{cfg.flow}"],
                         title=f"{cfg.experiment or cfg.objective}")
    write_manifest(out / "manifest.json", "experiment", cfg, setup, started,
                   {"n_inits": args.n_inits, "n_repeats": args.n_repeats, "n_failed": result.n_failed})
    print(f"wrote {out / 'aggregate.csv'} ({result.n_failed} failed runs)")
    return EXIT_OK


def cmd_plot(args) -> int:
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    plot_aggregate_files(args.csv, out, args.label, title=args.title)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowbo", description="Batch Bayesian optimisation with particle gradient flows")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--experiment", choices=sorted(PRESETS))
        sp.add_argument("--config", help="JSON config file or a previous manifest.json")
        sp.add_argument("--flow", choices=["stein", "wasserstein", "none"])
        sp.add_argument("--seed", type=int)
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--inner-steps", type=int, dest="inner_steps")
        sp.add_argument("--samples", type=int)
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./flowbo_output)")

    run = sub.add_parser("run", help="single optimisation run")
    common(run)
    run.set_defaults(func=cmd_run)

    exp = sub.add_parser("experiment", help="repeated runs over several initial designs")
    common(exp)
    exp.add_argument("--n-inits", type=int, default=10, dest="n_inits")
    exp.add_argument("--n-repeats", type=int, default=5, dest="n_repeats")
    exp.add_argument("--workers", type=int, default=1)
    exp.set_defaults(func=cmd_experiment)

    plot = sub.add_parser("plot", help="render aggregate CSVs (own or external baselines) to SVG")
    plot.add_argument("csv", nargs="+", help="aggregate CSVs with columns iteration,q10,median,q90")
    plot.add_argument("-o", "--output", required=True, help="SVG path")
    plot.add_argument("--label", action="append", help="legend label per CSV, in order")
    plot.add_argument("--title", default="Comparison of log-regrets")
    plot.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except MalformedCSVError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_RUN_ERROR
    except Exception as exc:  # report and exit non-zero rather than dumping a traceback
        log.debug("run failed", exc_info=True)
        print(f"run error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUN_ERROR


if __name__ == "__main__":
    sys.exit(main())
