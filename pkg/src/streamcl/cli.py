"""Command-line harness: ``generate``, ``run``, ``grid`` and ``report``.

Exit codes: 0 on success, 1 on configuration errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import datagen, experiment
from .dataio import write_csv
from .errors import ConfigurationError, SchemaError

log = logging.getLogger("streamcl")


def cmd_generate(args) -> int:
    raw = experiment.parse_kv(Path(args.config).read_text()) if args.config else {}
    if args.seed is not None:
        raw["data.seed"] = str(args.seed)
    cfg = experiment.ExperimentConfig.from_dict(raw).generator_config()
    data = datagen.generate_series(cfg)
    out = args.out or "generated.csv"
    write_csv(out, data, [datagen.provenance_line(cfg, data.meta["phases"])])
    print(f"wrote {len(data)} samples to {out}")
    return 0


def _load_config(args) -> experiment.ExperimentConfig:
    if not args.config:
        raise ConfigurationError("--config is required")
    cfg = experiment.ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg = cfg.replace({"experiment.seed": args.seed})
    return cfg


def cmd_run(args) -> int:
    cfg = _load_config(args)
    try:
        result = experiment.run_experiment(cfg)
    except ConfigurationError:
        raise
    except Exception as exc:
        raise RuntimeError(f"run {cfg.hash} seed {cfg.seed} failed: {exc}") from exc
    out = Path(args.out or "results.jsonl")
    with out.open("a") as fh:
        fh.write(experiment.dumps(result) + "\n")
    m = result["metrics"]
    print(f"{cfg.instance} [{cfg.hash}] seed={cfg.seed} "
          + " ".join(f"{k}={v:.5g}" for k, v in sorted(m.items())))
    return 0


def cmd_grid(args) -> int:
    if not args.config:
        raise ConfigurationError("--config is required")
    grid = experiment.GridConfig.from_file(args.config)
    if args.seed is not None:
        grid = experiment.GridConfig(grid.base.replace({"experiment.seed": args.seed}),
                                     grid.axes, grid.repeats)
    out = args.out or "grid.jsonl"
    results = experiment.run_grid(grid, out, args.parallel)
    failed = sum(r["status"] != "ok" for r in results)
    print(f"{len(results)} runs written to {out} ({failed} failed)")
    return 0


def cmd_report(args) -> int:
    out = args.out or "report"
    rep = experiment.report(args.results, out)
    print(experiment.format_summary(rep["summary"]))
    print(f"tables and plot series written to {out}/")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamcl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_help):
        sp.add_argument("--config", help=config_help)
        sp.add_argument("--out", help="output path")
        sp.add_argument("--seed", type=int, help="override the configured seed")

    g = sub.add_parser("generate", help="write the artificial periodic dataset as CSV")
    common(g, "config file with data.* keys (defaults apply when omitted)")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run one instance and append its result line")
    common(r, "experiment config file")
    r.set_defaults(func=cmd_run)

    gr = sub.add_parser("grid", help="sweep a hyperparameter grid")
    common(gr, "grid config file")
    gr.add_argument("--parallel", type=int, default=1, help="worker processes")
    gr.set_defaults(func=cmd_grid)

    rp = sub.add_parser("report", help="aggregate a results file into tables and series")
    rp.add_argument("results", help="JSON-lines results file")
    rp.add_argument("--out", help="output directory")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, SchemaError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
