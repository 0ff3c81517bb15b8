"""
Command-line entry point.

Every pipeline stage has a subcommand; ``run-all`` runs them in order and
then writes the report. Exit codes: 0 success, 1 validation failure,
2 stage failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from . import pipeline
from .report import emit_report
from .synthetic import ScenarioSpec, write_scenario

EXIT_OK, EXIT_VALIDATION, EXIT_STAGE = 0, 1, 2

STAGE_COMMANDS = {
    "ingest": ["ingest"],
    "damage": ["damage"],
    "recovery": ["mobility"],
    "covariates": ["covariates"],
    "analyze": ["regression"],
    "sweep": ["sweep"],
    "decay": ["decay"],
    "heterogeneity": ["heterogeneity"],
    "run-all": list(pipeline.STAGES),
}


def _parse_set(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(raw)
    return out


def _common(p):
    p.add_argument("--config", type=Path, help="YAML configuration file")
    p.add_argument("--output-dir", type=Path, help="artifact directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="random seed (overrides seed)")
    p.add_argument("--permutations", type=int, help="Moran permutation count")
    p.add_argument("--scheme", choices=["inverse_distance", "inverse_square", "knn",
                                        "contiguity"], help="main weight scheme")
    p.add_argument("--stars", choices=["table2", "strict"], help="significance convention")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                   help="override any config key, e.g. --set mobility.steady_tol=0.1")
    p.add_argument("--no-resume", action="store_true", help="rerun stages even if up to date")


def build_parser():
    parser = argparse.ArgumentParser(prog="spillover",
                                     description="Spatial spillover analysis pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_COMMANDS:
        _common(sub.add_parser(name, help=f"run the {name} stage(s)"))
    rep = sub.add_parser("report", help="write report tables from an artifact directory")
    _common(rep)
    syn = sub.add_parser("synth", help="write a synthetic scenario with planted truth")
    syn.add_argument("--output-dir", type=Path, required=True)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--spec", type=Path, help="scenario.json to start from")
    syn.add_argument("--n-cbgs", type=int)
    syn.add_argument("--layout", choices=["lattice", "cloud"])
    syn.add_argument("--sigma", type=float)
    syn.add_argument("--dip-depth", type=float)
    sub.add_parser("default-config", help="print the annotated default configuration")
    return parser


def _load_config(args):
    overrides = _parse_set(args.set)
    for flag, key in (("seed", "seed"), ("permutations", "regression.permutations"),
                      ("scheme", "weights.scheme"), ("stars", "report.stars")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if args.config is not None:
        cfg = pipeline.PipelineConfig.load(args.config, overrides)
    else:
        cfg = pipeline.PipelineConfig()
        for k, v in overrides.items():
            cfg.set(k, v)
    return cfg


def _synth(args):
    spec = ScenarioSpec.from_json(args.spec.read_text()) if args.spec else ScenarioSpec()
    spec.seed = args.seed
    for flag, attr in (("n_cbgs", "n_cbgs"), ("layout", "layout"), ("sigma", "sigma"),
                       ("dip_depth", "dip_depth")):
        value = getattr(args, flag)
        if value is not None:
            setattr(spec, attr, value)
    write_scenario(spec, args.output_dir)
    print(f"scenario written to {args.output_dir}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "default-config":
        sys.stdout.write(pipeline.DEFAULT_CONFIG_TEXT)
        return EXIT_OK
    try:
        if args.command == "synth":
            return _synth(args)
        cfg = _load_config(args)
        out = args.output_dir
        if args.command == "report":
            root = out or cfg.output_dir
            emit_report(root, convention=cfg.get("report.stars"))
            return EXIT_OK
        manifest = pipeline.run_pipeline(cfg, STAGE_COMMANDS[args.command], output_dir=out,
                                         resume=not args.no_resume)
        if args.command == "run-all":
            emit_report(out or cfg.output_dir, convention=cfg.get("report.stars"))
        done = pipeline.completed_stages(manifest)
        print(f"completed stages: {', '.join(done)}")
        return EXIT_OK
    except pipeline.ValidationFailure as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, argparse.ArgumentTypeError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (pipeline.StageError, FileNotFoundError) as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
