"""Command line entry point: ``latentcf <verb> [options]``.

Global options (accepted before or after the verb): ``--config PATH``,
``--seed INT``, ``--out DIR``.  Any config field can be overridden with
``--<section>-<field> VALUE`` (for example ``--vae-epochs 200`` or
``--cf-lambda-input 0.5``); values are parsed as JSON when possible, so lists
are written ``--classifier-hidden [16,16]``.  ``--epochs`` and ``--n`` are
short forms of ``--vae-epochs`` and ``--evaluate-n-test``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import commands
from .blackbox import DegenerateDataError
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, dump_config, load_config, override_paths, set_field
from .dataset import DataError, SchemaError
from .metrics import EmptyResults, format_table
from .vae import TrainingDiverged

log = logging.getLogger("latentcf")

ALIASES = {"epochs": "vae.epochs", "n": "evaluate.n_test"}


def _flag(path: str) -> str:
    return "--" + path.replace(".", "-").replace("_", "-")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _common(p: argparse.ArgumentParser, top: bool) -> None:
    # the same options on the root parser and on every verb; verb-level
    # values win because their default is SUPPRESS
    default = None if top else argparse.SUPPRESS
    g = p.add_argument_group("run options")
    g.add_argument("--config", metavar="PATH", default=default, help="JSON run configuration")
    g.add_argument("--seed", type=int, default=default, help="global seed")
    g.add_argument("--out", metavar="DIR", default=default, help="output directory")
    g.add_argument("-v", "--verbose", action="count", default=default if not top else 0)


def _overrides(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("config overrides")
    for path in override_paths():
        if path in ("seed", "out"):
            continue
        g.add_argument(_flag(path), dest="set:" + path, metavar="V", type=_parse_value,
                       default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    for alias, path in ALIASES.items():
        g.add_argument("--" + alias, dest="set:" + path, type=_parse_value, metavar="V",
                       default=argparse.SUPPRESS, help=f"same as {_flag(path)}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentcf",
        description="Counterfactual explanations for mixed-type tabular data via a transformer VAE latent space.",
        epilog="Every config field has an override flag --<section>-<field>; see 'latentcf show-config'.")
    _common(parser, top=True)
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    def verb(name, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        _common(p, top=False)
        _overrides(p)
        return p

    verb("synth", "write a synthetic dataset (data.csv, schema.json) to the output directory")
    verb("train", "train the black-box classifier and the VAE, writing checkpoints")
    g = verb("generate", "generate counterfactuals for the shared test selection")
    g.add_argument("--method", choices=commands.METHODS, default="tabcf")
    e = verb("evaluate", "compute validity / sparsity / proximity tables from result files")
    e.add_argument("results", nargs="+", help="results_<method>.jsonl files")
    e.add_argument("--average", action="store_true", help="add per-method rows averaged over datasets")
    verb("ablate", "run the lambda_input x lambda_latent grid")
    b = verb("bias-report", "compare per-feature utilization of tabcf and the baselines")
    b.add_argument("results", nargs="*", help="result files (default: results_*.jsonl under --out)")
    verb("show-config", "print the effective configuration as JSON")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    for key, value in sorted(vars(args).items()):
        if key.startswith("set:"):
            set_field(cfg, key[4:], value)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        cfg.validate()
        return _dispatch(args, cfg)
    except (ConfigError, commands.RunError, DataError, SchemaError, EmptyResults, CheckpointError,
            DegenerateDataError, TrainingDiverged, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1


def _dispatch(args, cfg: RunConfig) -> int:
    verb = args.verb
    if verb == "show-config":
        sys.stdout.write(dump_config(cfg))
    elif verb == "synth":
        info = commands.cmd_synth(cfg)
        print(f"wrote {info['rows']} rows to {info['csv']} (schema {info['schema']})")
    elif verb == "train":
        rep = commands.cmd_train(cfg)
        print(f"classifier accuracy {rep['classifier_accuracy']:.4f}; "
              f"vae numerical MAE {rep['vae_numerical_mae']}; checkpoints in {cfg.out}")
    elif verb == "generate":
        info = commands.cmd_generate(cfg, args.method)
        print(f"{info['method']}: validity {info['validity']:.3f} ({info['n_val']}/{info['n']}) -> {info['results']}")
    elif verb == "evaluate":
        rows = commands.cmd_evaluate(cfg, args.results, args.average)
        sys.stdout.write(format_table(rows))
    elif verb == "ablate":
        commands.cmd_ablate(cfg)
        sys.stdout.write((cfg.out_dir / "ablation.txt").read_text())
    elif verb == "bias-report":
        commands.cmd_bias_report(cfg, args.results)
        sys.stdout.write((cfg.out_dir / "bias_report.txt").read_text())
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
