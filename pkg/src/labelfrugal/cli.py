"""Command-line entry point: ``labelfrugal {run,report,certify,synth}``.

Exit codes: 0 success, 1 config error, 2 partial grid failure (or a failed
certificate), 3 I/O error.
"""

import argparse
import json
import logging
import sys

from .experiment import (DEFAULTS, OUT_ENV, ConfigError, ExperimentConfig, report, run_grid)
from .invertible import certify, load_checkpoint
from .skeleton import DatasetFormatError, save_dataset, synth_sequences

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("labelfrugal")


def _list(kind):
    def parse(text):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _optional(kind):
    def parse(text):
        return None if text.lower() in ("none", "auto") else kind(text)
    return parse


def parse_kv(text):
    """``classes=8,noise=2.5`` -> ``{"classes": 8, "noise": 2.5}``."""
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected key=value, got {item!r}")
        try:
            out[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            out[key.strip()] = value
    return out


RUN_FLAGS = [
    ("--data", ("data",), str, "pool file (JSONL) or SBU directory"),
    ("--format", ("format",), str, "dataset format: jsonl or sbu"),
    ("--synth", ("synth",), parse_kv,
     "synthetic pool, e.g. classes=8,per_class=30,joints=6,frames=16,noise=3"),
    ("--chunks", ("chunks",), int, "temporal chunks per trajectory"),
    ("--strategies", ("strategies",), _list(str), "comma-separated strategies"),
    ("--rates", ("rates",), _list(float), "comma-separated labeling rates"),
    ("--seeds", ("seeds",), _list(int), "comma-separated seed list"),
    ("--seed", ("seed",), int, "master seed deriving per-cell streams"),
    ("--classifier", ("classifier",), str, "latent or gcn"),
    ("--display.K", ("display", "K"), int, "display size"),
    ("--display.tol", ("display", "tol"), float, "solver tolerance"),
    ("--display.max-iters", ("display", "max_iters"), int, "solver iteration cap"),
    ("--display.sigma-ratio", ("display", "sigma_ratio"), float, "sigma / alpha"),
    ("--display.gamma-mode", ("display", "gamma_mode"), str,
     "adaptive, mean, nearest or fixed:<value>"),
    ("--net.depth", ("net", "depth"), int, "network depth L"),
    ("--net.dim", ("net", "dim"), _optional(int), "feature width (zero padding)"),
    ("--net.u", ("net", "u"), float, "positive activation slope"),
    ("--net.l", ("net", "l"), float, "negative activation slope"),
    ("--net.lambda", ("net", "lambda"), _optional(float), "orthonormality weight (default 1/p)"),
    ("--train.epochs", ("train", "epochs"), int, "training epochs"),
    ("--train.batch", ("train", "batch"), int, "minibatch size"),
    ("--train.lr0", ("train", "lr0"), float, "initial learning rate"),
    ("--train.momentum", ("train", "momentum"), float, "momentum"),
    ("--out", ("out",), str, f"output directory (default ${OUT_ENV} or ./labelfrugal-out)"),
    ("--jobs", ("jobs",), int, "parallel grid cells"),
]


def build_parser():
    parser = argparse.ArgumentParser(prog="labelfrugal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment grid")
    run.add_argument("--config", help="JSON config file")
    for flag, path, kind, help_ in RUN_FLAGS:
        run.add_argument(flag, dest="cfg:" + ".".join(path), type=kind, default=None, help=help_)
    run.add_argument("--save-models", dest="cfg:save_models", action="store_const", const=True,
                     default=None, help="store the final network of every cell")

    rep = sub.add_parser("report", help="long-format CSV from round records")
    rep.add_argument("--records", required=True, help="records directory of a run")
    rep.add_argument("--out", required=True, help="CSV path")

    cert = sub.add_parser("certify", help="bi-Lipschitz certificate of a stored network")
    cert.add_argument("--model", required=True, help="checkpoint written by run --save-models")
    cert.add_argument("--samples", type=int, default=1000)
    cert.add_argument("--seed", type=int, default=0)

    syn = sub.add_parser("synth", help="write a synthetic skeleton dataset as JSONL")
    syn.add_argument("--out", required=True)
    syn.add_argument("--synth", type=parse_kv, default={},
                     help="classes=..,per_class=..,joints=..,frames=..,noise=..,test_per_class=..")
    syn.add_argument("--seed", type=int, default=0)
    return parser


def overrides_from_args(args):
    """Nested config dict holding only the flags given on the command line."""
    doc = {}
    for key, value in vars(args).items():
        if not key.startswith("cfg:") or value is None:
            continue
        path = key[4:].split(".")
        node = doc
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = value
    return doc


def load_config(args):
    """Defaults, then the config file, then command-line flags."""
    doc = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
    for key, value in overrides_from_args(args).items():
        if isinstance(value, dict) and isinstance(doc.get(key), dict):
            doc[key] = {**doc[key], **value}
        else:
            doc[key] = value
    return ExperimentConfig.from_dict(doc)


def cmd_run(args):
    config = load_config(args)
    outcome = run_grid(config)
    sys.stdout.write(outcome.table.to_text())
    print(f"results: {outcome.out / 'results.csv'}")
    if outcome.n_failed:
        print(f"{outcome.n_failed} of {len(outcome.cells)} cells failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_report(args):
    rows = report(args.records, args.out)
    print(f"{len(rows)} rows -> {args.out}")
    return EXIT_OK


def cmd_certify(args):
    try:
        net, _, _ = load_checkpoint(args.model)
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    cert = certify(net, args.seed, args.samples)
    print(json.dumps(cert.summary(), indent=2))
    return EXIT_OK if cert.valid else EXIT_PARTIAL


def cmd_synth(args):
    spec = {**DEFAULTS["synth"], **args.synth}
    unknown = set(spec) - set(DEFAULTS["synth"])
    if unknown:
        raise ConfigError(f"unknown synth keys {sorted(unknown)}")
    try:
        seqs = synth_sequences(spec["classes"], spec["per_class"], spec["joints"], spec["frames"],
                               spec["noise"], args.seed, test_per_class=spec["test_per_class"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    save_dataset(seqs, args.out)
    print(f"{len(seqs)} sequences -> {args.out}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "report": cmd_report, "certify": cmd_certify, "synth": cmd_synth}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DatasetFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
