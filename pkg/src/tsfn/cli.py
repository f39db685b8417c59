"""Command-line entry point: ``python -m tsfn <subcommand> ...``.

Exit codes: 0 success, 1 validation failure or bad usage, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .errors import TSFNError
from .losses import LossWeights
from .metrics import Metrics, emit_distance_curve, report_comparison

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _read_json(path) -> dict:
    with open(path) as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise TSFNError(f"{path}: expected a JSON object")
    return data


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.replace("-", "_")] = _parse_value(value)
    return out


def _write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# -- subcommands ------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .synth import SynthConfig, generate_dataset, manifest_digest
    cfg = _read_json(args.config) if args.config else {}
    cfg.update(_overrides(args.set))
    if args.seed is not None:
        cfg["seed"] = args.seed
    synth = SynthConfig.from_dict(cfg)
    out = args.out or "data"
    manifest = generate_dataset(synth, out, overwrite=args.overwrite)
    print(f"wrote {len(manifest.samples)} clips to {out} "
          f"(manifest sha256 {manifest_digest(Path(out) / 'manifest.json')})")
    return EXIT_OK


def _train_config(args):
    from .train import TrainConfig
    cfg = _read_json(args.config) if args.config else {}
    cfg.update(_overrides(args.set))
    for key, value in (("manifest", args.manifest), ("checkpoint_path", args.out),
                       ("seed", args.seed), ("epochs", args.epochs),
                       ("learning_rate", args.lr), ("batch_size", args.batch_size),
                       ("optimizer", args.optimizer), ("ablation", args.ablation),
                       ("log_path", args.log)):
        if value is not None:
            cfg[key] = value
    return TrainConfig.from_dict(cfg)


def cmd_train(args) -> int:
    from .train import train
    config = _train_config(args)
    if not Path(config.manifest, "manifest.json").exists():
        raise FileNotFoundError(f"no manifest.json under {config.manifest}")
    result = train(config, progress=None if args.quiet else print)
    print(f"checkpoint {result.checkpoint_path}, log {result.log_path}, steps {result.step_log_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .train import evaluate
    weights = LossWeights(**_read_json(args.loss_weights)) if args.loss_weights else None
    metrics = evaluate(args.checkpoint, args.manifest, args.split, args.ablation,
                       components=args.components, weights=weights, dump_path=args.dump)
    print(f"accuracy {metrics.accuracy:.4f}  loss {metrics.mean_loss:.4f}  mAP {metrics.mAP:.4f}"
          f"  ({metrics.n_samples} samples)")
    if metrics.components:
        print("components " + " ".join(f"{k}={v:.4f}" for k, v in metrics.components.items()))
    for w in metrics.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.out:
        _write_json(args.out, metrics.to_dict())
    return EXIT_OK


def _load_metrics(path) -> Metrics:
    return Metrics.from_dict(_read_json(path))


def cmd_curve(args) -> int:
    metrics = _load_metrics(args.metrics)
    out = args.out or "distance_curve.csv"
    emit_distance_curve(metrics, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    results = []
    for item in args.result:
        name, sep, path = item.partition("=")
        if not sep:
            raise UsageError(f"--result expects name=metrics.json, got {item!r}")
        results.append((name, _load_metrics(path)))
    text = report_comparison(results, args.out or "comparison.csv")
    print(text, end="")
    return EXIT_OK


def _report(checks) -> int:
    for c in checks:
        print(c.line())
    worst = max(c.value for c in checks if "corrupted" not in c.name)
    print(f"max error {worst:.3g}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_INVALID


def cmd_gradcheck(args) -> int:
    from .selfcheck import run_gradcheck_suite
    return _report(run_gradcheck_suite(args.seed or 0))


def cmd_oracle(args) -> int:
    from .selfcheck import run_oracle_suite
    return _report(run_oracle_suite(args.seed or 0, args.instances))


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--config", help="JSON config file (snake_case field names)")
    common.add_argument("--out", help="output path")

    parser = _Parser(prog="tsfn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="render and degrade the synthetic corpus")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a SynthConfig field")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train on a generated corpus")
    p.add_argument("--manifest", help="dataset directory holding manifest.json")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--optimizer", choices=("sgd", "sgd_momentum", "adam"))
    p.add_argument("--ablation", choices=("full", "tcn_only", "r2plus1d_only"))
    p.add_argument("--log", help="per-epoch CSV log path")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a TrainConfig field")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint; --out writes metrics JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--ablation", default="full", choices=("full", "tcn_only", "r2plus1d_only"))
    p.add_argument("--components", action="store_true", help="also report composite-loss terms")
    p.add_argument("--loss-weights", help="JSON LossWeights used with --components")
    p.add_argument("--dump", help="write per-sample predictions CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("curve", parents=[common], help="accuracy-vs-distance CSV from metrics JSON")
    p.add_argument("--metrics", required=True)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("compare", parents=[common], help="comparison table from metrics JSON files")
    p.add_argument("--result", action="append", required=True, metavar="NAME=METRICS_JSON")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("oracle", parents=[common], help="brute-force conv / mAP / loss oracles")
    p.add_argument("--instances", type=int, default=100)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TSFNError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
