"""
Command-line entry point: ``python -m app <command> --config run.yaml``.

Commands: train, evaluate, report, inspect-model, fetch-cifar. Exit codes:
0 on success, 1 on a toolkit error, 2 on an invalid configuration.
"""
import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import yaml
from pydantic import ValidationError

from .attacks import build_threat, effective_preset
from .cifar_client import fetch_cifar10
from .config import configure_logging
from .datasets import build_dataset
from .exceptions import ConfigurationError, RobustnessError
from .model_store import Provenance, read_model_file, save_model, summarize_model
from .models import EvalConfig, RunConfig, TransformSection
from .preprocessing import PreprocessTransform, TransformKind, fit_transform
from .reporting import attack_label, merge_reports, output_stem, render_outputs, write_outputs
from .services import EvaluationService
from .trainer import ARCHITECTURES, train

logger = logging.getLogger(__name__)

COMMANDS_WITH_CONFIG = ("train", "evaluate", "report")


# --- run configuration ---------------------------------------------------

def apply_override(raw: Dict[str, Any], assignment: str) -> None:
    """
    Apply one ``key.path=value`` override to a raw config mapping in place.

    The value is parsed as YAML, so ``0.5`` stays a number and ``[1, 2]`` a
    list. Integer path components index into lists (``evaluate.attacks.0.epsilon``).
    """
    key, sep, value = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigurationError(f"override {assignment!r} is not of the form key.path=value")
    parts = key.strip().split(".")
    node: Any = raw
    for depth, part in enumerate(parts[:-1]):
        if isinstance(node, list):
            node = node[_list_index(node, part, parts[:depth + 1])]
        else:
            node = node.setdefault(part, {})
        if not isinstance(node, (dict, list)):
            raise ConfigurationError(f"override {key!r}: {'.'.join(parts[:depth + 1])} is not a section")
    parsed = yaml.safe_load(value)
    if isinstance(node, list):
        node[_list_index(node, parts[-1], parts)] = parsed
    else:
        node[parts[-1]] = parsed


def _list_index(node: list, part: str, path: Sequence[str]) -> int:
    try:
        index = int(part)
        node[index]
    except (ValueError, IndexError):
        raise ConfigurationError(f"override path {'.'.join(path)!r}: no list item {part!r}") from None
    return index


def load_run_config(path: Optional[Path], command: str, overrides: Sequence[str] = ()) -> RunConfig:
    """Read YAML, apply overrides, and validate only the section ``command`` needs."""
    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config file {path} is not valid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError(f"config file {path} must contain a mapping")
    for assignment in overrides:
        apply_override(raw, assignment)
    return RunConfig.model_validate({"seed": raw.get("seed", 0), command: raw.get(command) or {}})


# --- shared builders -----------------------------------------------------

def build_transform(section: TransformSection, images: np.ndarray) -> PreprocessTransform:
    """Explicit statistics win; missing ones are fitted on ``images`` when ``fit`` is set."""
    kind = TransformKind(section.kind)
    if kind is TransformKind.IDENTITY:
        return PreprocessTransform.identity()
    fitted = fit_transform(kind, images) if section.fit else None
    channels, height, width = images.shape[1:]
    if kind is TransformKind.MEAN_PIXEL_SUBTRACT:
        if section.mean is not None:
            mean = np.broadcast_to(np.asarray(section.mean, dtype=np.float64).reshape(-1, 1, 1),
                                   (channels, height, width))
            return PreprocessTransform.mean_pixel_subtract(mean)
        if fitted is None:
            raise ConfigurationError("mean_pixel_subtract needs `mean` or `fit: true`")
        return fitted
    mean = section.mean if section.mean is not None else (fitted.mean if fitted else None)
    std = section.std if section.std is not None else (fitted.std if fitted else None)
    if mean is None or std is None:
        raise ConfigurationError("per_channel_normalize needs `mean` and `std`, or `fit: true`")
    return PreprocessTransform.per_channel_normalize(mean, std)


# --- commands ------------------------------------------------------------

def cmd_train(config: RunConfig, progress: bool = False) -> Path:
    """Train the configured architecture, save it with its pre-processing, and print clean accuracy."""
    section = config.train
    dtype = np.dtype(section.dtype)
    dataset = build_dataset(section.dataset, dtype)
    transform = build_transform(section.transform, dataset.images)
    optimizer = section.optimizer
    network = ARCHITECTURES[section.architecture](
        input_shape=dataset.images.shape[1:], num_classes=dataset.num_classes,
        seed=optimizer.seed, init=optimizer.init, dtype=dtype)
    logger.info("Training %s (%d parameters) on %d samples", section.architecture,
                network.parameter_count(), len(dataset))
    result = train(network, dataset, optimizer, transform, progress=progress)

    train_accuracy = EvaluationService(result.network, transform).clean_accuracy(dataset)
    evaluated = build_dataset(section.eval_dataset, dtype) if section.eval_dataset else dataset
    accuracy = (train_accuracy if evaluated is dataset
                else EvaluationService(result.network, transform).clean_accuracy(evaluated))
    provenance = Provenance(architecture=section.architecture, training_seed=optimizer.seed,
                            epochs=optimizer.epochs, train_accuracy=train_accuracy, loss_curve=result.loss_curve)
    path = save_model(result.network, transform, section.model_path, provenance)
    print(f"clean accuracy ({evaluated.split}): {accuracy:.4f}")
    print(f"model written to {path}")
    return path


def cmd_evaluate(config: RunConfig, progress: bool = False) -> List[Path]:
    """
    One EvalReport per (model, attack) pair, written together once every pair finished.

    Threat models are validated before any model is attacked, and nothing is
    written when a later pair fails.
    """
    section = config.evaluate
    dtype = np.dtype(section.dtype)
    runs = []
    for spec in section.attacks:
        threat = build_threat(spec.preset, spec.norm, spec.epsilon, spec.alpha, spec.space,
                              spec.iterations, spec.restarts)
        preset = effective_preset(spec.preset, threat)
        eval_config = EvalConfig(threat=threat, attack_preset=preset, post_quantize=spec.post_quantize,
                                 seed=config.seed, batch_size=section.batch_size)
        runs.append((attack_label(spec, threat.norm.value, preset), eval_config))
    stems = Counter(output_stem(entry.name, label) for entry in section.models for label, _ in runs)
    clashes = sorted(stem for stem, count in stems.items() if count > 1)
    if clashes:
        raise ConfigurationError(f"model and attack names collide in output files: {', '.join(clashes)}")

    dataset = build_dataset(section.dataset, dtype)
    reports = []
    for entry in section.models:
        loaded = read_model_file(entry.path)
        service = EvaluationService(loaded.network.astype(dtype), loaded.transform, model_name=entry.name,
                                    progress=progress)
        for label, eval_config in runs:
            reports.append(service.robust_accuracy(dataset, eval_config, label=label))
    for report in reports:
        print(f"{report.model_name:<20} {report.label:<28} clean={report.clean_accuracy:.4f} "
              f"robust={report.robust_accuracy:.4f}")
    return write_outputs(render_outputs(reports), section.output_dir)


def cmd_report(config: RunConfig) -> List[Path]:
    section = config.report
    written = write_outputs(merge_reports(section.inputs), section.output_dir)
    print(Path(section.output_dir, "comparison.csv").read_text(encoding="utf-8"), end="")
    return written


def cmd_inspect_model(path: Path, as_json: bool = False) -> Dict[str, Any]:
    summary = summarize_model(read_model_file(path))
    if as_json:
        print(json.dumps(summary, indent=2))
        return summary
    layers = pd.DataFrame(summary["layers"]).set_index("index")
    layers["hyperparameters"] = layers["hyperparameters"].map(
        lambda h: ", ".join(f"{k}={v}" for k, v in h.items()))
    print(f"input shape: {tuple(summary['input_shape'])}  classes: {summary['num_classes']}  "
          f"dtype: {summary['dtype']}")
    print(layers.to_string())
    print(f"total trainable parameters: {summary['total_parameters']}")
    print(f"transform: {json.dumps(summary['transform'])}")
    provenance = {k: v for k, v in summary["provenance"].items() if k != "loss_curve" and v is not None}
    if provenance:
        print(f"provenance: {json.dumps(provenance)}")
    return summary


# --- argument parsing ----------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustkit", description="Adversarial robustness evaluation toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("--quiet", action="store_true", help="Warnings only, no progress bars")
    commands = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (("train", "Train a model and write a model file"),
                            ("evaluate", "Attack models and write reports"),
                            ("report", "Merge evaluation outputs into one comparison table")):
        command = commands.add_parser(name, help=help_text)
        command.add_argument("--config", type=Path, required=True, help="Run-config YAML file")
        command.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                             help="Override a config value, e.g. evaluate.attacks.0.epsilon=0.01")

    inspect = commands.add_parser("inspect-model", help="Print the topology and metadata of a model file")
    inspect.add_argument("path", type=Path)
    inspect.add_argument("--json", action="store_true", help="Machine-readable output")

    fetch = commands.add_parser("fetch-cifar", help="Download and unpack the CIFAR-10 binary archive")
    fetch.add_argument("--dest", type=Path, default=Path("data"))
    return parser


def _print_validation_error(exc: ValidationError) -> None:
    print("invalid configuration:", file=sys.stderr)
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "<root>"
        print(f"  {location}: {error['msg']}", file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO)
    progress = not args.quiet and sys.stderr.isatty()
    try:
        if args.command in COMMANDS_WITH_CONFIG:
            config = load_run_config(args.config, args.command, args.overrides)
            if args.command == "train":
                cmd_train(config, progress)
            elif args.command == "evaluate":
                cmd_evaluate(config, progress)
            else:
                cmd_report(config)
        elif args.command == "inspect-model":
            cmd_inspect_model(args.path, args.json)
        else:
            print(fetch_cifar10(args.dest))
    except ValidationError as exc:
        _print_validation_error(exc)
        return 2
    except RobustnessError as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
