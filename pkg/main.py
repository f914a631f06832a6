"""
Grasp Quality Lab - command-line entry point
"""

import os

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# BLAS pools read these once, when numpy is first imported
for _variable in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_variable, os.getenv("GF_THREADS", "1"))

import argparse
import configparser
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import cv2
import numpy as np
import pandas as pd
from pydantic import ValidationError

from grasp_quality import model as gq_model
from grasp_quality.augment import augment_arrays
from grasp_quality.data import generate_synthetic, load_dataset, save_dataset, split
from grasp_quality.errors import (
    ConfigError,
    GradientCheckError,
    RuntimeFailure,
    ValidationFailure,
)
from grasp_quality.evaluation import accuracy, calibration, predict
from grasp_quality.experiments import ablation_grid, split_comparison, standard_ablation_rows
from grasp_quality.gradcheck import grad_check_parameters
from grasp_quality.layers import softmax_cross_entropy
from grasp_quality.optim import AUGMENT_STREAM, input_stats, train
from grasp_quality.reports import emit_report, read_grid_file
from utils.data_models import (
    FlipMode,
    Mode,
    ModelConfig,
    ReportKind,
    RunConfig,
    SceneParams,
    SplitKind,
)
from utils.helpers import (
    configure_logging,
    derive_rng,
    format_response_message,
    setup_run_logger,
    write_manifest,
)

logger = logging.getLogger(__name__)

GRADCHECK_THRESHOLD = 1e-4
# Small enough that no perturbation crosses a ReLU or max-pool kink
GRADCHECK_EPSILON = 1e-8
PGM_METERS_PER_COUNT = 1e-5
CONFIG_SECTIONS = {"run", "paths", "split", "train", "augment", "model"}

# argparse dest -> (config section, key)
FLAG_FIELDS = {
    "seed": ("run", "seed"),
    "preset": ("model", "preset"),
    "data": ("paths", "data_path"),
    "model": ("paths", "model_path"),
    "out": ("paths", "out_dir"),
    "kind": ("split", "kind"),
    "fraction": ("split", "train_fraction"),
    "epochs": ("train", "epochs"),
    "batch_size": ("train", "batch_size"),
    "lr": ("train", "base_lr"),
    "decay_every": ("train", "decay_every"),
    "weight_decay": ("train", "weight_decay"),
    "normalize": ("augment", "normalize"),
    "symmetrize": ("augment", "symmetrize"),
    "mult_pixels": ("augment", "mult_pixels"),
    "mult_adjust_z": ("augment", "mult_adjust_z"),
    "gp_noise": ("augment", "gp_noise"),
    "flip_mode": ("augment", "flip_mode"),
}


class CliParser(argparse.ArgumentParser):
    """Usage errors go to stderr with exit code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# Configuration


def read_config_file(path: str) -> Dict[str, Dict[str, str]]:
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle)
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except configparser.Error as e:
        raise ConfigError(f"malformed config file {path}: {e}") from e
    unknown = set(parser.sections()) - CONFIG_SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    return {section: dict(parser.items(section)) for section in parser.sections()}


def resolve_run_config(args: argparse.Namespace, default_seed: Optional[int] = None) -> RunConfig:
    """Config file values overridden by explicit flags, validated as one RunConfig"""
    sections: Dict[str, Dict[str, Any]] = {name: {} for name in CONFIG_SECTIONS}
    if getattr(args, "config", None):
        for name, values in read_config_file(args.config).items():
            sections[name].update(values)
    for dest, (section, key) in FLAG_FIELDS.items():
        value = getattr(args, dest, None)
        if value is not None:
            sections[section][key] = value

    seed = sections["run"].pop("seed", default_seed)
    if seed is None:
        raise ConfigError("a seed is required (--seed or [run] seed)")
    if sections["run"]:
        raise ConfigError(f"unknown [run] keys {sorted(sections['run'])}")
    sections["train"].setdefault("seed", seed)
    sections["split"].setdefault("seed", seed)
    model_section = sections["model"]
    preset = model_section.pop("preset", "default")
    if model_section:
        raise ConfigError(f"unknown [model] keys {sorted(model_section)}")

    return RunConfig(
        seed=seed,
        model_preset=preset,
        train=sections["train"],
        augment=sections["augment"],
        split=sections["split"],
        **sections["paths"],
    )


def require_file(path: Optional[str], what: str) -> Path:
    if not path:
        raise ConfigError(f"{what} path is required")
    if not Path(path).is_file():
        raise ConfigError(f"{what} {path} does not exist")
    return Path(path)


def output_dir(run: RunConfig) -> Path:
    if not run.out_dir:
        raise ConfigError("--out is required")
    out = Path(run.out_dir)
    if out.exists() and not out.is_dir():
        raise ConfigError(f"--out {out} is not a directory")
    return out


def model_config(run: RunConfig) -> ModelConfig:
    return ModelConfig.preset(run.model_preset, init_seed=run.seed)


# Commands


def cmd_generate_data(args, run: RunConfig) -> List[Path]:
    if args.n < 1:
        raise ConfigError(f"--n must be at least 1, got {args.n}")
    params = SceneParams(seed=run.seed)
    out = output_dir(run)
    dataset = generate_synthetic(params, args.n)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "dataset.gfd"
    save_dataset(dataset, path)
    return [path]


def cmd_split(args, run: RunConfig) -> List[Path]:
    dataset = load_dataset(require_file(run.data_path, "--data"))
    out = output_dir(run)
    train_ids, val_ids = split(dataset, run.split)
    subset = np.where(np.isin(dataset.image_ids, train_ids), "train", "val")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "split.csv"
    pd.DataFrame({"image_id": dataset.image_ids, "subset": subset}).to_csv(
        path, index=False, lineterminator="\n"
    )
    logger.info(f"{len(train_ids)} train / {len(val_ids)} val image ids")
    return [path]


def cmd_train(args, run: RunConfig) -> List[Path]:
    dataset = load_dataset(require_file(run.data_path, "--data"))
    out = output_dir(run)
    config = model_config(run)
    network = gq_model.build(config)
    splits = split(dataset, run.split)
    network, history = train(network, dataset, splits, run.augment, run.train)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint = out / "model.gfm"
    gq_model.save(network, checkpoint)
    return [checkpoint, *emit_report(history, out / "history", ReportKind.HISTORY)]


def _evaluation_inputs(run: RunConfig):
    network = gq_model.load(require_file(run.model_path, "--model"))
    dataset = load_dataset(require_file(run.data_path, "--data"))
    out = output_dir(run)
    train_ids, val_ids = split(dataset, run.split)
    if network.normalized is False:
        stats = None
    elif network.norm_stats is not None:
        stats = network.norm_stats
    else:
        # untrained checkpoints follow the run's own augment settings
        stats = input_stats(dataset, train_ids, run.augment)
    return network, dataset, out, train_ids, val_ids, stats


def cmd_evaluate(args, run: RunConfig) -> List[Path]:
    network, dataset, out, train_ids, val_ids, stats = _evaluation_inputs(run)
    rows = []
    for subset, ids in (("train", train_ids), ("val", val_ids)):
        probs = predict(network, dataset, ids, stats)
        score = accuracy(probs, dataset.labels[dataset.positions(ids)])
        rows.append(
            {
                "split": run.split.kind.value,
                "subset": subset,
                "examples": len(ids),
                "accuracy": score,
            }
        )
        print(f"{subset} accuracy: {score:.2f}% over {len(ids)} examples")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "evaluation.csv"
    pd.DataFrame(rows).to_csv(path, index=False, lineterminator="\n")
    return [path]


def cmd_calibrate(args, run: RunConfig) -> List[Path]:
    if args.buckets < 2:
        raise ConfigError(f"--buckets must be at least 2, got {args.buckets}")
    network, dataset, out, _, val_ids, stats = _evaluation_inputs(run)
    probs = predict(network, dataset, val_ids, stats)
    report = calibration(probs, dataset.labels[dataset.positions(val_ids)], args.buckets)
    print(f"ECE {report.ece:.4f}, MCE {report.mce:.4f} over {report.total} examples")
    out.mkdir(parents=True, exist_ok=True)
    return emit_report(report, out / "calibration", ReportKind.CALIBRATION)


def cmd_ablate(args, run: RunConfig) -> List[Path]:
    if args.grid_file:
        rows = read_grid_file(require_file(args.grid_file, "--grid-file"))
    else:
        rows = standard_ablation_rows()
    dataset = load_dataset(require_file(run.data_path, "--data"))
    out = output_dir(run)
    results = ablation_grid(
        dataset, rows, run.train, model_config(run), train_fraction=run.split.train_fraction
    )
    out.mkdir(parents=True, exist_ok=True)
    return emit_report(results, out / "ablation", ReportKind.ABLATION)


def cmd_compare_splits(args, run: RunConfig) -> List[Path]:
    dataset = load_dataset(require_file(run.data_path, "--data"))
    out = output_dir(run)
    results = split_comparison(
        dataset, None, run.train, model_config(run), train_fraction=run.split.train_fraction
    )
    out.mkdir(parents=True, exist_ok=True)
    return emit_report(results, out / "splits", ReportKind.SPLITS)


def to_pgm_counts(image: np.ndarray) -> np.ndarray:
    counts = np.rint(np.asarray(image, dtype=np.float64) / PGM_METERS_PER_COUNT)
    return np.clip(counts, 0, np.iinfo(np.uint16).max).astype(np.uint16)


def cmd_augment_preview(args, run: RunConfig) -> List[Path]:
    if args.count < 1:
        raise ConfigError(f"--count must be at least 1, got {args.count}")
    dataset = load_dataset(require_file(run.data_path, "--data"))
    out = output_dir(run)
    raw_heights = run.augment.model_copy(update={"normalize": False})
    out.mkdir(parents=True, exist_ok=True)
    written, rows = [], []
    for row in range(min(args.count, len(dataset))):
        example = dataset.example(row)
        rng = derive_rng(run.train.seed, AUGMENT_STREAM, example.image_id, 1)
        image, z, draws = augment_arrays(example.image, example.z, raw_heights, None, rng)
        for tag, picture in (("orig", example.image), ("aug", image)):
            path = out / f"preview_{example.image_id:06d}_{tag}.pgm"
            if not cv2.imwrite(str(path), to_pgm_counts(picture)):
                raise OSError(f"cannot write {path}")
            written.append(path)
        rows.append(
            {
                "image_id": example.image_id,
                "label": example.label,
                "z": example.z,
                "z_augmented": z,
                "flip_vertical": draws.flip_vertical,
                "flip_horizontal": draws.flip_horizontal,
                "gain": draws.gain,
                "gp_applied": draws.gp_applied,
            }
        )
    table = out / "preview.csv"
    pd.DataFrame(rows).to_csv(table, index=False, lineterminator="\n")
    return [*written, table]


def cmd_gradcheck(args, run: RunConfig) -> List[Path]:
    """Finite-difference check of every layer of a tiny double-precision network"""
    out = Path(run.out_dir) if run.out_dir else None
    network = gq_model.build(ModelConfig.tiny(init_seed=run.seed), dtype=np.float64)
    rng = derive_rng(run.seed, 0)
    size = network.config.image_size
    images = rng.normal(0.0, 1.0, size=(args.batch, 1, size, size))
    depths = rng.uniform(0.0, 1.0, size=args.batch)
    labels = np.arange(args.batch) % 2

    def loss_fn():
        logits = gq_model.forward_logits(network, images, depths, Mode.TRAIN)
        return softmax_cross_entropy(logits, labels)

    errors = grad_check_parameters(loss_fn, network.named_parameters(), epsilon=GRADCHECK_EPSILON)
    per_layer: Dict[str, float] = {}
    for name, error in errors.items():
        layer = name.split(".bn.")[0] if ".bn." in name else name.rsplit(".", 1)[0]
        per_layer[layer] = max(per_layer.get(layer, 0.0), error)
    for layer, error in per_layer.items():
        print(f"{layer:<16} {error:.3e} {'ok' if error < GRADCHECK_THRESHOLD else 'FAIL'}")

    written = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "gradcheck.csv"
        pd.DataFrame(
            {"layer": list(per_layer), "max_relative_error": list(per_layer.values())}
        ).to_csv(path, index=False, lineterminator="\n")
        written.append(path)
    worst = max(per_layer.values())
    if worst >= GRADCHECK_THRESHOLD:
        raise GradientCheckError(
            f"max relative error {worst:.3e} exceeds {GRADCHECK_THRESHOLD}"
        )
    return written


# Parser


def _add_common(parser: argparse.ArgumentParser, out_required: bool = True) -> None:
    parser.add_argument("--config", help="INI run config; flags override its values")
    parser.add_argument("--seed", type=int, help="Root seed of every random stream")
    parser.add_argument("--out", help="Output directory" + ("" if out_required else " (optional)"))


def _add_split(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--kind", "--split", dest="kind", choices=[k.value for k in SplitKind])
    parser.add_argument("--fraction", type=float, help="Share of keys in the train split")


def _add_training(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", help="Dataset file (GFD1)")
    parser.add_argument("--preset", choices=["default", "compact", "tiny"], help="Architecture")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--lr", type=float, help="Base learning rate")
    parser.add_argument("--decay-every", type=int, help="Steps between learning-rate decays")
    parser.add_argument("--weight-decay", type=float)
    _add_augment(parser)


def _add_augment(parser: argparse.ArgumentParser) -> None:
    for flag in ("normalize", "symmetrize", "mult-pixels", "mult-adjust-z", "gp-noise"):
        parser.add_argument(f"--{flag}", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--flip-mode", choices=[m.value for m in FlipMode])


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog="gqcnn-lab", description="Grasp quality CNN toolkit")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p = commands.add_parser("generate-data", help="Render a synthetic grasp dataset")
    _add_common(p)
    p.add_argument("--n", type=int, required=True, help="Number of examples")

    p = commands.add_parser("split", help="Write a train/validation partition")
    _add_common(p)
    p.add_argument("--data", help="Dataset file (GFD1)")
    _add_split(p)

    p = commands.add_parser("train", help="Train a network and write its checkpoint")
    _add_common(p)
    _add_split(p)
    _add_training(p)

    for name, help_text in (
        ("evaluate", "Accuracy of a checkpoint"),
        ("calibrate", "Calibration report of the validation split"),
    ):
        p = commands.add_parser(name, help=help_text)
        _add_common(p)
        _add_split(p)
        p.add_argument("--model", help="Checkpoint file (GFM1)")
        p.add_argument("--data", help="Dataset file (GFD1)")
        p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=None)
        if name == "calibrate":
            p.add_argument("--buckets", type=int, default=10)

    p = commands.add_parser("ablate", help="Augmentation ablation grid")
    _add_common(p)
    _add_split(p)
    _add_training(p)
    p.add_argument("--grid-file", help="CSV of augmentation rows; defaults to the standard four")

    p = commands.add_parser("compare-splits", help="Augmentation settings across split protocols")
    _add_common(p)
    _add_split(p)
    _add_training(p)

    p = commands.add_parser("augment-preview", help="Write augmented crops as 16-bit PGM")
    _add_common(p)
    p.add_argument("--data", help="Dataset file (GFD1)")
    p.add_argument("--count", type=int, default=8)
    _add_augment(p)

    p = commands.add_parser("gradcheck", help="Finite-difference check of every layer")
    _add_common(p, out_required=False)
    p.add_argument("--batch", type=int, default=4)
    return parser


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], List[Path]]] = {
    "generate-data": cmd_generate_data,
    "split": cmd_split,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "calibrate": cmd_calibrate,
    "ablate": cmd_ablate,
    "compare-splits": cmd_compare_splits,
    "augment-preview": cmd_augment_preview,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; 0 on success, 1 on validation errors, 2 on runtime errors"""
    configure_logging()
    setup_run_logger()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1

    try:
        run = resolve_run_config(args, default_seed=0 if args.command == "gradcheck" else None)
        written = COMMANDS[args.command](args, run)
        if written and run.out_dir:
            written.append(write_manifest(run.out_dir, written))
        logger.info(format_response_message(args.command, len(written)))
        return 0
    except (ValidationFailure, ValidationError) as e:
        logger.error(f"Invalid input for {args.command}: {e}")
        return 1
    except (RuntimeFailure, OSError) as e:
        logger.error(f"Error in {args.command}: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
