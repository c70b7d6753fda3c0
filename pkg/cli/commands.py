import argparse
import json
import sys
from collections.abc import Callable, Iterable
from pathlib import Path

import numpy as np

from algorithm.adversarial import parse_attack, run_attack
from algorithm.confidence import density_confidence, fit_densities_arrays
from algorithm.distortions import ImageGrid, apply_distortion, parse_distortion
from algorithm.netcore import (
    Sample,
    TrainConfig,
    accuracy,
    forward,
    forward_batch,
    init_params,
    mlp_specs,
    train,
)
from core.config import get_settings
from core.errors import FormatError, InputError, UsageError
from core.logging import get_logger
from schemas.models import ANNULUS_COLUMNS, AttackResultDocument
from services.dataset_service import (
    DatasetService,
    load_idx_images,
    load_idx_labels,
    load_idx_shape,
    write_idx,
    write_pgm,
)
from services.experiment_service import (
    ExperimentService,
    annulus_sweep,
    load_experiment_config,
    scaling_pathology_demo,
    write_csv,
)
from services.persistence_service import PersistenceService

logger = get_logger(__name__)

dataset_service = DatasetService()
persistence_service = PersistenceService()
experiment_service = ExperimentService()


# ─────────────────────────────────────────────────────────────────────────────
# Path validation (before any work)
# ─────────────────────────────────────────────────────────────────────────────

def _require_inputs(paths: Iterable[str | Path]) -> list[Path]:
    resolved = []
    for path in paths:
        candidate = Path(path)
        if not candidate.is_file():
            raise FormatError(candidate, 0, "file not found")
        resolved.append(candidate.resolve())
    return resolved


def _check_output(out: str | Path, inputs: Iterable[Path]) -> Path:
    target = Path(out)
    if target.resolve() in set(inputs):
        raise UsageError(f"output {target} would overwrite an input file")
    if target.parent and not target.parent.exists():
        target.parent.mkdir(parents=True, exist_ok=True)
    return target


def _load_image(path: str | Path, index: int) -> Sample:
    images = load_idx_images(path)
    if not 0 <= index < images.shape[0]:
        raise InputError(f"--index {index} outside [0, {images.shape[0]}) for {path}")
    return Sample(pixels=images[index])


# ─────────────────────────────────────────────────────────────────────────────
# Commands
# ─────────────────────────────────────────────────────────────────────────────

def cmd_train(args: argparse.Namespace) -> int:
    inputs = _require_inputs(dataset_service.paths(args.data, "train"))
    out = _check_output(args.out, inputs)
    cfg = TrainConfig(
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        use_bias=not args.no_bias,
    )

    logger.info("[1/3] loading %s", args.data)
    data = dataset_service.resolve(args.data, "train", limit=args.limit)
    if not data:
        raise InputError(f"dataset {args.data} yielded no samples")
    n_classes = max(s.label for s in data) + 1

    logger.info("[2/3] training %s", "→".join(map(str, [data[0].dim, *args.hidden, n_classes])))
    params = init_params(mlp_specs(data[0].dim, args.hidden, n_classes), seed=args.seed)
    params = train(params, data, cfg)
    logger.info("  training accuracy %.4f", accuracy(params, data))

    logger.info("[3/3] writing %s", out)
    persistence_service.save_model(params, out)
    return 0


def cmd_fit_density(args: argparse.Namespace) -> int:
    inputs = _require_inputs([args.model, *dataset_service.paths(args.data, "train")])
    out = _check_output(args.out, inputs)

    params = persistence_service.load_model(args.model)
    data = dataset_service.resolve(args.data, "train", limit=args.limit)
    features = forward_batch(params, np.stack([s.pixels for s in data]))
    labels = np.array([s.label for s in data])
    persistence_service.save_density(fit_densities_arrays(features, labels, variance_scale=args.variance_scale), out)
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    _require_inputs([args.model, args.density, args.input])
    params = persistence_service.load_model(args.model)
    density_model = persistence_service.load_density(args.density)
    sample = _load_image(args.input, args.index)
    report = density_confidence(density_model, forward(params, sample))
    sys.stdout.write(report.model_dump_json() + "\n")
    return 0


def cmd_distort(args: argparse.Namespace) -> int:
    inputs = _require_inputs([args.input])
    out = _check_output(args.out, inputs)
    suffix = out.suffix.lower()
    if suffix not in get_settings().allowed_image_outputs:
        raise UsageError("--out must end in .idx or .pgm")
    if suffix == ".pgm" and args.index is None:
        raise UsageError("--index is required for .pgm output")

    spec = parse_distortion(args.distortion)
    rows, cols = load_idx_shape(args.input)
    images = load_idx_images(args.input)
    indices = range(images.shape[0]) if args.index is None else [args.index]
    if args.index is not None and not 0 <= args.index < images.shape[0]:
        raise InputError(f"--index {args.index} outside [0, {images.shape[0]})")

    distorted = [
        apply_distortion(
            ImageGrid.from_vector(images[i], width=cols, height=rows),
            parse_distortion(args.distortion, seed=args.seed + i),
        )
        for i in indices
    ]
    if suffix == ".pgm":
        write_pgm(distorted[0], out)
    else:
        write_idx(np.stack([img.to_vector() for img in distorted]), rows, cols, out)
    logger.info("%s applied to %d image(s) → %s", spec.kind, len(distorted), out)
    return 0


def cmd_attack(args: argparse.Namespace) -> int:
    inputs = _require_inputs([p for p in (args.model, args.input, args.labels) if p])
    out = _check_output(args.out, inputs) if args.out else None
    spec = parse_attack(args.attack)

    params = persistence_service.load_model(args.model)
    sample = _load_image(args.input, args.index)
    if args.labels:
        labels = load_idx_labels(args.labels)
        if not 0 <= args.index < labels.shape[0]:
            raise InputError(f"--index {args.index} outside [0, {labels.shape[0]}) for {args.labels}")
        sample = Sample(pixels=sample.pixels, label=int(labels[args.index]))
    elif spec.kind == "fgsm":
        raise UsageError("fgsm needs --labels (the loss uses the true label)")

    result = run_attack(params, sample, spec)
    document = AttackResultDocument(
        attack=spec.describe(),
        original_label=result.original_label,
        perturbed_label=result.perturbed_label,
        true_label=sample.label,
        flipped=result.flipped,
        iterations=result.iterations,
        perturbation_norm=result.perturbation_norm,
        original=result.original.pixels.tolist(),
        perturbed=result.perturbed.pixels.tolist(),
    )
    if out is None:
        sys.stdout.write(document.model_dump_json() + "\n")
    else:
        out.write_text(document.model_dump_json(), encoding="utf-8")
        logger.info("label %d → %d (flipped=%s) → %s", result.original_label, result.perturbed_label, result.flipped, out)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    _require_inputs([args.config])
    config = load_experiment_config(args.config)
    _require_inputs([config.model_path, config.density_path, *dataset_service.paths(config.dataset, config.split)])
    experiment_service.run_sweeps(config)
    return 0


def cmd_failures(args: argparse.Namespace) -> int:
    _require_inputs([args.config])
    config = load_experiment_config(args.config)
    _require_inputs([config.model_path, config.density_path, *dataset_service.paths(config.dataset, config.split)])
    experiment_service.run_failures(config)
    return 0


def cmd_annulus(args: argparse.Namespace) -> int:
    out = _check_output(args.out, [])
    stats = annulus_sweep(args.dims, args.beta, args.samples, args.seed)
    write_csv(stats, ANNULUS_COLUMNS, out)
    for row in stats:
        logger.info("  d=%-6d inside=%.4f mean_norm=%.4f (√d=%.4f)", row.d, row.fraction_inside, row.mean_norm, row.d ** 0.5)
    return 0


def cmd_pathology(args: argparse.Namespace) -> int:
    _require_inputs([args.model, args.density, args.input])
    params = persistence_service.load_model(args.model)
    density_model = persistence_service.load_density(args.density)
    sample = _load_image(args.input, args.index)
    rows = scaling_pathology_demo(params, density_model, sample, args.ks)
    sys.stdout.write(json.dumps([row.model_dump() for row in rows]) + "\n")
    return 0


COMMANDS: dict[str, Callable[[argparse.Namespace], int]] = {
    "train": cmd_train,
    "fit-density": cmd_fit_density,
    "score": cmd_score,
    "distort": cmd_distort,
    "attack": cmd_attack,
    "sweep": cmd_sweep,
    "failures": cmd_failures,
    "annulus": cmd_annulus,
    "pathology": cmd_pathology,
}
