import json
from collections.abc import Sequence
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd
from pydantic import BaseModel, ValidationError
from scipy.special import softmax

from algorithm.adversarial import AttackResult, AttackSpec, parse_attack, run_attack
from algorithm.confidence import (
    DensityModel,
    density_confidence,
    density_posteriors_batch,
    softmax_confidence,
)
from algorithm.distortions import (
    CLEAN_LEVEL,
    DistortionKind,
    DistortionSpec,
    ImageGrid,
    apply_distortion,
    parse_kind,
)
from algorithm.netcore import (
    ModelParams,
    Sample,
    forward,
    forward_batch,
    is_bias_free,
)
from core.config import Settings, get_settings
from core.errors import FormatError, InputError, UsageError
from core.executor import SweepExecutor, sweep_executor
from core.logging import get_logger
from schemas.models import (
    ANNULUS_COLUMNS,
    FAILURE_COLUMNS,
    SWEEP_COLUMNS,
    AnnulusStats,
    ExperimentConfig,
    FailureCount,
    PathologyRow,
    SweepRow,
)
from services.dataset_service import DatasetService
from services.persistence_service import PersistenceService
from services.plot_service import plot_sweep

logger = get_logger(__name__)

# Gaussian values drawn per chunk by annulus_demo (bounds memory at large d).
_ANNULUS_CHUNK_VALUES = 4_000_000


# ─────────────────────────────────────────────────────────────────────────────
# 1. Levels and labelled arrays
# ─────────────────────────────────────────────────────────────────────────────

def _ordered_levels(kind: DistortionKind, levels: Sequence[float]) -> list[float]:
    """Levels from clean to most distorted: quality descending for jpeg, sigma ascending otherwise."""
    if not levels:
        raise InputError("a sweep needs at least one level")
    ordered = sorted(levels, reverse=kind == "jpeg")
    if ordered[0] != CLEAN_LEVEL[kind]:
        raise InputError(
            f"{kind} sweep must start at the clean level {CLEAN_LEVEL[kind]:g}, got {ordered[0]:g}"
        )
    return [float(level) for level in ordered]


def _labelled_arrays(data: Sequence[Sample]) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.int64]]:
    if not data:
        raise InputError("dataset is empty")
    if any(s.label is None for s in data):
        raise InputError("every sample must be labelled")
    return np.stack([s.pixels for s in data]), np.array([s.label for s in data], dtype=np.int64)


def _predicted_confidences(
    params: ModelParams,
    density_model: DensityModel,
    X: npt.NDArray[np.float64],
) -> tuple[npt.NDArray[np.int64], npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Predicted label, its softmax value and its density posterior, per row."""
    Z = forward_batch(params, X)
    predicted = np.argmax(Z, axis=1)
    rows = np.arange(Z.shape[0])
    soft = softmax(Z, axis=1)[rows, predicted]
    posterior = density_posteriors_batch(density_model, Z)[rows, predicted]
    return predicted, soft, posterior


# ─────────────────────────────────────────────────────────────────────────────
# 2. Adversarial failure counting
# ─────────────────────────────────────────────────────────────────────────────

def count_failures(
    params: ModelParams,
    density_model: DensityModel,
    results: Sequence[AttackResult],
    count_unflipped: bool = False,
) -> FailureCount:
    """A measure fails when the adversarial image gets higher confidence than its clean original."""
    counted = [r for r in results if r.flipped or count_unflipped]
    if not counted:
        raise InputError("no attacked sample flipped its label; nothing to count")
    _, soft_clean, dens_clean = _predicted_confidences(
        params, density_model, np.stack([r.original.pixels for r in counted])
    )
    _, soft_adv, dens_adv = _predicted_confidences(
        params, density_model, np.stack([r.perturbed.pixels for r in counted])
    )
    return FailureCount(
        n_images=len(counted),
        softmax_fails=int(np.sum(soft_adv > soft_clean)),
        density_fails=int(np.sum(dens_adv > dens_clean)),
    )


# ─────────────────────────────────────────────────────────────────────────────
# 3. Gaussian annulus
# ─────────────────────────────────────────────────────────────────────────────

def annulus_demo(d: int, beta: float, n_samples: int, seed: int) -> AnnulusStats:
    """Fraction of d-dim unit Gaussian draws with norm in [√d − β, √d + β]."""
    if d < 1 or n_samples < 1:
        raise InputError("annulus demo needs d >= 1 and n_samples >= 1")
    root = float(np.sqrt(d))
    if not 0.0 <= beta <= root:
        raise InputError(f"beta must lie in [0, √d = {root:.6g}], got {beta}")

    rng = np.random.default_rng(seed)
    chunk = max(1, _ANNULUS_CHUNK_VALUES // d)
    norms = np.empty(n_samples)
    for start in range(0, n_samples, chunk):
        stop = min(start + chunk, n_samples)
        norms[start:stop] = np.linalg.norm(rng.standard_normal((stop - start, d)), axis=1)

    inside = (norms >= root - beta) & (norms <= root + beta)
    return AnnulusStats(
        d=d,
        beta=beta,
        n_samples=n_samples,
        fraction_inside=float(np.mean(inside)),
        mean_norm=float(np.mean(norms)),
    )


def annulus_sweep(dims: Sequence[int], beta: float, n_samples: int, seed: int) -> list[AnnulusStats]:
    return [annulus_demo(d, beta, n_samples, seed) for d in dims]


# ─────────────────────────────────────────────────────────────────────────────
# 4. Scaling pathology
# ─────────────────────────────────────────────────────────────────────────────

def scaling_pathology_demo(
    params: ModelParams,
    density_model: DensityModel,
    x: Sample | npt.ArrayLike,
    ks: Sequence[float],
) -> list[PathologyRow]:
    """
    Confidence of the scaled inputs k·x. The first row is the unscaled input
    (k = 1). ``strict`` is False on a row whose softmax value did not rise
    above the previous row's in floating point.
    """
    if not ks or any(not k > 1.0 for k in ks):
        raise InputError(f"every scale factor must be > 1, got {list(ks)}")
    if not is_bias_free(params):
        raise InputError("the scaling demo needs a bias-free network (train with --no-bias)")
    base = x.pixels if isinstance(x, Sample) else np.asarray(x, dtype=np.float64)

    rows: list[PathologyRow] = []
    for k in [1.0, *sorted(ks)]:
        z = forward(params, k * base)
        label, soft = softmax_confidence(z)
        posterior = density_confidence(density_model, z).posterior[label]
        strict = not rows or soft > rows[-1].softmax_conf
        if not strict:
            logger.warning("k=%g: softmax %.17g not above previous row (float resolution)", k, soft)
        rows.append(PathologyRow(k=k, label=label, softmax_conf=soft, density_posterior=posterior, strict=strict))
    return rows


# ─────────────────────────────────────────────────────────────────────────────
# 5. Experiment configs and CSV
# ─────────────────────────────────────────────────────────────────────────────

def write_csv(rows: Sequence[BaseModel], columns: Sequence[str], path: str | Path) -> None:
    frame = pd.DataFrame([row.model_dump() for row in rows], columns=list(columns))
    frame.to_csv(path, index=False, lineterminator="\n")


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    """Parse the config; relative paths inside it resolve against its directory."""
    config_path = Path(path)
    try:
        raw = json.loads(config_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(config_path, 0, f"cannot read file: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(config_path, exc.pos, f"invalid JSON: {exc.msg}") from exc
    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise UsageError(f"{config_path}: {location}: {first['msg']}") from exc

    root = config_path.resolve().parent

    def anchored(value: str) -> str:
        return str(value if Path(value).is_absolute() else root / value)

    dataset = config.dataset
    if dataset.startswith("idx:"):
        dataset = "idx:" + ":".join(anchored(part) for part in dataset.split(":")[1:])
    return config.model_copy(
        update={
            "model_path": anchored(config.model_path),
            "density_path": anchored(config.density_path),
            "out_dir": anchored(config.out_dir),
            "dataset": dataset,
        }
    )


# ─────────────────────────────────────────────────────────────────────────────
# 6. Experiment service
# ─────────────────────────────────────────────────────────────────────────────

class ExperimentService:
    """Sweeps and adversarial failure counts over a trained network and its density model."""

    def __init__(self, settings: Settings | None = None, executor: SweepExecutor | None = None) -> None:
        self.settings = settings or get_settings()
        self.executor = executor or sweep_executor
        self.datasets = DatasetService(self.settings)
        self.persistence = PersistenceService(self.settings)

    # ── distortion sweeps ────────────────────────────────────────────────────

    def sweep(
        self,
        params: ModelParams,
        density_model: DensityModel,
        data: Sequence[Sample],
        kind: str,
        levels: Sequence[float],
        seed: int = 0,
        image_shape: tuple[int, int] | None = None,
    ) -> list[SweepRow]:
        distortion = parse_kind(kind)
        ordered = _ordered_levels(distortion, levels)
        X, y = _labelled_arrays(data)
        height, width = image_shape or self.datasets.image_shape_for(X.shape[1])
        n = X.shape[0]

        measured: list[tuple[float, float, float, float]] = []
        for level in ordered:
            DistortionSpec(kind=distortion, level=level)  # validates the level

            # Sample i always uses seed + i, whatever thread runs it.
            def distort_one(index: int, level: float = level) -> npt.NDArray[np.float64]:
                img = ImageGrid.from_vector(X[index], width=width, height=height)
                spec = DistortionSpec(kind=distortion, level=level, seed=seed + index)
                return apply_distortion(img, spec).to_vector()

            distorted = np.stack(self.executor.map_ordered(distort_one, range(n)))
            predicted, soft, posterior = _predicted_confidences(params, density_model, distorted)
            measured.append((level, float(np.mean(predicted == y)), float(np.mean(soft)), float(np.mean(posterior))))
            logger.info(
                "  %s %-6g acc=%.4f softmax=%.4f density=%.4f",
                distortion, level, measured[-1][1], measured[-1][2], measured[-1][3],
            )

        _, _, clean_softmax, clean_density = measured[0]
        if clean_density == 0.0:
            logger.warning("clean density confidence is 0; normalised density column is undefined")
        with np.errstate(divide="ignore", invalid="ignore"):
            return [
                SweepRow(
                    kind=distortion,
                    level=level,
                    n=n,
                    accuracy=acc,
                    mean_softmax=soft_mean,
                    mean_density=dens_mean,
                    norm_softmax=float(np.float64(soft_mean) / clean_softmax),
                    norm_density=float(np.float64(dens_mean) / clean_density),
                )
                for level, acc, soft_mean, dens_mean in measured
            ]

    # ── adversarial failures ─────────────────────────────────────────────────

    def attack_correctly_classified(
        self,
        params: ModelParams,
        data: Sequence[Sample],
        attack_spec: AttackSpec,
    ) -> list[AttackResult]:
        """Attack every labelled sample the model classifies correctly when clean."""
        X, y = _labelled_arrays(data)
        predicted = np.argmax(forward_batch(params, X), axis=1)
        eligible = [sample for sample, ok in zip(data, predicted == y) if ok]
        if not eligible:
            raise InputError("no correctly classified samples to attack")
        results = self.executor.map_ordered(lambda sample: run_attack(params, sample, attack_spec), eligible)
        flipped = sum(result.flipped for result in results)
        logger.info(
            "attacked %d samples with %s: %d flipped (%.1f%%)",
            len(results), attack_spec.describe(), flipped, 100.0 * flipped / len(results),
        )
        return results

    def adversarial_failures(
        self,
        params: ModelParams,
        density_model: DensityModel,
        data: Sequence[Sample],
        attack_spec: AttackSpec,
        count_unflipped: bool = False,
    ) -> FailureCount:
        results = self.attack_correctly_classified(params, data, attack_spec)
        return count_failures(params, density_model, results, count_unflipped=count_unflipped)

    # ── config-driven runs ───────────────────────────────────────────────────

    def _load_inputs(self, config: ExperimentConfig) -> tuple[ModelParams, DensityModel, list[Sample]]:
        params = self.persistence.load_model(config.model_path)
        density_model = self.persistence.load_density(config.density_path)
        data = self.datasets.resolve(config.dataset, split=config.split, limit=config.limit)
        return params, density_model, data

    def run_sweeps(self, config: ExperimentConfig) -> list[Path]:
        """Distortion sweeps (CSV + SVG per kind) and, when configured, annulus.csv."""
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written: list[Path] = []

        logger.info("[1/2] loading model, density model and %s/%s", config.dataset, config.split)
        params, density_model, data = self._load_inputs(config)

        logger.info("[2/2] %d distortion sweep(s) over %d samples", len(config.distortions), len(data))
        for distortion in config.distortions:
            rows = self.sweep(params, density_model, data, distortion.kind, distortion.levels, seed=config.seed)
            stem = f"sweep_{rows[0].kind}"
            write_csv(rows, SWEEP_COLUMNS, out_dir / f"{stem}.csv")
            plot_sweep(rows, out_dir / f"{stem}.svg")
            written += [out_dir / f"{stem}.csv", out_dir / f"{stem}.svg"]

        if config.annulus is not None:
            stats = annulus_sweep(config.annulus.dims, config.annulus.beta, config.annulus.n_samples, config.seed)
            write_csv(stats, ANNULUS_COLUMNS, out_dir / "annulus.csv")
            written.append(out_dir / "annulus.csv")

        for path in written:
            logger.info("  %s", path.name)
        return written

    def run_failures(self, config: ExperimentConfig) -> FailureCount:
        if config.attack is None:
            raise UsageError("config has no 'attack' entry")
        attack_spec = parse_attack(config.attack)
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

        logger.info("[1/2] loading model, density model and %s/%s", config.dataset, config.split)
        params, density_model, data = self._load_inputs(config)

        logger.info("[2/2] adversarial failure count (%s)", attack_spec.describe())
        counts = self.adversarial_failures(
            params, density_model, data, attack_spec, count_unflipped=config.count_unflipped
        )
        write_csv([counts], FAILURE_COLUMNS, out_dir / "failures.csv")
        logger.info(
            "  n=%d softmax_fails=%d density_fails=%d → failures.csv",
            counts.n_images, counts.softmax_fails, counts.density_fails,
        )
        return counts
