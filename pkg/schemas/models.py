from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator


Activation = Literal["relu", "identity"]
DistortionKind = Literal["gaussian_noise", "gaussian_blur", "jpeg"]


class LayerDocument(BaseModel):
    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    in_dim: int = Field(alias="in", gt=0)
    out_dim: int = Field(alias="out", gt=0)
    activation: Activation


class ModelDocument(BaseModel):
    """On-disk form of ModelParams. ``weights[k]`` is layer k's matrix flattened row-major."""

    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    layers: list[LayerDocument]
    weights: list[list[float]]
    biases: list[list[float]]
    seed: int

    @model_validator(mode="after")
    def _check_shapes(self) -> "ModelDocument":
        if not self.layers:
            raise ValueError("model has no layers")
        if not (len(self.layers) == len(self.weights) == len(self.biases)):
            raise ValueError("layers, weights and biases must have the same length")
        for index, (layer, weight, bias) in enumerate(zip(self.layers, self.weights, self.biases)):
            if len(weight) != layer.in_dim * layer.out_dim:
                raise ValueError(f"layer {index}: weight count {len(weight)} != in*out")
            if len(bias) != layer.out_dim:
                raise ValueError(f"layer {index}: bias count {len(bias)} != out")
        return self


class ClassDensityDocument(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    mu: list[float]
    sigma2: list[float]
    prior: float = Field(gt=0.0, le=1.0)
    count: int = Field(ge=2)


class DensityDocument(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    classes: list[ClassDensityDocument]
    d: int = Field(gt=0)
    variance_scale: float = Field(gt=0.0)


class ConfidenceReport(BaseModel):
    label: int
    softmax_conf: float
    posterior: list[float]
    log_densities: list[float]


class AttackResultDocument(BaseModel):
    attack: str
    original_label: int
    perturbed_label: int
    true_label: int | None = None
    flipped: bool
    iterations: int
    perturbation_norm: float
    original: list[float]
    perturbed: list[float]


class DistortionSweepConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: str
    levels: list[float] = Field(min_length=1)


class AnnulusConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dims: list[int] = Field(default_factory=lambda: [1, 10, 100, 1000], min_length=1)
    beta: float = 1.0
    n_samples: int = Field(default=100_000, gt=0)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model_path: str
    density_path: str
    dataset: str = "synthetic"
    split: Literal["train", "test"] = "test"
    limit: int | None = Field(default=None, gt=0)
    distortions: list[DistortionSweepConfig] = Field(default_factory=list)
    attack: str | None = None
    count_unflipped: bool = False
    annulus: AnnulusConfig | None = None
    seed: int = 0
    out_dir: str


class SweepRow(BaseModel):
    kind: str
    level: float
    n: int
    accuracy: float
    mean_softmax: float
    mean_density: float
    norm_softmax: float
    norm_density: float


class FailureCount(BaseModel):
    n_images: int
    softmax_fails: int
    density_fails: int

    @model_validator(mode="after")
    def _check_bounds(self) -> "FailureCount":
        for value in (self.softmax_fails, self.density_fails):
            if not 0 <= value <= self.n_images:
                raise ValueError("fail counts must lie in [0, n_images]")
        return self


class AnnulusStats(BaseModel):
    d: int
    beta: float
    n_samples: int
    fraction_inside: float = Field(ge=0.0, le=1.0)
    mean_norm: float


class PathologyRow(BaseModel):
    k: float
    label: int
    softmax_conf: float
    density_posterior: float
    strict: bool


# Column order of the bulk CSV outputs.
SWEEP_COLUMNS = tuple(SweepRow.model_fields)
FAILURE_COLUMNS = tuple(FailureCount.model_fields)
ANNULUS_COLUMNS = tuple(AnnulusStats.model_fields)
