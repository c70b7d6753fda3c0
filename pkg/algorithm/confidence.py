"""
Confidence estimators
=====================
Softmax confidence and the density-model posterior: one diagonal Gaussian per
class over the pre-softmax vector z, combined with class priors through
Bayes' rule. Densities are evaluated with a covariance of
``variance_scale * sigma2`` (``variance_scale`` defaults to the feature
dimension d) and everything stays in the log domain, because raw Gaussian
densities in even moderate dimension underflow 64-bit floats.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.special import logsumexp, softmax as _softmax

from algorithm.netcore import FeatureVector
from core.config import get_settings
from core.errors import FittingError, InputError, StateError
from core.logging import get_logger
from schemas.models import ConfidenceReport

logger = get_logger(__name__)

_LOG_2PI = float(np.log(2.0 * np.pi))

__all__ = [
    "ClassDensity",
    "DensityModel",
    "density_confidence",
    "density_posteriors_batch",
    "fit_densities",
    "fit_densities_arrays",
    "log_densities",
    "log_density",
    "logsumexp",
    "softmax",
    "softmax_confidence",
    "verify_softmax_scaling",
]


def _finite_vector(z: npt.ArrayLike) -> FeatureVector:
    vector = np.asarray(z, dtype=np.float64)
    if vector.ndim != 1 or vector.size == 0:
        raise InputError(f"expected a non-empty vector, got shape {vector.shape}")
    if not np.all(np.isfinite(vector)):
        raise InputError("feature vector contains non-finite values")
    return vector


# ─────────────────────────────────────────────────────────────────────────────
# Softmax
# ─────────────────────────────────────────────────────────────────────────────

def softmax(z: npt.ArrayLike) -> FeatureVector:
    # scipy subtracts the max before exponentiating.
    return _softmax(_finite_vector(z))


def softmax_confidence(z: npt.ArrayLike) -> tuple[int, float]:
    probs = softmax(z)
    label = int(np.argmax(probs))
    return label, float(probs[label])


def verify_softmax_scaling(z: npt.ArrayLike, k: float) -> bool:
    """
    Witness of the scaling pathology: is s_i(k·z) > s_i(z) for i = argmax z?

    log s_i(z) = -log1p(exp(logsumexp(z_j - z_i, j != i))), a strictly
    decreasing function of the log tail mass, so the comparison is made on the
    tail masses. This keeps the check exact when s_i rounds to 1.0.
    """
    vector = _finite_vector(z)
    if not k > 1.0:
        raise InputError(f"k must be > 1, got {k}")
    i = int(np.argmax(vector))
    if np.count_nonzero(vector == vector[i]) > 1:
        raise InputError("z has a tied maximum; the scaling property needs a strict maximum")
    gaps = np.delete(vector, i) - vector[i]
    if gaps.size == 0:
        raise InputError("z needs at least two entries")
    return bool(logsumexp(k * gaps) < logsumexp(gaps))


# ─────────────────────────────────────────────────────────────────────────────
# Density model
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ClassDensity:
    mu: FeatureVector
    sigma2: FeatureVector
    prior: float
    count: int

    def __post_init__(self) -> None:
        mu = np.array(self.mu, dtype=np.float64)
        sigma2 = np.array(self.sigma2, dtype=np.float64)
        if mu.shape != sigma2.shape or mu.ndim != 1:
            raise InputError("mu and sigma2 must be vectors of equal length")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma2))):
            raise InputError("mu and sigma2 must be finite")
        if not np.all(sigma2 > 0.0):
            raise InputError("sigma2 entries must be positive")
        if not self.prior > 0.0:
            raise InputError(f"prior must be positive, got {self.prior}")
        mu.setflags(write=False)
        sigma2.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma2", sigma2)


@dataclass(frozen=True)
class DensityModel:
    classes: tuple[ClassDensity, ...]
    d: int
    variance_scale: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            return
        if any(c.mu.shape != (self.d,) for c in self.classes):
            raise InputError(f"every class mean must have length d={self.d}")
        total = sum(c.prior for c in self.classes)
        if abs(total - 1.0) > 1e-9:
            raise InputError(f"priors must sum to 1, got {total!r}")
        if not self.variance_scale > 0.0:
            raise InputError(f"variance_scale must be positive, got {self.variance_scale}")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def is_fitted(self) -> bool:
        return bool(self.classes)

    def stacked(self) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64], FeatureVector]:
        """(N, d) means, (N, d) scaled variances, (N,) log priors."""
        mu = np.stack([c.mu for c in self.classes])
        var = self.variance_scale * np.stack([c.sigma2 for c in self.classes])
        log_prior = np.log(np.array([c.prior for c in self.classes]))
        return mu, var, log_prior


def fit_densities_arrays(
    features: npt.ArrayLike,
    labels: npt.ArrayLike,
    variance_scale: float | None = None,
    variance_floor: float | None = None,
) -> DensityModel:
    Z = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if Z.ndim != 2 or y.shape != (Z.shape[0],):
        raise InputError(f"features {Z.shape} and labels {y.shape} are incompatible")
    if Z.shape[0] == 0:
        raise FittingError("no features to fit")
    if y.min() < 0:
        raise InputError("labels must be non-negative")
    floor = get_settings().variance_floor if variance_floor is None else variance_floor
    d = Z.shape[1]
    total = Z.shape[0]

    classes = []
    for label in range(int(y.max()) + 1):
        members = Z[y == label]
        if members.shape[0] < 2:
            raise FittingError(
                f"class {label} has {members.shape[0]} sample(s); at least 2 are needed",
                label=label,
            )
        # Population variance (ddof=0), floored.
        sigma2 = np.maximum(members.var(axis=0), floor)
        classes.append(
            ClassDensity(
                mu=members.mean(axis=0),
                sigma2=sigma2,
                prior=members.shape[0] / total,
                count=int(members.shape[0]),
            )
        )

    scale = float(d) if variance_scale is None else float(variance_scale)
    logger.info("fitted %d class densities (d=%d, variance_scale=%g)", len(classes), d, scale)
    return DensityModel(classes=tuple(classes), d=d, variance_scale=scale)


def fit_densities(
    features: Sequence[tuple[npt.ArrayLike, int]],
    variance_scale: float | None = None,
    variance_floor: float | None = None,
) -> DensityModel:
    if not features:
        raise FittingError("no features to fit")
    Z = np.stack([np.asarray(z, dtype=np.float64) for z, _ in features])
    y = np.array([label for _, label in features], dtype=np.int64)
    return fit_densities_arrays(Z, y, variance_scale=variance_scale, variance_floor=variance_floor)


def _require_fitted(model: DensityModel | None) -> DensityModel:
    if model is None or not model.is_fitted:
        raise StateError("density model is not fitted")
    return model


def _log_density_matrix(model: DensityModel, Z: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    mu, var, _ = model.stacked()
    # (B, N): sum_j -0.5*ln(2*pi*v_j) - (z_j - mu_j)^2 / (2*v_j)
    norm = -0.5 * np.sum(_LOG_2PI + np.log(var), axis=1)
    diff = Z[:, np.newaxis, :] - mu[np.newaxis, :, :]
    return norm[np.newaxis, :] - 0.5 * np.sum(diff * diff / var[np.newaxis, :, :], axis=2)


def log_densities(model: DensityModel, z: npt.ArrayLike) -> FeatureVector:
    fitted = _require_fitted(model)
    vector = _finite_vector(z)
    if vector.shape != (fitted.d,):
        raise InputError(f"z has length {vector.shape[0]}, density model expects {fitted.d}")
    return _log_density_matrix(fitted, vector[np.newaxis, :])[0]


def log_density(model: DensityModel, z: npt.ArrayLike, i: int) -> float:
    fitted = _require_fitted(model)
    if not 0 <= i < fitted.n_classes:
        raise InputError(f"class index {i} outside [0, {fitted.n_classes})")
    return float(log_densities(fitted, z)[i])


def _posterior_from_log_densities(log_dens: npt.NDArray[np.float64], log_prior: FeatureVector) -> npt.NDArray[np.float64]:
    joint = log_dens + log_prior
    return np.exp(joint - logsumexp(joint, axis=-1, keepdims=True))


def density_confidence(model: DensityModel | None, z: npt.ArrayLike) -> ConfidenceReport:
    fitted = _require_fitted(model)
    vector = _finite_vector(z)
    log_dens = log_densities(fitted, vector)
    _, _, log_prior = fitted.stacked()
    posterior = _posterior_from_log_densities(log_dens, log_prior)
    _, softmax_conf = softmax_confidence(vector)
    return ConfidenceReport(
        label=int(np.argmax(vector)),
        softmax_conf=softmax_conf,
        posterior=posterior.tolist(),
        log_densities=log_dens.tolist(),
    )


def density_posteriors_batch(model: DensityModel | None, Z: npt.ArrayLike) -> npt.NDArray[np.float64]:
    fitted = _require_fitted(model)
    batch = np.asarray(Z, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != fitted.d:
        raise InputError(f"batch shape {batch.shape} incompatible with d={fitted.d}")
    _, _, log_prior = fitted.stacked()
    return _posterior_from_log_densities(_log_density_matrix(fitted, batch), log_prior)
