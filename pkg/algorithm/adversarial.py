"""
Adversarial examples
====================
Fast-gradient-sign (one ℓ∞ step along the sign of the loss gradient) and the
iterative minimal-perturbation attack that linearises the classifier around
the current point and steps to the nearest linearised decision boundary.

Both attacks are deterministic and return pixels in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import numpy.typing as npt

from algorithm.netcore import (
    ModelParams,
    Sample,
    class_score_jacobian,
    forward,
    loss_grad_input,
    predict,
)
from core.config import get_settings
from core.errors import DegenerateModelError, InputError
from core.logging import get_logger

logger = get_logger(__name__)

AttackKind = Literal["fgsm", "deepfool"]


@dataclass(frozen=True)
class AttackResult:
    original: Sample
    perturbed: Sample
    original_label: int
    perturbed_label: int
    iterations: int
    perturbation_norm: float
    flipped: bool
    unclamped_delta: npt.NDArray[np.float64]


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind
    eps: float = 0.0
    overshoot: float = 0.02
    max_iter: int = 50

    def __post_init__(self) -> None:
        if self.kind not in ("fgsm", "deepfool"):
            raise InputError(f"unknown attack kind: {self.kind}")
        if not self.eps >= 0.0:
            raise InputError(f"eps must be >= 0, got {self.eps}")
        if not self.overshoot >= 0.0:
            raise InputError(f"overshoot must be >= 0, got {self.overshoot}")
        if self.max_iter < 1:
            raise InputError(f"max_iter must be >= 1, got {self.max_iter}")

    def describe(self) -> str:
        if self.kind == "fgsm":
            return f"fgsm:{self.eps:g}"
        return f"deepfool:{self.overshoot:g}:{self.max_iter}"


def parse_attack(text: str) -> AttackSpec:
    """'fgsm:0.1' | 'deepfool' | 'deepfool:<overshoot>:<max_iter>'"""
    settings = get_settings()
    parts = text.strip().lower().split(":")
    try:
        if parts[0] == "fgsm" and len(parts) == 2:
            return AttackSpec(kind="fgsm", eps=float(parts[1]))
        if parts[0] == "deepfool" and len(parts) in (1, 3):
            if len(parts) == 1:
                return AttackSpec(kind="deepfool", overshoot=settings.overshoot, max_iter=settings.max_iter)
            return AttackSpec(kind="deepfool", overshoot=float(parts[1]), max_iter=int(parts[2]))
    except ValueError as exc:
        raise InputError(f"malformed attack spec '{text}'") from exc
    raise InputError(f"attack must be fgsm:<eps> or deepfool[:<overshoot>:<max_iter>], got '{text}'")


def _finish(
    params: ModelParams,
    x: Sample,
    original_label: int,
    delta: npt.NDArray[np.float64],
    iterations: int,
) -> AttackResult:
    perturbed = x.with_pixels(np.clip(x.pixels + delta, 0.0, 1.0))
    perturbed_label = predict(params, perturbed)
    return AttackResult(
        original=x,
        perturbed=perturbed,
        original_label=original_label,
        perturbed_label=perturbed_label,
        iterations=iterations,
        perturbation_norm=float(np.linalg.norm(perturbed.pixels - x.pixels)),
        flipped=perturbed_label != original_label,
        unclamped_delta=delta,
    )


# ─────────────────────────────────────────────────────────────────────────────
# Fast gradient sign
# ─────────────────────────────────────────────────────────────────────────────

def fgsm(params: ModelParams, x: Sample, eps: float) -> AttackResult:
    if x.label is None:
        raise InputError("fgsm needs a labelled sample (the loss uses the true label)")
    if not eps >= 0.0:
        raise InputError(f"eps must be >= 0, got {eps}")
    original_label = predict(params, x)
    delta = eps * np.sign(loss_grad_input(params, x, x.label))
    return _finish(params, x, original_label, delta, iterations=1)


def smallest_flipping_fgsm(
    params: ModelParams,
    x: Sample,
    start_eps: float = 1e-3,
    max_doublings: int = 20,
) -> AttackResult | None:
    """Double eps from ``start_eps`` until the label flips; None if it never does."""
    if not start_eps > 0.0:
        raise InputError(f"start_eps must be > 0, got {start_eps}")
    eps = start_eps
    for _ in range(max_doublings + 1):
        result = fgsm(params, x, eps)
        if result.flipped:
            return result
        eps *= 2.0
    return None


# ─────────────────────────────────────────────────────────────────────────────
# Minimal-perturbation (DeepFool-style) attack
# ─────────────────────────────────────────────────────────────────────────────

# step length used when the nearest boundary is at distance exactly 0 (a tied top score)
_TIE_STEP = 1e-4


def deepfool(
    params: ModelParams,
    x: Sample,
    overshoot: float = 0.02,
    max_iter: int = 50,
) -> AttackResult:
    """
    Attack the model's own prediction i. Each step picks
    l = argmin_{j≠i} |z_j − z_i| / ‖∇z_j − ∇z_i‖ and moves by
    |z_l − z_i| (∇z_l − ∇z_i) / ‖∇z_l − ∇z_i‖², accumulating into r; the
    candidate is clamp(x + (1 + overshoot)·r, 0, 1).

    The flip is judged on the clamped candidate, and the next step is taken
    from it. Gradient components that would push a pixel already at 0 or 1
    further out are dropped, so the step aims at the boundary reachable
    inside the box. For an interior point this is the plain linearised step.
    """
    if not overshoot >= 0.0:
        raise InputError(f"overshoot must be >= 0, got {overshoot}")
    if max_iter < 1:
        raise InputError(f"max_iter must be >= 1, got {max_iter}")

    scale = 1.0 + overshoot
    original_label = predict(params, x)
    r_total = np.zeros_like(x.pixels)
    current = np.array(x.pixels)
    delta = np.zeros_like(x.pixels)
    iterations = 0

    while iterations < max_iter:
        iterations += 1
        z = forward(params, current)
        jacobian = class_score_jacobian(params, current)
        w = np.delete(jacobian - jacobian[original_label], original_label, axis=0)
        f = np.delete(z - z[original_label], original_label)
        if not np.any(np.linalg.norm(w, axis=1) > 0.0):
            raise DegenerateModelError("all class gradients are identical; no boundary direction")

        blocked = ((current >= 1.0) & (w > 0.0)) | ((current <= 0.0) & (w < 0.0))
        w = np.where(blocked, 0.0, w)
        norms = np.linalg.norm(w, axis=1)
        if not np.any(norms > 0.0):
            logger.debug("deepfool: every boundary direction leaves the pixel box")
            break

        with np.errstate(divide="ignore"):
            distances = np.where(norms > 0.0, np.abs(f) / norms, np.inf)
        l = int(np.argmin(distances))
        gap = abs(float(f[l])) or _TIE_STEP
        r_total = r_total + gap * w[l] / norms[l] ** 2

        delta = scale * r_total
        current = np.clip(x.pixels + delta, 0.0, 1.0)
        if predict(params, current) != original_label:
            break
        # carry only the part of r that survived the clamp
        r_total = (current - x.pixels) / scale

    result = _finish(params, x, original_label, delta, iterations)
    if not result.flipped:
        logger.debug("deepfool did not flip label %d in %d iterations", original_label, iterations)
    return result


def run_attack(params: ModelParams, x: Sample, spec: AttackSpec) -> AttackResult:
    if spec.kind == "fgsm":
        return fgsm(params, x, spec.eps)
    return deepfool(params, x, overshoot=spec.overshoot, max_iter=spec.max_iter)
