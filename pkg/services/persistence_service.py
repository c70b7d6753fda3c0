import json
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from algorithm.confidence import ClassDensity, DensityModel
from algorithm.netcore import Layer, LayerSpec, ModelParams
from core.config import Settings, get_settings
from core.errors import ConfidenceError, FormatError
from core.logging import get_logger
from schemas.models import (
    ClassDensityDocument,
    DensityDocument,
    LayerDocument,
    ModelDocument,
)

logger = get_logger(__name__)


# ─────────────────────────────────────────────────────────────────────────────
# Document conversion
# ─────────────────────────────────────────────────────────────────────────────

def model_to_document(params: ModelParams) -> ModelDocument:
    return ModelDocument(
        layers=[
            LayerDocument(in_dim=layer.spec.in_dim, out_dim=layer.spec.out_dim, activation=layer.spec.activation)
            for layer in params.layers
        ],
        weights=[layer.weight.reshape(-1).tolist() for layer in params.layers],
        biases=[layer.bias.tolist() for layer in params.layers],
        seed=params.seed,
    )


def model_from_document(document: ModelDocument) -> ModelParams:
    layers = []
    for layer_doc, weight, bias in zip(document.layers, document.weights, document.biases):
        spec = LayerSpec(layer_doc.in_dim, layer_doc.out_dim, layer_doc.activation)
        layers.append(
            Layer(
                spec=spec,
                weight=np.array(weight, dtype=np.float64).reshape(spec.out_dim, spec.in_dim),
                bias=np.array(bias, dtype=np.float64),
            )
        )
    return ModelParams(layers=tuple(layers), seed=document.seed)


def density_to_document(model: DensityModel) -> DensityDocument:
    return DensityDocument(
        classes=[
            ClassDensityDocument(
                mu=c.mu.tolist(),
                sigma2=c.sigma2.tolist(),
                prior=c.prior,
                count=c.count,
            )
            for c in model.classes
        ],
        d=model.d,
        variance_scale=model.variance_scale,
    )


def density_from_document(document: DensityDocument) -> DensityModel:
    classes = tuple(
        ClassDensity(
            mu=np.array(c.mu, dtype=np.float64),
            sigma2=np.array(c.sigma2, dtype=np.float64),
            prior=c.prior,
            count=c.count,
        )
        for c in document.classes
    )
    return DensityModel(classes=classes, d=document.d, variance_scale=document.variance_scale)


# ─────────────────────────────────────────────────────────────────────────────
# Files
# ─────────────────────────────────────────────────────────────────────────────

def _read_json(path: str | Path) -> object:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(path, 0, f"cannot read file: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(path, exc.pos, f"invalid JSON: {exc.msg}") from exc


class PersistenceService:
    """JSON files for trained networks and fitted density models."""

    def __init__(self, settings: Settings | None = None) -> None:
        self.settings = settings or get_settings()

    @staticmethod
    def _write_document(document: ModelDocument | DensityDocument, path: str | Path) -> None:
        # sorted keys; floats go out as their shortest round-tripping repr
        payload = document.model_dump(mode="json", by_alias=True)
        Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    def save_model(self, params: ModelParams, path: str | Path) -> None:
        self._write_document(model_to_document(params), path)
        logger.info("saved model (%d layers) → %s", len(params.layers), path)

    def load_model(self, path: str | Path) -> ModelParams:
        try:
            document = ModelDocument.model_validate(_read_json(path))
            return model_from_document(document)
        except ValidationError as exc:
            raise FormatError(path, 0, f"not a model document: {exc.errors()[0]['msg']}") from exc
        except FormatError:
            raise
        except ConfidenceError as exc:
            raise FormatError(path, 0, exc.detail) from exc

    def save_density(self, model: DensityModel, path: str | Path) -> None:
        self._write_document(density_to_document(model), path)
        logger.info("saved density model (%d classes) → %s", model.n_classes, path)

    def load_density(self, path: str | Path) -> DensityModel:
        try:
            document = DensityDocument.model_validate(_read_json(path))
            model = density_from_document(document)
        except ValidationError as exc:
            raise FormatError(path, 0, f"not a density document: {exc.errors()[0]['msg']}") from exc
        except FormatError:
            raise
        except ConfidenceError as exc:
            raise FormatError(path, 0, exc.detail) from exc

        floor = self.settings.variance_floor
        for label, density in enumerate(model.classes):
            if np.any(density.sigma2 < floor):
                raise FormatError(path, 0, f"class {label} has a variance below the floor {floor:g}")
        return model
