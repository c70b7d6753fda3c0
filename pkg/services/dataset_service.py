import struct
from pathlib import Path

import numpy as np
import numpy.typing as npt
from PIL import Image

from algorithm.distortions import ImageGrid
from algorithm.netcore import Sample
from core.config import Settings, get_settings
from core.errors import FormatError, InputError
from core.logging import get_logger

logger = get_logger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

# split → IDX file prefix of the standard MNIST distribution
MNIST_PREFIX = {"train": "train", "test": "t10k"}
# train and test synthetic splits draw from disjoint seeds
SYNTHETIC_SPLIT_SEED = {"train": 0, "test": 1}


# ─────────────────────────────────────────────────────────────────────────────
# IDX reading
# ─────────────────────────────────────────────────────────────────────────────

def _read_bytes(path: str | Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(path, 0, f"cannot read file: {exc.strerror or exc}") from exc


def _header(path: str | Path, raw: bytes, expected_magic: int, n_dims: int) -> tuple[int, ...]:
    size = 4 * (1 + n_dims)
    if len(raw) < size:
        raise FormatError(path, len(raw), f"truncated header: need {size} bytes, found {len(raw)}")
    magic, *dims = struct.unpack(f">{1 + n_dims}I", raw[:size])
    if magic != expected_magic:
        raise FormatError(path, 0, f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    return tuple(dims)


def load_idx_images(path: str | Path) -> npt.NDArray[np.float64]:
    """(count, rows*cols) pixels scaled to [0, 1]."""
    raw = _read_bytes(path)
    count, rows, cols = _header(path, raw, IMAGES_MAGIC, 3)
    expected = 16 + count * rows * cols
    if len(raw) < expected:
        raise FormatError(path, len(raw), f"truncated pixel data: expected {expected} bytes")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    return pixels.reshape(count, rows * cols).astype(np.float64) / 255.0


def load_idx_shape(path: str | Path) -> tuple[int, int]:
    """(rows, cols) declared by an image file header."""
    raw = _read_bytes(path)
    _, rows, cols = _header(path, raw[:16], IMAGES_MAGIC, 3)
    return rows, cols


def load_idx_labels(path: str | Path) -> npt.NDArray[np.int64]:
    raw = _read_bytes(path)
    (count,) = _header(path, raw, LABELS_MAGIC, 1)
    if len(raw) < 8 + count:
        raise FormatError(path, len(raw), f"truncated label data: expected {8 + count} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def load_idx(images_path: str | Path, labels_path: str | Path) -> list[Sample]:
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            labels_path,
            4,
            f"label count {labels.shape[0]} != image count {images.shape[0]} in {images_path}",
        )
    logger.info("loaded %d samples from %s", images.shape[0], Path(images_path).name)
    return [Sample(pixels=row, label=int(label)) for row, label in zip(images, labels)]


# ─────────────────────────────────────────────────────────────────────────────
# Writing
# ─────────────────────────────────────────────────────────────────────────────

def _to_bytes(pixels: npt.ArrayLike) -> npt.NDArray[np.uint8]:
    return np.clip(np.round(np.asarray(pixels, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_idx(images: npt.ArrayLike, rows: int, cols: int, path: str | Path) -> None:
    data = np.asarray(images, dtype=np.float64).reshape(-1, rows * cols)
    header = struct.pack(">IIII", IMAGES_MAGIC, data.shape[0], rows, cols)
    Path(path).write_bytes(header + _to_bytes(data).tobytes())


def write_idx_labels(labels: npt.ArrayLike, path: str | Path) -> None:
    values = np.asarray(labels, dtype=np.int64)
    if values.size and (values.min() < 0 or values.max() > 255):
        raise InputError("IDX labels must fit in an unsigned byte")
    header = struct.pack(">II", LABELS_MAGIC, values.shape[0])
    Path(path).write_bytes(header + values.astype(np.uint8).tobytes())


def write_pgm(img: ImageGrid, path: str | Path) -> None:
    Image.fromarray(_to_bytes(img.pixels)).save(str(path), format="PPM")


# ─────────────────────────────────────────────────────────────────────────────
# Synthetic data
# ─────────────────────────────────────────────────────────────────────────────

def make_synthetic(
    n_classes: int,
    n_per_class: int,
    dim: int,
    spread: float,
    seed: int,
    low: float = 0.25,
    high: float = 0.75,
    width: int | None = None,
) -> list[Sample]:
    """
    Gaussian blobs around scaled simplex vertices. The dim coordinates are
    split into n_classes contiguous stripes; class c's mean is ``high`` on the
    first ``width`` pixels of stripe c (the whole stripe by default) and
    ``low`` elsewhere, so the class means are equal-norm, mutually
    equidistant points. Samples are clamped to [0, 1] and interleaved by
    class, so any prefix of the list is class-balanced.
    """
    if min(n_classes, n_per_class, dim) <= 0 or spread < 0:
        raise InputError("make_synthetic needs positive sizes and a non-negative spread")
    if dim < n_classes:
        raise InputError(f"dim ({dim}) must be at least n_classes ({n_classes})")
    bounds = np.linspace(0, dim, n_classes + 1).round().astype(int)
    shortest = int(np.min(np.diff(bounds)))
    width = shortest if width is None else width
    if not 1 <= width <= shortest:
        raise InputError(f"width must lie in [1, {shortest}] for {n_classes} classes over {dim} pixels")
    rng = np.random.default_rng(seed)

    means = np.full((n_classes, dim), low)
    for label in range(n_classes):
        means[label, bounds[label]:bounds[label] + width] = high
    noise = rng.normal(0.0, 1.0, size=(n_per_class, n_classes, dim)) * spread
    points = np.clip(means[np.newaxis] + noise, 0.0, 1.0)

    return [
        Sample(pixels=points[i, label], label=label)
        for i in range(n_per_class)
        for label in range(n_classes)
    ]


# ─────────────────────────────────────────────────────────────────────────────
# Named datasets
# ─────────────────────────────────────────────────────────────────────────────

class DatasetService:
    """Resolves dataset names ('mnist' | 'synthetic' | 'idx:<images>:<labels>') against Settings."""

    def __init__(self, settings: Settings | None = None) -> None:
        self.settings = settings or get_settings()

    def resolve(self, name: str, split: str = "train", limit: int | None = None) -> list[Sample]:
        if split not in MNIST_PREFIX:
            raise InputError(f"split must be train or test, got '{split}'")

        if name == "mnist":
            samples = load_idx(*self._mnist_files(split))
        elif name == "synthetic":
            samples = self.synthetic(split)
        elif name.startswith("idx:"):
            samples = load_idx(*self._idx_files(name))
        else:
            raise InputError(f"unknown dataset '{name}' (use mnist, synthetic or idx:<images>:<labels>)")

        return samples[:limit] if limit is not None else samples

    def synthetic(self, split: str = "train") -> list[Sample]:
        rows, cols = self.settings.image_shape
        return make_synthetic(
            n_classes=self.settings.synthetic_classes,
            n_per_class=self.settings.synthetic_per_class,
            dim=rows * cols,
            spread=self.settings.synthetic_spread,
            seed=SYNTHETIC_SPLIT_SEED[split],
            low=self.settings.synthetic_low,
            high=self.settings.synthetic_high,
            width=self.settings.synthetic_width,
        )

    def paths(self, name: str, split: str = "train") -> list[Path]:
        """Files a dataset name reads from, for validation before work begins."""
        if name == "mnist":
            if split not in MNIST_PREFIX:
                raise InputError(f"split must be train or test, got '{split}'")
            return list(self._mnist_files(split))
        if name.startswith("idx:"):
            return list(self._idx_files(name))
        return []

    def mnist_available(self) -> bool:
        return all(path.is_file() for split in MNIST_PREFIX for path in self._mnist_files(split))

    def image_shape_for(self, dim: int) -> tuple[int, int]:
        """(rows, cols) of a flattened image: the configured shape if it fits, else a square."""
        rows, cols = self.settings.image_shape
        if rows * cols == dim:
            return rows, cols
        side = int(round(dim ** 0.5))
        if side * side != dim:
            raise InputError(f"cannot view a {dim}-pixel vector as an image")
        return side, side

    def _mnist_files(self, split: str) -> tuple[Path, Path]:
        prefix = MNIST_PREFIX[split]
        return (
            self.settings.mnist_dir / f"{prefix}-images-idx3-ubyte",
            self.settings.mnist_dir / f"{prefix}-labels-idx1-ubyte",
        )

    @staticmethod
    def _idx_files(name: str) -> tuple[Path, Path]:
        parts = name.split(":")
        if len(parts) != 3:
            raise InputError(f"expected idx:<images>:<labels>, got '{name}'")
        return Path(parts[1]), Path(parts[2])
