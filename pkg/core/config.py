from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path


@dataclass(frozen=True)
class Settings:
    base_dir: Path
    data_dir: Path
    mnist_dir: Path
    version: str = "1.0.0"
    default_seed: int = 0
    variance_floor: float = 1e-6
    hidden_dims: tuple[int, ...] = (128, 64)
    image_shape: tuple[int, int] = (28, 28)
    learning_rate: float = 0.05
    epochs: int = 10
    batch_size: int = 32
    overshoot: float = 0.02
    max_iter: int = 50
    sweep_workers: int = 2
    synthetic_classes: int = 10
    synthetic_per_class: int = 200
    # 0/1 images with three "on" pixels per class, so sigma=1 noise swamps the class signal
    synthetic_spread: float = 0.3
    synthetic_low: float = 0.0
    synthetic_high: float = 1.0
    synthetic_width: int = 3
    allowed_image_outputs: tuple[str, ...] = (".idx", ".pgm")


@lru_cache
def get_settings() -> Settings:
    base_dir = Path(__file__).resolve().parents[1]
    data_dir = base_dir / "data"
    return Settings(
        base_dir=base_dir,
        data_dir=data_dir,
        mnist_dir=data_dir / "mnist",
    )
