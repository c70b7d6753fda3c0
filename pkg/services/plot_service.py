from collections.abc import Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from schemas.models import SweepRow  # noqa: E402

# Fixed id salt and no date stamp keep repeated renders byte-identical.
matplotlib.rcParams["svg.hashsalt"] = "density-confidence"

KIND_TITLES = {
    "gaussian_noise": ("Gaussian noise", "noise σ"),
    "gaussian_blur": ("Gaussian blur", "kernel σ (px)"),
    "jpeg": ("JPEG compression", "quality"),
}


def plot_sweep(rows: Sequence[SweepRow], path: str | Path) -> None:
    """Normalised softmax vs density confidence against distortion level."""
    kind = rows[0].kind
    title, xlabel = KIND_TITLES.get(kind, (kind, "level"))
    levels = [row.level for row in rows]

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    try:
        ax.plot(levels, [row.norm_softmax for row in rows], marker="o", label="softmax")
        ax.plot(levels, [row.norm_density for row in rows], marker="s", label="density")
        ax.axhline(1.0, color="0.7", linewidth=0.8, linestyle="--")
        ax.set_title(f"{title}: confidence (clean = 1)")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("normalised confidence")
        if kind == "jpeg":
            ax.invert_xaxis()
        ax.legend()
        fig.tight_layout()
        fig.savefig(str(path), format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
