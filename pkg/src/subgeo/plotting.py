"""Raster copies of the report figures (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def scatter_png(spec: dict, out_dir: Path, dpi: int = 120) -> str:
    pts = np.asarray(spec["points"], dtype=float).reshape(-1, 2)
    fig, ax = plt.subplots(figsize=(5, 3.75))
    try:
        ax.scatter(pts[:, 0], pts[:, 1], s=12, alpha=0.7)
        if spec.get("line") is not None:
            slope, intercept = spec["line"]
            xs = np.array([pts[:, 0].min(), pts[:, 0].max()])
            ax.plot(xs, slope * xs + intercept, color="tab:red", lw=1.5,
                    label=f"fit: {slope:.3g} x + {intercept:.3g}")
            ax.legend(loc="best", fontsize=8)
        ax.set_title(spec["title"], fontsize=10)
        ax.set_xlabel(spec["xlabel"])
        ax.set_ylabel(spec["ylabel"])
        ax.grid(alpha=0.3)
        fig.tight_layout()
        name = f"{spec['name']}.png"
        fig.savefig(Path(out_dir) / name, dpi=dpi, metadata={"Software": None})
    finally:
        plt.close(fig)
    return name
