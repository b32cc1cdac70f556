"""Static SVG figures. Output carries no timestamps so reruns are byte-identical."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .certify import EPR_BOUND  # noqa: E402
from .jpd import Projection  # noqa: E402

plt.rcParams["svg.hashsalt"] = "biphoton-epr"
plt.rcParams["svg.fonttype"] = "none"

_AXIS_LABELS = {
    "minus_position": ("$x_s - x_i$ (camera px)", "$y_s - y_i$ (camera px)"),
    "sum_momentum": ("$q_{x,s} + q_{x,i}$ (px)", "$q_{y,s} + q_{y,i}$ (px)"),
    "corrected_sum_momentum": (r"$\lambda_s(q_{x,s}/\lambda_s + q_{x,i}/\lambda_i)$ (px)",
                               r"$\lambda_s(q_{y,s}/\lambda_s + q_{y,i}/\lambda_i)$ (px)"),
}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def projection_heatmap(projection: Projection, path, half_width: int | None = None) -> None:
    """Heatmap of the central part of a projection (+-half_width bins)."""
    values = projection.values
    cy, cx = projection.center_index
    if half_width is None:
        half_width = min(cy, cx, 40)
    sub = values[cy - half_width:cy + half_width + 1, cx - half_width:cx + half_width + 1]
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    extent = (-half_width - 0.5, half_width + 0.5, half_width + 0.5, -half_width - 0.5)
    im = ax.imshow(sub, extent=extent, cmap="magma", interpolation="nearest")
    xlabel, ylabel = _AXIS_LABELS[projection.axis_kind]
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.colorbar(im, ax=ax, label="coincidences / frame pair")
    fig.tight_layout()
    _save(fig, path)


def product_vs_waist(points, scaling, path) -> None:
    """EPR product against pump waist for each crystal, corrected and uncorrected.

    ``points`` are PointResults; ``scaling`` maps (label, crystal_length) to a
    ScalingFit drawn as a / w_p.
    """
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    lengths = sorted({p.crystal_length for p in points})
    colors = dict(zip(lengths, ["tab:red", "tab:blue", "tab:green", "tab:purple"]))
    markers = {"corrected": "o", "uncorrected": "x"}
    waist_grid = np.linspace(min(p.pump_waist for p in points) * 0.9,
                             max(p.pump_waist for p in points) * 1.1, 100)
    for length in lengths:
        for label, marker in markers.items():
            sel = [p for p in points if p.ok and p.crystal_length == length]
            if not sel:
                continue
            w = [p.pump_waist for p in sel]
            y = [p.reports[label].product for p in sel]
            e = [p.reports[label].product_uncertainty for p in sel]
            ax.errorbar(w, y, yerr=e, fmt=marker, color=colors.get(length, "k"),
                        label=f"{length:g} mm, {label}", capsize=2)
            fit = scaling.get((label, length))
            if fit is not None and label == "corrected":
                ax.plot(waist_grid, fit.a / waist_grid, color=colors.get(length, "k"), lw=1)
    ax.axhline(EPR_BOUND, color="purple", lw=1)
    ax.set_xlabel("pump waist (um)")
    ax.set_ylabel(r"$\Delta_r \Delta_p$ ($\hbar$)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)
