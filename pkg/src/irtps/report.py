"""PNG visualizations for the evaluation report. Quantitative output lives in CSV/PFM."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .core import AlbedoMap, HeightField, NormalMap  # noqa: E402


def to_srgb(img: np.ndarray, exposure: float = 1.0) -> np.ndarray:
    """Linear radiance to display sRGB in [0, 1]."""
    x = np.clip(np.asarray(img, dtype=np.float64) * exposure, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * x ** (1 / 2.4) - 0.055)


def error_maps(gt_h: HeightField, gt_n: NormalMap, gt_a: AlbedoMap, h: HeightField,
               n: NormalMap, a: AlbedoMap):
    """Per-pixel |error| maps (height aligned by mean), NaN outside the common mask."""
    m = gt_h.mask & h.mask
    dh = np.full(m.shape, np.nan)
    e = h.height[m] - h.height[m].mean() + gt_h.height[m].mean()
    dh[m] = np.abs(gt_h.height[m] - e)
    mn = gt_n.mask & n.mask
    dn = np.where(mn, np.abs(gt_n.normals - n.normals).mean(axis=2), np.nan)
    ma = gt_a.mask & a.mask
    da = np.where(ma, np.abs(gt_a.albedo - a.albedo).mean(axis=2), np.nan)
    return dh, da, dn


def save_error_figure(path, method: str, maps, vmax=None) -> None:
    titles = ("height |error| (px)", "albedo |error|", "normal |error|")
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.6), constrained_layout=True)
    for k, (ax, img, title) in enumerate(zip(axes, maps, titles)):
        top = None if vmax is None else vmax[k]
        im = ax.imshow(img, cmap="magma", vmin=0.0, vmax=top)
        ax.set_title(title)
        ax.set_axis_off()
        fig.colorbar(im, ax=ax, shrink=0.8)
    fig.suptitle(method)
    fig.savefig(path, dpi=100)
    plt.close(fig)


def save_bar_chart(path, reports: dict) -> None:
    methods = list(reports)
    rows = (("Height", "height_err"), ("Albedo", "albedo_err"), ("Normal", "normal_err"))
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4), constrained_layout=True)
    for ax, (name, attr) in zip(axes, rows):
        vals = [getattr(reports[m], attr) for m in methods]
        ax.bar(methods, vals, color=["0.5"] + ["tab:blue"] * (len(methods) - 1))
        ax.set_title(name)
        ax.tick_params(axis="x", labelrotation=30)
    fig.savefig(path, dpi=100)
    plt.close(fig)


def save_image(path, img: np.ndarray) -> None:
    """Tone-mapped preview of a linear image; exposure puts the 99th percentile at 1."""
    img = np.asarray(img, dtype=np.float64)
    top = np.percentile(img, 99) if img.size else 0.0
    rgb = to_srgb(img, 1.0 / top if top > 0 else 1.0)
    if rgb.shape[2] == 1:
        rgb = np.repeat(rgb, 3, axis=2)
    plt.imsave(Path(path), rgb)
