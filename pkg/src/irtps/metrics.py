"""Ground-truth error metrics and report formatting.

All metrics are mean absolute differences over the intersection of the two
valid masks. Heights are compared after shifting the estimate so its mean
matches the reference, since integration fixes height only up to a constant.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .core import AlbedoMap, HeightField, NormalMap

METHODS = ("PS", "IRTPSr1", "IRTPSr2", "IRTPSr3")
CSV_FIELDS = ("method", "height_err", "albedo_err", "normal_err", "n_pixels")


def _common(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what} maps differ in shape: {a.shape} vs {b.shape}")
    m = a.mask & b.mask
    if not m.any():
        raise ValueError(f"{what} maps share no valid pixels")
    return m


def height_error(gt: HeightField, h: HeightField, align: bool = True) -> float:
    m = _common(gt, h, "height")
    d = gt.height[m] - h.height[m]
    if align:
        d = d - d.mean()
    return float(np.mean(np.abs(d)))


def albedo_error(gt: AlbedoMap, a: AlbedoMap):
    """``(combined, per_channel)``: channel means of |gt - a| and their mean."""
    m = _common(gt, a, "albedo")
    if gt.albedo.shape[2] != a.albedo.shape[2]:
        raise ValueError(f"channel mismatch: {gt.albedo.shape[2]} vs {a.albedo.shape[2]}")
    per = np.abs(gt.albedo[m] - a.albedo[m]).mean(axis=0)
    return float(per.mean()), tuple(float(v) for v in per)


def normal_error(gt: NormalMap, n: NormalMap):
    """``(combined, per_axis)``: axis means of |gt - n| and their mean."""
    m = _common(gt, n, "normal")
    for name, arr in (("reference", gt.normals[m]), ("estimate", n.normals[m])):
        norms = np.linalg.norm(arr, axis=1)
        if not np.all(np.isfinite(arr)) or np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError(f"{name} normals are not unit length inside the mask")
    per = np.abs(gt.normals[m] - n.normals[m]).mean(axis=0)
    return float(per.mean()), tuple(float(v) for v in per)


@dataclass
class ErrorReport:
    height_err: float
    albedo_err: float
    albedo_rgb: tuple
    normal_err: float
    normal_xyz: tuple
    n_pixels: int
    height_err_raw: float = None

    def __post_init__(self):
        vals = [self.height_err, self.albedo_err, self.normal_err, *self.albedo_rgb, *self.normal_xyz]
        if any(v < 0 for v in vals):
            raise ValueError("errors must be non-negative")


def evaluate(gt_h, gt_n, gt_a, h, n, a, raw: bool = False) -> ErrorReport:
    """All three metrics; ``n_pixels`` counts pixels valid in every map."""
    m = gt_h.mask & h.mask & gt_n.mask & n.mask & gt_a.mask & a.mask
    he = height_error(gt_h, h)
    ae, rgb = albedo_error(gt_a, a)
    ne, xyz = normal_error(gt_n, n)
    return ErrorReport(he, ae, rgb, ne, xyz, int(m.sum()),
                       height_error(gt_h, h, align=False) if raw else None)


def to_csv(reports: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for method, r in reports.items():
        w.writerow([method, repr(r.height_err), repr(r.albedo_err), repr(r.normal_err), r.n_pixels])
    return buf.getvalue()


def read_csv(text: str) -> dict:
    rows = csv.DictReader(io.StringIO(text))
    return {r["method"]: {k: (int(v) if k == "n_pixels" else float(v))
                          for k, v in r.items() if k != "method"} for r in rows}


def format_table(reports: dict) -> str:
    """Plain-text table: one column per method, rows Height / Albedo / Normal."""
    methods = list(reports)
    rows = [("Height", [r.height_err for r in reports.values()]),
            ("Albedo", [r.albedo_err for r in reports.values()]),
            ("Normal", [r.normal_err for r in reports.values()])]
    if any(r.height_err_raw is not None for r in reports.values()):
        rows.append(("Height (raw)", [np.nan if r.height_err_raw is None else r.height_err_raw
                                      for r in reports.values()]))
    label = max(len(r[0]) for r in rows)
    width = max(12, *(len(m) for m in methods))
    lines = [" " * label + "".join(f"  {m:>{width}}" for m in methods)]
    for name, vals in rows:
        lines.append(f"{name:<{label}}" + "".join(f"  {v:>{width}.6f}" for v in vals))
    return "\n".join(lines) + "\n"
