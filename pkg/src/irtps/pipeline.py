"""Iterative photometric stereo with environment inter-reflection removal.

t = 0: photometric stereo and integration on the captured images.
Each further iteration places the current surface in the known box, estimates
the depth-``r`` environment light per input image by reverted ray tracing,
subtracts it from the *original* images (clamped at zero) and solves again.
The loop stops when the mean absolute height change drops below ``tol``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import AlbedoMap, Dataset, HeightField, NormalMap
from .envextract import dump_env, extract_all
from .integration import IntegrationConfig, integrate_normals
from .io import ensure_dir, save_maps
from .photometric import DEFAULT_SHADOW_THRESHOLD, solve_maps
from .scene import EnvironmentBox

log = logging.getLogger(__name__)

MAX_FAILED_FRACTION = 0.9


class PipelineAbort(RuntimeError):
    """Photometric stereo failed on too many pixels to continue."""


@dataclass
class PipelineConfig:
    r: int = 3
    max_iterations: int = 10
    tol: float = 1e-3
    shadow_threshold: float = DEFAULT_SHADOW_THRESHOLD
    seed: int = 0
    integration: IntegrationConfig = field(default_factory=IntegrationConfig)

    def __post_init__(self):
        if self.r not in (1, 2, 3):
            raise ValueError(f"r must be 1, 2 or 3, got {self.r}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")


@dataclass
class IterationRecord:
    t: int
    height: HeightField
    albedo: AlbedoMap
    normals: NormalMap
    dh: float  # mean |H_t - H_{t-1}|; 0 for t = 0


def subtract_env(images, env) -> np.ndarray:
    """Elementwise ``max(A - E, 0)``."""
    a = np.asarray(images, dtype=np.float64)
    e = np.asarray(env, dtype=np.float64)
    if e.ndim == a.ndim and e.shape != a.shape and e.shape[-1] == 3 and a.shape[-1] == 1:
        e = e.mean(axis=-1, keepdims=True)
    if a.shape != e.shape:
        raise ValueError(f"shape mismatch: images {a.shape} vs environment {e.shape}")
    return np.maximum(a - e, 0.0)


def mean_abs_change(h_prev: HeightField, h_next: HeightField) -> float:
    if h_prev.shape != h_next.shape:
        raise ValueError("height fields differ in shape")
    common = h_prev.mask & h_next.mask
    if not common.any():
        raise ValueError("height fields have disjoint masks")
    return float(np.mean(np.abs(h_next.height[common] - h_prev.height[common])))


def converged(h_prev: HeightField, h_next: HeightField, tol: float) -> bool:
    return mean_abs_change(h_prev, h_next) < tol


def solve_surface(dataset: Dataset, images, cfg: PipelineConfig):
    """Photometric stereo plus integration; the shared step of every iteration."""
    albedo, normals, failed = solve_maps(dataset, cfg.shadow_threshold, images=images)
    frac = failed.mean()
    if frac > MAX_FAILED_FRACTION:
        raise PipelineAbort(
            f"photometric stereo failed on {100 * frac:.1f}% of pixels "
            f"(limit {100 * MAX_FAILED_FRACTION:.0f}%)")
    height = integrate_normals(normals, cfg.integration)
    mask = height.mask
    albedo = AlbedoMap(albedo.albedo, mask)
    normals = NormalMap(normals.normals, mask)
    return height, albedo, normals


def run(dataset: Dataset, env: EnvironmentBox, cfg: PipelineConfig = None, dump_dir=None):
    """Returns ``(final_record, history)``; ``history[0]`` is plain photometric stereo."""
    cfg = PipelineConfig() if cfg is None else cfg
    originals = dataset.images
    height, albedo, normals = solve_surface(dataset, originals, cfg)
    history = [IterationRecord(0, height, albedo, normals, 0.0)]
    _dump(dump_dir, history[-1])
    for t in range(1, cfg.max_iterations + 1):
        dense, sparse_imgs = extract_all(height, normals, albedo, env, dataset.lights, cfg.r,
                                         cfg.seed + t - 1, dataset.placement, return_sparse=True)
        corrected = [subtract_env(a, e) for a, e in zip(originals, dense)]
        new_h, new_a, new_n = solve_surface(dataset, corrected, cfg)
        dh = mean_abs_change(height, new_h)
        rec = IterationRecord(t, new_h, new_a, new_n, dh)
        history.append(rec)
        if dump_dir is not None:
            _dump(dump_dir, rec)
            dump_env(Path(dump_dir) / f"iter_{t}", sparse_imgs, dense)
        log.info("iteration %d: D_H = %.6g", t, dh)
        height, albedo, normals = new_h, new_a, new_n
        if dh < cfg.tol:
            break
    return history[-1], history


def _dump(dump_dir, rec: IterationRecord) -> None:
    if dump_dir is None:
        return
    d = ensure_dir(Path(dump_dir) / f"iter_{rec.t}")
    save_maps(d, rec.height, rec.normals, rec.albedo)
    (d / "dh.txt").write_text(f"{rec.dh!r}\n")
