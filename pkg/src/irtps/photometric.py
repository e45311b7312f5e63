"""Classic least-squares photometric stereo.

For each pixel the intensities ``a`` under lights ``L`` satisfy
``a = rho * L @ n``; the least-squares solution of ``L g = a`` gives
``rho = |g|`` and ``n = g / rho``. Normals are solved on luminance and the
per-channel albedo is then fitted against the shared normal.
"""
from __future__ import annotations

import numpy as np

from .core import AlbedoMap, Dataset, LightSet, NormalMap

DEFAULT_SHADOW_THRESHOLD = 1e-4
RANK_TOL = 1e-10


def _lit_rows(values: np.ndarray, threshold: float) -> np.ndarray:
    """Boolean (Q, P) rows to use: drop shadowed entries only when >= 3 lights remain."""
    lit = values > threshold
    keep_all = lit.sum(axis=0) < 3
    lit[:, keep_all] = True
    return lit


def _solve_rows(L: np.ndarray, A: np.ndarray):
    """Least-squares ``g`` for ``L g = A`` column-wise, or None when rank < 3."""
    s = np.linalg.svd(L, compute_uv=False)
    if len(s) < 3 or s[-1] <= RANK_TOL * s[0]:
        return None
    q, r = np.linalg.qr(L)
    return np.linalg.solve(r, q.T @ A)


def solve_pixel(a, lights: LightSet, shadow_threshold: float = None):
    """Albedo and unit normal for one pixel.

    ``shadow_threshold`` is absolute; by default it is ``1e-4 * max(a)``.
    Returns ``(rho, n, valid)``. Invalid pixels report ``rho = 0`` and
    ``n = (0, 0, 1)``.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    if a.shape != (len(lights),):
        raise ValueError(f"expected {len(lights)} intensities, got {a.shape}")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise ValueError("intensities must be finite and non-negative")
    flat = np.array([0.0, 0.0, 1.0])
    if not np.any(a > 0):
        return 0.0, flat, False
    thr = DEFAULT_SHADOW_THRESHOLD * a.max() if shadow_threshold is None else shadow_threshold
    rows = _lit_rows(a[:, None], thr)[:, 0]
    g = _solve_rows(lights.matrix[rows], a[rows][:, None])
    if g is None:
        return 0.0, flat, False
    g = g[:, 0]
    rho = float(np.linalg.norm(g))
    if rho == 0.0 or g[2] < 0:
        return 0.0, flat, False
    return rho, g / rho, True


def solve_maps(stack: Dataset, shadow_threshold: float = DEFAULT_SHADOW_THRESHOLD,
               images=None):
    """Per-pixel normals and per-channel albedo for a whole dataset.

    ``shadow_threshold`` is relative to the brightest value in the stack.
    ``images`` overrides the dataset images (same lights), which is how the
    iterative pipeline feeds corrected stacks back in.

    Returns ``(AlbedoMap, NormalMap, failed)`` where ``failed`` marks pixels
    with no usable solution (too few lit lights, rank deficiency, all dark,
    or a normal facing away from the camera).
    """
    imgs = np.stack(stack.images if images is None else images)  # (Q, H, W, C)
    q, h, w, c = imgs.shape
    if q != len(stack.lights):
        raise ValueError(f"{q} images for {len(stack.lights)} lights")
    L = stack.lights.matrix
    lum = imgs.mean(axis=3).reshape(q, -1)
    colour = imgs.reshape(q, -1, c)
    peak = float(imgs.max()) if imgs.size else 0.0
    thr = shadow_threshold * peak

    normals = np.zeros((h * w, 3))
    normals[:, 2] = 1.0
    albedo = np.zeros((h * w, c))
    ok = np.zeros(h * w, dtype=bool)

    active = np.flatnonzero(lum.max(axis=0) > 0)
    rows = _lit_rows(lum[:, active], thr)
    weights = 1 << np.arange(q, dtype=np.int64)
    codes = weights @ rows.astype(np.int64)
    for code in np.unique(codes):
        sel = active[codes == code]
        use = (int(code) & weights) != 0
        Ls = L[use]
        g = _solve_rows(Ls, lum[use][:, sel])
        if g is None:
            continue
        rho = np.linalg.norm(g, axis=0)
        good = (rho > 0) & (g[2] >= 0)
        n = g[:, good] / rho[good]
        px = sel[good]
        normals[px] = n.T
        shade = Ls @ n  # (m, npx)
        denom = (shade * shade).sum(axis=0)
        num = np.einsum("kp,kpc->pc", shade, colour[use][:, px])
        albedo[px] = num / denom[:, None]
        ok[px] = True

    mask = ok.reshape(h, w)
    normals = normals.reshape(h, w, 3)
    albedo = np.maximum(albedo.reshape(h, w, c), 0.0)
    return AlbedoMap(albedo, mask), NormalMap(normals, mask), ~mask


def reconstruct(normals: NormalMap, albedo: AlbedoMap, lights: LightSet) -> np.ndarray:
    """Images ``rho * max(0, l . n)`` predicted by the Lambertian model, (Q, H, W, C)."""
    shade = np.einsum("qk,hwk->qhw", lights.matrix, normals.normals)
    shade = np.maximum(shade, 0.0) * normals.mask
    return shade[..., None] * albedo.albedo[None]
