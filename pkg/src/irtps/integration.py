"""Robust surface-from-gradient integration.

The height ``H`` (pixel units) minimizes ``sum phi(H_x - p) + phi(H_y - q)``
over forward differences between neighbouring valid pixels, with ``phi`` the
Huber loss, solved by iteratively reweighted least squares. Each edge's
target is the mean of the gradients at its two end pixels, which is exact for
quadratic surfaces. ``delta = inf`` gives plain least-squares integration.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import cg

from .core import HeightField, NormalMap

HUBER_K = 1.345
MAD_TO_SIGMA = 1.4826


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class GradientField:
    p: np.ndarray  # dH/dx, x to the right
    q: np.ndarray  # dH/dy, y upward (toward row 0)
    mask: np.ndarray

    @property
    def shape(self):
        return self.mask.shape


@dataclass
class IntegrationConfig:
    delta: Optional[float] = None  # None: 1.345 * robust sigma of least-squares residuals
    max_iter: int = 50
    cg_tol: float = 1e-8
    irls_tol: float = 1e-6
    min_nz: float = 1e-3


def normals_to_gradients(normals: NormalMap, min_nz: float = 1e-3) -> GradientField:
    n = normals.normals
    mask = normals.mask & (n[:, :, 2] >= min_nz)
    nz = np.where(mask, n[:, :, 2], 1.0)
    p = np.where(mask, -n[:, :, 0] / nz, 0.0)
    q = np.where(mask, -n[:, :, 1] / nz, 0.0)
    return GradientField(p, q, mask)


def _edges(grad: GradientField):
    """Difference operator over valid neighbour pairs and the edge targets."""
    mask = grad.mask
    h, w = mask.shape
    index = -np.ones((h, w), dtype=np.int64)
    index[mask] = np.arange(int(mask.sum()))
    n = int(mask.sum())

    # horizontal: H[i, j+1] - H[i, j] ~ (p[i, j] + p[i, j+1]) / 2
    hz = mask[:, :-1] & mask[:, 1:]
    a_h = index[:, :-1][hz]
    b_h = index[:, 1:][hz]
    g_h = 0.5 * (grad.p[:, :-1][hz] + grad.p[:, 1:][hz])
    # vertical: H[i-1, j] - H[i, j] ~ (q[i, j] + q[i-1, j]) / 2
    vt = mask[1:, :] & mask[:-1, :]
    a_v = index[1:, :][vt]
    b_v = index[:-1, :][vt]
    g_v = 0.5 * (grad.q[1:, :][vt] + grad.q[:-1, :][vt])

    a = np.concatenate([a_h, a_v])
    b = np.concatenate([b_h, b_v])
    g = np.concatenate([g_h, g_v])
    m = len(g)
    rows = np.repeat(np.arange(m), 2)
    cols = np.stack([b, a], axis=1).ravel()
    vals = np.tile([1.0, -1.0], m)
    D = sparse.csr_matrix((vals, (rows, cols)), shape=(m, n))
    return D, g, index


def _solve(D, w, g, x0, tol):
    A = (D.T @ sparse.diags(w) @ D).tocsr()
    rhs = D.T @ (w * g)
    diag = A.diagonal()
    inv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    M = sparse.diags(inv)
    x, info = cg(A, rhs, x0=x0, rtol=tol, atol=0.0, maxiter=20 * A.shape[0] + 100, M=M)
    return x, info == 0


def _center(x, labels, ncomp):
    counts = np.bincount(labels, minlength=ncomp)
    means = np.bincount(labels, weights=x, minlength=ncomp) / np.maximum(counts, 1)
    return x - means[labels]


def robust_scale(residuals: np.ndarray) -> float:
    """Normal-consistent MAD scale."""
    if residuals.size == 0:
        return 0.0
    med = np.median(residuals)
    return MAD_TO_SIGMA * float(np.median(np.abs(residuals - med)))


def integrate(grad: GradientField, config: IntegrationConfig = None, return_info: bool = False):
    """Height field (pixel units) with zero mean on every connected valid region.

    Emits :class:`ConvergenceWarning` and returns the last iterate when IRLS
    does not settle within ``max_iter`` iterations.
    """
    cfg = IntegrationConfig() if config is None else config
    mask = grad.mask
    if not mask.any():
        raise ValueError("no valid pixels to integrate")
    D, g, index = _edges(grad)
    n = D.shape[1]
    adj = (abs(D).T @ abs(D)).tocsr()
    ncomp, labels = connected_components(adj, directed=False)

    info = {"iterations": 0, "converged": True, "delta": np.inf}
    x = np.zeros(n)
    if len(g):
        x, ok = _solve(D, np.ones(len(g)), g, x, cfg.cg_tol)
        info["converged"] = ok
        delta = cfg.delta
        if delta is None:
            r = D @ x - g
            scale = max(float(np.abs(g).max()), 1.0)
            delta = max(HUBER_K * robust_scale(r), 1e-9 * scale)
        info["delta"] = delta
        if np.isfinite(delta):
            converged = False
            for it in range(1, cfg.max_iter + 1):
                r = np.abs(D @ x - g)
                w = np.where(r <= delta, 1.0, delta / np.maximum(r, 1e-300))
                x_new, ok = _solve(D, w, g, x, cfg.cg_tol)
                step = float(np.abs(_center(x_new - x, labels, ncomp)).max())
                x = x_new
                info["iterations"] = it
                if step <= cfg.irls_tol * max(1.0, float(np.abs(x).max())):
                    converged = ok
                    break
            info["converged"] = converged
        if not info["converged"]:
            warnings.warn("height integration did not converge; returning last iterate",
                          ConvergenceWarning, stacklevel=2)
    x = _center(x, labels, ncomp)
    height = np.zeros(mask.shape)
    height[mask] = x
    hf = HeightField(height, mask.copy())
    return (hf, info) if return_info else hf


def integrate_normals(normals: NormalMap, config: IntegrationConfig = None,
                      return_info: bool = False):
    cfg = IntegrationConfig() if config is None else config
    return integrate(normals_to_gradients(normals, cfg.min_nz), cfg, return_info=return_info)


def height_to_gradients(hf: HeightField) -> GradientField:
    """Second-order finite-difference gradients; exact for quadratics on a full grid."""
    h = np.where(hf.mask, hf.height, 0.0)
    order = 2 if min(h.shape) >= 3 else 1
    gy, gx = np.gradient(h, edge_order=order)
    return GradientField(gx, -gy, hf.mask.copy())


def height_to_normals(hf: HeightField) -> NormalMap:
    g = height_to_gradients(hf)
    n = np.stack([-g.p, -g.q, np.ones_like(g.p)], axis=2)
    n /= np.linalg.norm(n, axis=2, keepdims=True)
    return NormalMap(n, hf.mask)
