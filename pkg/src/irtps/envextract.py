"""Reverted ray tracing: environment light reflected onto a reconstructed surface.

From every valid pixel of the current surface one cosine-weighted ray is sent
into the known box and followed through ``r`` diffuse wall hits. The gathered
value is the pixel albedo times the albedos of the intermediate walls times
the direct light reflected by the last wall; under cosine sampling the cosine
and pdf factors cancel. Chains that leave through the open face or run into
the surface itself carry no sample and are filled in afterwards by
inverse-distance weighting over the nearest valid pixels.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels as K
from .core import AlbedoMap, HeightField, LightSet, NormalMap, Placement
from .io import write_pfm, write_pgm
from .raytrace import heightfield_geometry
from .scene import EnvironmentBox

IDW_NEIGHBOURS = 8
IDW_POWER = 2.0


@dataclass
class EnvIntensityImage:
    values: np.ndarray  # (H, W, 3), zero where mask is False
    mask: np.ndarray  # chain completed
    depth: int
    light: int
    support: np.ndarray = None  # surface pixels the image is defined on

    def __post_init__(self):
        if self.depth not in (1, 2, 3):
            raise ValueError(f"reflection depth must be 1, 2 or 3, got {self.depth}")
        if self.support is None:
            self.support = np.ones(self.mask.shape, dtype=bool)


def place_surface(height: HeightField, placement: Placement, valid=None) -> np.ndarray:
    """World z of each pixel; the lowest valid point sits at ``placement.base``."""
    valid = height.mask if valid is None else valid
    pitch = placement.pitch(height.shape[1])
    h = height.height
    lo = h[valid].min() if valid.any() else 0.0
    return np.where(valid, placement.base + (h - lo) * pitch, 0.0)


def light_seed(seed: int, direction, intensity: float = 1.0) -> np.uint64:
    """Sub-seed derived from the light's own bits, so it follows the light when reordered."""
    bits = np.asarray(list(direction) + [intensity], dtype=np.float64).view(np.uint64)
    return K.hash_key(np.uint64(seed), bits[0], bits[1], bits[2], bits[3])


def _surface(height, normals, albedo, placement):
    valid = height.mask & normals.mask & albedo.mask
    z = place_surface(height, placement, valid)
    xs, ys = placement.pixel_centers(*valid.shape)
    idx = np.flatnonzero(valid.ravel())
    P = np.stack([xs.ravel()[idx], ys.ravel()[idx], z.ravel()[idx]], axis=1)
    N = normals.normals.reshape(-1, 3)[idx]
    alb = albedo.albedo
    if alb.shape[2] == 1:
        alb = np.repeat(alb, 3, axis=2)
    A = alb.reshape(-1, 3)[idx]
    hz, cells, geom = heightfield_geometry(z, valid, placement)
    return valid, idx, np.ascontiguousarray(P), np.ascontiguousarray(N), np.ascontiguousarray(A), \
        (hz, cells, geom)


def _gather(height, normals, albedo, env, directions, intensities, seeds, depth, placement):
    if depth not in (1, 2, 3):
        raise ValueError(f"reflection depth must be 1, 2 or 3, got {depth}")
    valid, idx, P, N, A, (hz, cells, geom) = _surface(height, normals, albedo, placement)
    vals, ok = K.chain_kernel(P, N, A, idx.astype(np.int64), int(depth),
                              np.asarray(seeds, dtype=np.uint64),
                              np.ascontiguousarray(directions, dtype=np.float64),
                              np.ascontiguousarray(intensities, dtype=np.float64),
                              np.array(env.lo), np.array(env.hi), env.wall_array(), hz, cells, geom)
    h, w = valid.shape
    out = []
    for q in range(len(seeds)):
        img = np.zeros((h * w, 3))
        m = np.zeros(h * w, dtype=bool)
        img[idx] = np.where(ok[q][:, None], vals[q], 0.0)
        m[idx] = ok[q]
        out.append((img.reshape(h, w, 3), m.reshape(h, w)))
    return valid, out


def extract(height: HeightField, normals: NormalMap, albedo: AlbedoMap, env: EnvironmentBox,
            light, r: int, seed: int, placement: Placement = None, intensity: float = 1.0,
            light_index: int = 0) -> EnvIntensityImage:
    """Sparse environment-intensity image for one light direction at depth ``r``."""
    placement = Placement() if placement is None else placement
    d = np.asarray(light, dtype=np.float64).reshape(3)
    valid, [(img, m)] = _gather(height, normals, albedo, env, d[None], [intensity],
                                [light_seed(seed, d, intensity)], r, placement)
    return EnvIntensityImage(img, m, r, light_index, valid)


def fill_sparse(e: EnvIntensityImage, k: int = IDW_NEIGHBOURS, power: float = IDW_POWER) -> np.ndarray:
    """Dense image over ``e.support``; valid samples are kept bit-exact."""
    valid = e.mask & e.support
    if not valid.any():
        raise ValueError("no samples to interpolate")
    out = np.zeros_like(e.values)
    out[valid] = e.values[valid]
    holes = e.support & ~valid
    if holes.any():
        src = np.argwhere(valid).astype(np.float64)
        dst = np.argwhere(holes).astype(np.float64)
        kk = min(k, len(src))
        dist, nb = cKDTree(src).query(dst, k=kk)
        dist = dist.reshape(len(dst), kk)
        nb = nb.reshape(len(dst), kk)
        wgt = 1.0 / dist ** power
        wgt /= wgt.sum(axis=1, keepdims=True)
        vals = e.values[valid]  # same order as src
        out[holes] = np.einsum("nk,nkc->nc", wgt, vals[nb])
    return out


def extract_all(height: HeightField, normals: NormalMap, albedo: AlbedoMap, env: EnvironmentBox,
                lights: LightSet, r: int, seed: int, placement: Placement = None,
                return_sparse: bool = False):
    """Dense depth-``r`` environment images, one per light."""
    placement = Placement() if placement is None else placement
    seeds = [light_seed(seed, d, s) for d, s in zip(lights.directions, lights.intensities)]
    valid, chains = _gather(height, normals, albedo, env, lights.directions, lights.intensities,
                            seeds, r, placement)
    sparse_imgs = [EnvIntensityImage(img, m, r, q, valid) for q, (img, m) in enumerate(chains)]
    dense = []
    for e in sparse_imgs:
        dense.append(fill_sparse(e) if (e.mask & e.support).any() else np.zeros_like(e.values))
    return (dense, sparse_imgs) if return_sparse else dense


def dump_env(out_dir, sparse_imgs, dense) -> None:
    """Debug files ``env_r{r}_light{k}_{sparse.pfm,mask.pgm,dense.pfm}``."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    for e, img in zip(sparse_imgs, dense):
        stem = d / f"env_r{e.depth}_light{e.light}"
        write_pfm(e.values, f"{stem}_sparse.pfm")
        write_pgm(e.mask, f"{stem}_mask.pgm")
        write_pfm(img, f"{stem}_dense.pfm")
