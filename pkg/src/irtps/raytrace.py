"""Forward Monte-Carlo renderer with per-bounce image separation.

Lights are directional. With a unit light the direct reflected radiance of a
Lambertian point is exactly ``albedo * max(0, l . n)``, so photometric stereo
on direct-only renders is exact. Deeper bounces are estimated with
cosine-weighted path tracing and next-event estimation at every vertex;
the camera is orthographic and sees the object only (background pixels are 0).
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from . import _kernels as K
from .core import Dataset, LightSet, Placement
from .scene import WALLS, Scene, SamplerConfig, SceneObject

HF_BIAS_PX = 0.1


def set_threads(n: Optional[int] = None) -> int:
    """Cap compiled-kernel parallelism; output does not depend on the value."""
    if n is None:
        env = os.environ.get("IRTPS_THREADS")
        n = int(env) if env else numba.config.NUMBA_NUM_THREADS
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be a unit vector")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class Hit:
    t: float
    point: np.ndarray
    normal: np.ndarray
    albedo: np.ndarray
    surface: str  # "object" or a wall name


def heightfield_geometry(z: np.ndarray, mask: np.ndarray, placement: Placement,
                         bias_px: float = HF_BIAS_PX):
    """Kernel arrays for a bilinear height surface through valid pixel centers."""
    h, w = mask.shape
    pitch = placement.pitch(w)
    xs, ys = placement.pixel_centers(h, w)
    cells = mask[:-1, :-1] & mask[1:, :-1] & mask[:-1, 1:] & mask[1:, 1:]
    zs = z[mask]
    zmin, zmax = (float(zs.min()), float(zs.max())) if zs.size else (0.0, 0.0)
    geom = np.array([xs[0, 0], ys[0, 0], pitch, zmin, zmax, bias_px * pitch])
    return np.ascontiguousarray(z, dtype=np.float64), np.ascontiguousarray(cells), geom


def _kernel_scene(scene: Scene) -> dict:
    env, obj = scene.env, scene.obj
    args = dict(lo=np.array(env.lo), hi=np.array(env.hi), walls=env.wall_array(),
                sph=np.zeros(4), sph_alb=np.zeros(3))
    if obj.sphere is not None:
        args["kind"] = K.OBJ_SPHERE
        args["sph"] = np.array(obj.sphere, dtype=np.float64)
        args["sph_alb"] = np.ascontiguousarray(obj.albedo[obj.mask][0] if obj.mask.any()
                                               else np.zeros(3))
        args.update(hz=np.zeros((1, 1)), cells=np.zeros((1, 1), dtype=bool), geom=np.zeros(6),
                    hn=np.zeros((1, 1, 3)), halb=np.zeros((1, 1, 3)))
    else:
        args["kind"] = K.OBJ_HEIGHTFIELD
        hz, cells, geom = heightfield_geometry(obj.z, obj.mask, scene.placement)
        args.update(hz=hz, cells=cells, geom=geom,
                    hn=np.ascontiguousarray(obj.normals), halb=np.ascontiguousarray(obj.albedo))
    return args


def intersect(ray: Ray, scene: Scene) -> Optional[Hit]:
    """Nearest hit with ``t > 1e-6`` or ``None`` when the ray leaves through the open face."""
    a = _kernel_scene(scene)
    o, d = ray.origin, ray.direction
    kind, t, nx, ny, nz, ar, ag, ab, wall = K.trace_scene(
        o[0], o[1], o[2], d[0], d[1], d[2], a["lo"], a["hi"], a["walls"], a["kind"], a["sph"],
        a["sph_alb"], a["hz"], a["cells"], a["geom"], a["hn"], a["halb"])
    if kind == K.NO_HIT:
        return None
    name = "object" if kind == K.HIT_OBJECT else WALLS[wall]
    return Hit(t, o + t * d, np.array([nx, ny, nz]), np.array([ar, ag, ab]), name)


def sample_hemisphere(normal, u1: float, u2: float):
    """Cosine-weighted direction about ``normal`` and its pdf ``cos(theta) / pi``."""
    n = np.asarray(normal, dtype=np.float64)
    dx, dy, dz, pdf = K.cosine_sample(n[0], n[1], n[2], float(u1), float(u2))
    return np.array([dx, dy, dz]), pdf


def _primary(obj: SceneObject, pixels=None):
    h, w = obj.shape
    if pixels is None:
        idx = np.flatnonzero(obj.mask.ravel())
    else:
        idx = np.asarray(pixels, dtype=np.int64).ravel()
        if np.any(~obj.mask.ravel()[idx]):
            raise ValueError("requested pixel does not see the object")
    return idx


def _points(scene: Scene, idx):
    obj = scene.obj
    xs, ys = scene.placement.pixel_centers(*obj.shape)
    P = np.stack([xs.ravel()[idx], ys.ravel()[idx], obj.z.ravel()[idx]], axis=1)
    N = obj.normals.reshape(-1, 3)[idx]
    A = obj.albedo.reshape(-1, 3)[idx]
    return np.ascontiguousarray(P), np.ascontiguousarray(N), np.ascontiguousarray(A)


def render_pixels(scene: Scene, cfg: SamplerConfig, pixels=None, lights: LightSet = None):
    """Raw per-light, per-bounce radiance for object pixels.

    Returns ``(idx, out)`` with ``idx`` the flat pixel indices and ``out`` of
    shape ``(len(idx), Q, max(max_bounces, 1), 3)``.
    """
    lights = scene.lights if lights is None else lights
    idx = _primary(scene.obj, pixels)
    P, N, A = _points(scene, idx)
    a = _kernel_scene(scene)
    out = K.render_kernel(P, N, A, idx.astype(np.int64), int(cfg.spp), int(cfg.max_bounces),
                          np.uint64(cfg.seed), np.ascontiguousarray(lights.directions),
                          np.ascontiguousarray(lights.intensities), a["lo"], a["hi"], a["walls"],
                          a["kind"], a["sph"], a["sph_alb"], a["hz"], a["cells"], a["geom"],
                          a["hn"], a["halb"])
    return idx, out


def _scatter(idx, vals, shape):
    """(n, ..., 3) per-pixel values -> (..., H, W, 3) images."""
    h, w = shape
    rest = vals.shape[1:-1]
    img = np.zeros(rest + (h * w, 3))
    img[..., idx, :] = np.moveaxis(vals, 0, -2)
    return img.reshape(rest + (h, w, 3))


def render_bounces(scene: Scene, cfg: SamplerConfig, lights: LightSet = None) -> np.ndarray:
    """Bounce images per light, shape ``(Q, B, H, W, 3)`` with ``B = max_bounces``."""
    idx, out = render_pixels(scene, cfg, lights=lights)
    imgs = _scatter(idx, out, scene.obj.shape)
    if cfg.max_bounces == 0:
        imgs[:] = 0.0
        return imgs[:, :0]
    return imgs


def render(scene: Scene, cfg: SamplerConfig):
    """Render with every scene light on at once.

    Returns ``(total, bounces)`` where ``bounces[k]`` is the image of paths with
    ``k + 1`` surface interactions and ``total`` their sum.
    """
    per_light = render_bounces(scene, cfg)
    bounces = list(per_light.sum(axis=0))
    total = np.zeros(scene.obj.shape + (3,))
    for b in bounces:
        total = total + b
    return total, bounces


def _to_f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def render_dataset(scene: Scene, lights: LightSet, cfg: SamplerConfig, scene_cfg: dict = None,
                   keep_bounces: bool = False):
    """One image per light (only that light on) plus ground-truth maps.

    Pixel values are rounded to float32 so the in-memory dataset equals what
    ``save_dataset`` writes. With ``keep_bounces`` the per-light bounce stack
    ``(Q, B, H, W, 3)`` is returned as a second value.
    """
    if len(lights) < 3:
        raise ValueError("need at least 3 lights")
    per_light = render_bounces(scene, cfg, lights=lights)
    images = []
    for q in range(len(lights)):
        total = np.zeros(scene.obj.shape + (3,))
        for b in range(per_light.shape[1]):
            total = total + per_light[q, b]
        images.append(_to_f32(total))
    gt_h, gt_n, gt_a = scene.obj.ground_truth(scene.placement)
    gt_h.height = _to_f32(gt_h.height)
    gt_n.normals = _to_f32(gt_n.normals)
    gt_a.albedo = _to_f32(gt_a.albedo)
    ds = Dataset(images, lights, gt_h, gt_n, gt_a, scene=scene_cfg, placement=scene.placement)
    return (ds, per_light) if keep_bounces else ds
