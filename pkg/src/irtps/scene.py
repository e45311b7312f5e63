"""Scene description: Cornell-box environment, imaged object, ``scene.cfg`` parsing."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import AlbedoMap, HeightField, LightSet, NormalMap, Placement, ring_lights
from .io import read_kv, read_pfm

WALLS = ("left", "right", "back", "floor", "ceiling")
OBJECT_TYPES = ("sphere", "heightfield", "concave-bowl")

CORNELL_WALLS = {
    "left": (0.75, 0.1, 0.1),
    "right": (0.1, 0.75, 0.1),
    "back": (0.75, 0.75, 0.75),
    "floor": (0.75, 0.75, 0.75),
    "ceiling": (0.75, 0.75, 0.75),
}


class ConfigError(Exception):
    """Bad or missing ``scene.cfg`` entry."""


@dataclass(frozen=True)
class EnvironmentBox:
    """Axis-aligned box with five Lambertian walls, open toward +z (the camera)."""

    lo: tuple = (-2.5, -2.5, -2.0)
    hi: tuple = (2.5, 2.5, 2.0)
    albedo: dict = field(default_factory=lambda: dict(CORNELL_WALLS))

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError(f"box corners out of order: {lo} {hi}")
        alb = {}
        for w in WALLS:
            v = np.asarray(self.albedo.get(w, (0.0, 0.0, 0.0)), dtype=np.float64).reshape(-1)
            if v.size == 1:
                v = np.repeat(v, 3)
            if v.shape != (3,) or np.any(v < 0) or np.any(v > 1):
                raise ValueError(f"wall {w}: albedo must be 3 values in [0, 1], got {v}")
            alb[w] = tuple(float(c) for c in v)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "albedo", alb)

    @classmethod
    def from_size(cls, size=(5.0, 5.0, 4.0), front: float = 2.0, albedo=None):
        w, h, d = (float(s) for s in size)
        return cls((-w / 2, -h / 2, front - d), (w / 2, h / 2, front),
                   dict(CORNELL_WALLS) if albedo is None else albedo)

    @classmethod
    def black(cls, **kw):
        return replace(cls(**kw), albedo={w: (0.0, 0.0, 0.0) for w in WALLS})

    def wall_array(self) -> np.ndarray:
        """(5, 3) albedos in kernel wall order: left, right, back, floor, ceiling."""
        return np.array([self.albedo[w] for w in WALLS], dtype=np.float64)

    def scaled(self, s: float) -> "EnvironmentBox":
        return replace(self, albedo={w: tuple(s * c for c in v) for w, v in self.albedo.items()})

    def contains(self, lo, hi) -> bool:
        return all(a <= b for a, b in zip(self.lo, lo)) and all(a >= b for a, b in zip(self.hi, hi))


@dataclass
class SceneObject:
    """The imaged object sampled on the camera grid.

    ``z`` is world height of the visible surface at each pixel center,
    ``normals`` the true unit normals there. Spheres additionally keep their
    analytic description so secondary rays hit the exact surface; every other
    object is intersected as a bilinear height field through the pixel centers.
    """

    kind: str
    z: np.ndarray
    normals: np.ndarray
    albedo: np.ndarray
    mask: np.ndarray
    sphere: tuple = None  # (cx, cy, cz, r)

    @property
    def shape(self):
        return self.mask.shape

    def ground_truth(self, placement: Placement):
        """Height in pixel units, normals and albedo with the silhouette mask."""
        pitch = placement.pitch(self.shape[1])
        h = np.where(self.mask, self.z / pitch, 0.0)
        n = np.where(self.mask[:, :, None], self.normals, 0.0)
        a = np.where(self.mask[:, :, None], self.albedo, 0.0)
        return HeightField(h, self.mask), NormalMap(n, self.mask), AlbedoMap(a, self.mask)

    def bounds(self):
        zs = self.z[self.mask]
        return float(zs.min()), float(zs.max())


def _rgb(albedo, shape):
    a = np.asarray(albedo, dtype=np.float64)
    if a.ndim <= 1:
        a = np.broadcast_to(np.resize(a, 3), shape + (3,))
    return np.array(a, dtype=np.float64)


def make_sphere(shape, placement: Placement, radius: float, albedo=(0.8, 0.8, 0.8),
                center=None) -> SceneObject:
    """Sphere whose equator sits at ``placement.base`` unless ``center`` is given."""
    xs, ys = placement.pixel_centers(*shape)
    cx, cy, cz = (0.0, 0.0, placement.base) if center is None else center
    r2 = (xs - cx) ** 2 + (ys - cy) ** 2
    mask = r2 < radius * radius
    dz = np.sqrt(np.maximum(radius * radius - r2, 0.0))
    z = np.where(mask, cz + dz, 0.0)
    n = np.stack([xs - cx, ys - cy, dz], axis=2) / radius
    n = np.where(mask[:, :, None], n / np.linalg.norm(n, axis=2, keepdims=True), 0.0)
    return SceneObject("sphere", z, n, _rgb(albedo, shape), mask, (cx, cy, cz, radius))


def make_heightfield(height_px: np.ndarray, placement: Placement, albedo=(0.8, 0.8, 0.8),
                     mask=None, normals=None) -> SceneObject:
    """Object from a height map in pixel units; normals by central differences if absent."""
    h = np.asarray(height_px, dtype=np.float64)
    m = np.ones(h.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if normals is None:
        gy, gx = np.gradient(h)
        # rows grow downward while y grows upward
        n = np.stack([-gx, gy, np.ones_like(h)], axis=2)
        normals = n / np.linalg.norm(n, axis=2, keepdims=True)
    pitch = placement.pitch(h.shape[1])
    z = placement.base + (h - h[m].min()) * pitch
    return SceneObject("heightfield", np.where(m, z, 0.0), np.asarray(normals, dtype=np.float64),
                       _rgb(albedo, h.shape), m)


def make_bowl(shape, placement: Placement, radius: float, depth: float,
              albedo=(0.8, 0.8, 0.8)) -> SceneObject:
    """Flat plate with a spherical-cap dent; the dent bottom sits at ``placement.base``."""
    xs, ys = placement.pixel_centers(*shape)
    rb = (radius * radius + depth * depth) / (2.0 * depth)
    top = placement.base + depth
    cz = top - depth + rb
    r2 = xs ** 2 + ys ** 2
    inside = r2 < radius * radius
    z = np.where(inside, cz - np.sqrt(np.maximum(rb * rb - r2, 0.0)), top)
    n = np.where(inside[:, :, None],
                 np.stack([-xs, -ys, cz - z], axis=2) / rb,
                 np.array([0.0, 0.0, 1.0]))
    n = n / np.linalg.norm(n, axis=2, keepdims=True)
    return SceneObject("concave-bowl", z, n, _rgb(albedo, shape), np.ones(shape, dtype=bool))


@dataclass
class SamplerConfig:
    spp: int = 64
    max_bounces: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.spp < 1:
            raise ValueError("spp must be >= 1")
        if self.max_bounces < 0:
            raise ValueError("max_bounces must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class Scene:
    env: EnvironmentBox
    obj: SceneObject
    lights: LightSet
    placement: Placement = field(default_factory=Placement)

    def __post_init__(self):
        zmin, zmax = self.obj.bounds()
        if self.obj.sphere is not None:
            zmin = min(zmin, self.obj.sphere[2] - self.obj.sphere[3])
        pitch = self.placement.pitch(self.obj.shape[1])
        half_y = 0.5 * pitch * self.obj.shape[0]
        if not self.env.contains((-self.placement.extent, -half_y, zmin),
                                 (self.placement.extent, half_y, zmax)):
            raise ValueError("object does not fit inside the environment box")

    @property
    def resolution(self):
        return self.obj.shape


# --- scene.cfg -------------------------------------------------------------

def _floats(cfg, key, n=None, default=None):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing key {key}")
        return default
    try:
        vals = tuple(float(v) for v in cfg[key].replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad value for key {key}: {cfg[key]!r}") from None
    if n is not None and len(vals) not in ((n, 1) if n == 3 else (n,)):
        raise ConfigError(f"key {key} expects {n} values, got {cfg[key]!r}")
    return vals


def _int(cfg, key, default):
    if key not in cfg:
        return default
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigError(f"bad value for key {key}: {cfg[key]!r}") from None


def parse_scene_cfg(cfg: dict, base_dir=None, lights: LightSet = None):
    """Build ``(Scene, SamplerConfig)`` from parsed ``key = value`` pairs."""
    if "object.type" not in cfg:
        raise ConfigError("missing key object.type")
    kind = cfg["object.type"]
    if kind not in OBJECT_TYPES:
        raise ConfigError(f"bad value for key object.type: {kind!r} (expected one of {OBJECT_TYPES})")
    res = _floats(cfg, "resolution", default=(128.0,))
    if len(res) not in (1, 2) or any(r < 1 or r != int(r) for r in res):
        raise ConfigError(f"bad value for key resolution: {cfg.get('resolution')!r}")
    w = int(res[0])
    h = int(res[1]) if len(res) == 2 else w
    env = env_from_cfg(cfg)
    placement = Placement(extent=_floats(cfg, "camera.extent", 1, default=(1.0,))[0],
                          base=_floats(cfg, "object.base", 1, default=(0.0,))[0])
    albedo = _floats(cfg, "object.albedo", 3, default=(0.8, 0.8, 0.8))
    albedo = albedo * 3 if len(albedo) == 1 else albedo
    if any(a < 0 or a > 1 for a in albedo):
        raise ConfigError(f"bad value for key object.albedo: {cfg['object.albedo']!r}")
    shape = (h, w)
    radius = _floats(cfg, "object.radius", 1, default=(0.9 * placement.extent,))[0]
    if kind == "sphere":
        obj = make_sphere(shape, placement, radius, albedo)
    elif kind == "concave-bowl":
        depth = _floats(cfg, "object.depth", 1, default=(0.5 * radius,))[0]
        obj = make_bowl(shape, placement, radius, depth, albedo)
    else:
        if "object.heightfield" not in cfg:
            raise ConfigError("missing key object.heightfield")
        p = Path(cfg["object.heightfield"])
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        try:
            hpx = read_pfm(p)[:, :, 0]
        except OSError as e:
            raise ConfigError(f"cannot read object.heightfield: {e}") from None
        if hpx.shape != shape:
            raise ConfigError(f"object.heightfield is {hpx.shape[::-1]}, resolution is {(w, h)}")
        obj = make_heightfield(hpx, placement, albedo)
    sampler = SamplerConfig(spp=_int(cfg, "spp", 64), max_bounces=_int(cfg, "max_bounces", 4),
                            seed=_int(cfg, "seed", 0))
    try:
        scene = Scene(env, obj, ring_lights() if lights is None else lights, placement)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return scene, sampler


def load_scene_cfg(path, lights: LightSet = None):
    from .core import LoadError

    try:
        cfg = read_kv(path)
    except LoadError as e:
        raise ConfigError(str(e)) from None
    return (*parse_scene_cfg(cfg, Path(path).parent, lights), cfg)


def env_from_cfg(cfg: dict | None) -> EnvironmentBox:
    """Environment box described by a dataset's ``scene.cfg`` (defaults when absent)."""
    if not cfg:
        return EnvironmentBox()
    size = _floats(cfg, "box.size", 3, default=(5.0, 5.0, 4.0))
    if len(size) != 3 or min(size) <= 0:
        raise ConfigError(f"bad value for key box.size: {cfg.get('box.size')!r}")
    front = _floats(cfg, "box.front", 1, default=(size[2] / 2,))[0]
    walls = {}
    for wname in WALLS:
        v = _floats(cfg, f"wall.{wname}.albedo", 3, default=CORNELL_WALLS[wname])
        walls[wname] = v * 3 if len(v) == 1 else v
    try:
        return EnvironmentBox.from_size(size, front, walls)
    except ValueError as e:
        raise ConfigError(str(e)) from None
