"""Shared value types.

Images are plain ``float64`` arrays of shape ``(H, W, C)`` with ``C`` in
{1, 3}, row 0 at the top of the picture. World frame: x right, y up, z
toward the camera. The camera is orthographic and looks down ``-z``; pixel
``(i, j)`` sits at ``x = -extent + (j + 0.5) * pitch``,
``y = extent_y - (i + 0.5) * pitch``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

UNIT_TOL = 1e-9


class LoadError(Exception):
    """Raised when an input file or dataset directory cannot be parsed."""


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate and return ``img`` as a float64 ``(H, W, C)`` array."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3) or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name}: expected (H, W, 1|3) array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: non-finite values")
    if np.any(a < 0):
        raise ValueError(f"{name}: negative intensities")
    return a


def luminance(img: np.ndarray) -> np.ndarray:
    return img.mean(axis=2)


@dataclass(frozen=True)
class LightSet:
    """Directional lights, surface-to-light unit vectors in the camera frame."""

    directions: np.ndarray
    intensities: np.ndarray = None

    def __post_init__(self):
        d = np.array(self.directions, dtype=np.float64).reshape(-1, 3)
        if len(d) < 3:
            raise ValueError(f"need at least 3 lights, got {len(d)}")
        norms = np.linalg.norm(d, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise ValueError("light directions must be unit vectors")
        if np.linalg.matrix_rank(d) < 3:
            raise ValueError("light directions are coplanar (rank < 3)")
        if self.intensities is None:
            s = np.ones(len(d))
        else:
            s = np.array(self.intensities, dtype=np.float64).reshape(-1)
            if s.shape != (len(d),) or np.any(s < 0) or not np.all(np.isfinite(s)):
                raise ValueError("intensities must be one finite non-negative value per light")
        d.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "intensities", s)

    def __len__(self):
        return len(self.directions)

    @property
    def matrix(self) -> np.ndarray:
        """Light matrix with rows scaled by intensity."""
        return self.directions * self.intensities[:, None]

    def subset(self, index) -> "LightSet":
        return LightSet(self.directions[index], self.intensities[index])

    def __eq__(self, other):
        if not isinstance(other, LightSet):
            return NotImplemented
        return np.array_equal(self.directions, other.directions) and np.array_equal(
            self.intensities, other.intensities
        )


def ring_lights(count: int = 8, polar_deg: float = 30.0) -> LightSet:
    """``count`` lights evenly spaced in azimuth at ``polar_deg`` from the view axis."""
    phi = 2.0 * np.pi * np.arange(count) / count
    th = np.deg2rad(polar_deg)
    d = np.stack([np.sin(th) * np.cos(phi), np.sin(th) * np.sin(phi),
                  np.full(count, np.cos(th))], axis=1)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return LightSet(d)


def _mask_like(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    m = np.asarray(mask, dtype=bool)
    if m.shape != shape:
        raise ValueError(f"mask shape {m.shape} does not match {shape}")
    return m


@dataclass
class NormalMap:
    normals: np.ndarray  # (H, W, 3)
    mask: np.ndarray = None

    def __post_init__(self):
        self.normals = np.asarray(self.normals, dtype=np.float64)
        if self.normals.ndim != 3 or self.normals.shape[2] != 3:
            raise ValueError(f"normals must be (H, W, 3), got {self.normals.shape}")
        self.mask = _mask_like(self.mask, self.normals.shape[:2])

    @property
    def shape(self):
        return self.mask.shape


@dataclass
class AlbedoMap:
    albedo: np.ndarray  # (H, W, C)
    mask: np.ndarray = None

    def __post_init__(self):
        a = np.asarray(self.albedo, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        self.albedo = a
        self.mask = _mask_like(self.mask, a.shape[:2])

    @property
    def shape(self):
        return self.mask.shape


@dataclass
class HeightField:
    """Per-pixel height in pixel-pitch units."""

    height: np.ndarray  # (H, W)
    mask: np.ndarray = None

    def __post_init__(self):
        h = np.asarray(self.height, dtype=np.float64)
        if h.ndim == 3 and h.shape[2] == 1:
            h = h[:, :, 0]
        if h.ndim != 2:
            raise ValueError(f"height must be (H, W), got {h.shape}")
        self.height = h
        self.mask = _mask_like(self.mask, h.shape)

    @property
    def shape(self):
        return self.mask.shape


@dataclass(frozen=True)
class Placement:
    """Where the imaged grid sits in the world.

    ``extent`` is the half-width of the imaged square in world units and
    ``base`` the world z assigned to the lowest valid point of a reconstructed
    surface when it is placed back into the environment.
    """

    extent: float = 1.0
    base: float = 0.0

    def pitch(self, width: int) -> float:
        return 2.0 * self.extent / width

    def pixel_centers(self, height: int, width: int):
        """World ``(x, y)`` grids of pixel centers."""
        p = self.pitch(width)
        ey = 0.5 * p * height
        xs = -self.extent + (np.arange(width) + 0.5) * p
        ys = ey - (np.arange(height) + 0.5) * p
        return np.meshgrid(xs, ys)


@dataclass
class Dataset:
    images: list
    lights: LightSet
    gt_height: Optional[HeightField] = None
    gt_normals: Optional[NormalMap] = None
    gt_albedo: Optional[AlbedoMap] = None
    scene: Optional[dict] = None  # raw scene.cfg key/values
    placement: Placement = field(default_factory=Placement)

    def __post_init__(self):
        self.images = [check_image(im, f"image {k}") for k, im in enumerate(self.images)]
        if len(self.images) != len(self.lights):
            raise ValueError(
                f"image count {len(self.images)} does not match light count {len(self.lights)}"
            )
        shapes = {im.shape for im in self.images}
        if len(shapes) != 1:
            raise ValueError(f"images differ in shape: {sorted(shapes)}")

    @property
    def shape(self):
        return self.images[0].shape[:2]

    @property
    def channels(self) -> int:
        return self.images[0].shape[2]

    def stack(self) -> np.ndarray:
        """Images as one ``(Q, H, W, C)`` array."""
        return np.stack(self.images)

    @property
    def has_ground_truth(self) -> bool:
        return self.gt_height is not None and self.gt_normals is not None and self.gt_albedo is not None
