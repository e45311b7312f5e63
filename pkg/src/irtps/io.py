"""File formats: PFM images, PGM masks, ``key = value`` configs, dataset directories."""
from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np

from .core import AlbedoMap, Dataset, HeightField, LightSet, LoadError, NormalMap, Placement

_PFM_HEADER = re.compile(rb"\A(PF|Pf)\n(\d+)[ \t]+(\d+)\n([-+0-9.eE]+)\n")

LIGHT_ERROR_TOL = 1e-2


def write_pfm(img: np.ndarray, path) -> None:
    """Write a 1- or 3-channel float image, little-endian, bottom row first."""
    a = np.asarray(img)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ValueError(f"PFM needs (H, W, 1|3) data, got {a.shape}")
    h, w, c = a.shape
    tag = b"PF" if c == 3 else b"Pf"
    payload = np.ascontiguousarray(a[::-1].astype("<f4"))
    with open(path, "wb") as f:
        f.write(tag + b"\n%d %d\n-1.0\n" % (w, h))
        f.write(payload.tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a float64 ``(H, W, C)`` array (row 0 on top)."""
    data = Path(path).read_bytes()
    m = _PFM_HEADER.match(data)
    if m is None:
        raise LoadError(f"{path}: malformed PFM header at byte offset 0")
    channels = 3 if m.group(1) == b"PF" else 1
    w, h = int(m.group(2)), int(m.group(3))
    try:
        scale = float(m.group(4))
    except ValueError:
        raise LoadError(f"{path}: malformed PFM scale at byte offset {m.start(4)}") from None
    if w <= 0 or h <= 0 or scale == 0.0:
        raise LoadError(f"{path}: malformed PFM header at byte offset {m.start(2)}")
    start = m.end()
    need = w * h * channels * 4
    have = len(data) - start
    if have < need:
        raise LoadError(
            f"{path}: truncated payload at byte offset {len(data)} "
            f"(expected {need} payload bytes from offset {start}, found {have})"
        )
    dtype = "<f4" if scale < 0 else ">f4"
    flat = np.frombuffer(data, dtype=dtype, count=w * h * channels, offset=start)
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise LoadError(f"{path}: non-finite pixel at byte offset {start + 4 * int(bad[0])}")
    img = flat.reshape(h, w, channels)[::-1]
    return img.astype(np.float64)


def write_pgm(mask: np.ndarray, path) -> None:
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(np.where(m, 255, 0).astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"\AP5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise LoadError(f"{path}: malformed PGM header at byte offset 0")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval > 255:
        raise LoadError(f"{path}: 16-bit PGM not supported")
    body = data[m.end():]
    if len(body) < w * h:
        raise LoadError(f"{path}: truncated payload at byte offset {len(data)}")
    return np.frombuffer(body, dtype=np.uint8, count=w * h).reshape(h, w) > maxval // 2


def read_kv(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise LoadError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise LoadError(f"{path}:{lineno}: empty key")
            out[key] = value
    return out


def write_kv(values: dict, path) -> None:
    with open(path, "w") as f:
        for k, v in values.items():
            f.write(f"{k} = {v}\n")


def read_lights(path) -> LightSet:
    rows = []
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise LoadError(f"{path}:{lineno}: expected 'lx ly lz', got {line!r}")
            try:
                v = np.array([float(p) for p in parts])
            except ValueError:
                raise LoadError(f"{path}:{lineno}: non-numeric light row {line!r}") from None
            n = np.linalg.norm(v)
            if abs(n - 1.0) > LIGHT_ERROR_TOL:
                raise LoadError(f"{path}:{lineno}: light row has norm {n:g}, expected 1")
            rows.append(v)
    if len(rows) < 3:
        raise LoadError(f"{path}: need at least 3 light rows, found {len(rows)}")
    # rows within 1e-12 of unit length are kept bit-exact so files round-trip
    d = np.array(rows)
    off = np.abs(np.linalg.norm(d, axis=1) - 1.0) > 1e-12
    d[off] /= np.linalg.norm(d[off], axis=1, keepdims=True)
    try:
        return LightSet(d)
    except ValueError as e:
        raise LoadError(f"{path}: {e}") from None


def write_lights(lights: LightSet, path) -> None:
    with open(path, "w") as f:
        for v in lights.directions:
            f.write(" ".join(repr(float(c)) for c in v) + "\n")


def placement_from_cfg(cfg: dict | None) -> Placement:
    if not cfg:
        return Placement()
    try:
        return Placement(extent=float(cfg.get("camera.extent", 1.0)),
                         base=float(cfg.get("object.base", 0.0)))
    except ValueError as e:
        raise LoadError(f"bad placement key in scene.cfg: {e}") from None


def _image_files(d: Path):
    return sorted(p for p in d.iterdir() if re.fullmatch(r"image_\d{3}\.pfm", p.name))


def load_maps(d, prefix: str = ""):
    """Load ``{prefix}height.pfm``, ``{prefix}normals.pfm``, ``{prefix}albedo.pfm``.

    The validity mask comes from ``{prefix}mask.pgm`` when present, else from
    non-zero normals. Missing files yield ``None`` entries.
    """
    d = Path(d)
    paths = {k: d / f"{prefix}{k}.pfm" for k in ("height", "normals", "albedo")}
    if not all(p.exists() for p in paths.values()):
        return None, None, None
    height = read_pfm(paths["height"])[:, :, 0]
    normals = read_pfm(paths["normals"])
    albedo = read_pfm(paths["albedo"])
    mask_path = d / f"{prefix}mask.pgm"
    if mask_path.exists():
        mask = read_pgm(mask_path)
    else:
        mask = np.linalg.norm(normals, axis=2) > 0.5
    return HeightField(height, mask), NormalMap(normals, mask), AlbedoMap(albedo, mask)


def save_maps(d, height: HeightField, normals: NormalMap, albedo: AlbedoMap,
              prefix: str = "", with_mask: bool = True) -> None:
    d = Path(d)
    mask = height.mask & normals.mask & albedo.mask
    write_pfm(np.where(mask, height.height, 0.0)[:, :, None], d / f"{prefix}height.pfm")
    write_pfm(np.where(mask[:, :, None], normals.normals, 0.0), d / f"{prefix}normals.pfm")
    write_pfm(np.where(mask[:, :, None], albedo.albedo, 0.0), d / f"{prefix}albedo.pfm")
    if with_mask:
        write_pgm(mask, d / f"{prefix}mask.pgm")


def load_dataset(path) -> Dataset:
    d = Path(path)
    if not d.is_dir():
        raise LoadError(f"{d}: not a directory")
    lights_path = d / "lights.txt"
    if not lights_path.exists():
        raise LoadError(f"{d}: missing lights.txt")
    lights = read_lights(lights_path)
    files = _image_files(d)
    expected = [f"image_{k:03d}.pfm" for k in range(len(files))]
    if [p.name for p in files] != expected:
        raise LoadError(f"{d}: image files are not numbered consecutively from image_000.pfm")
    if len(files) != len(lights):
        raise LoadError(f"{d}: {len(files)} images but {len(lights)} light rows")
    images = [read_pfm(p) for p in files]
    scene = read_kv(d / "scene.cfg") if (d / "scene.cfg").exists() else None
    gt_h, gt_n, gt_a = load_maps(d, prefix="gt_")
    try:
        return Dataset(images, lights, gt_h, gt_n, gt_a, scene=scene,
                       placement=placement_from_cfg(scene))
    except ValueError as e:
        raise LoadError(f"{d}: {e}") from None


def save_dataset(ds: Dataset, path) -> None:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    write_lights(ds.lights, d / "lights.txt")
    for k, img in enumerate(ds.images):
        write_pfm(img, d / f"image_{k:03d}.pfm")
    if ds.has_ground_truth:
        # ground truth carries its mask in zeroed normals
        save_maps(d, ds.gt_height, ds.gt_normals, ds.gt_albedo, prefix="gt_", with_mask=False)
    if ds.scene is not None:
        write_kv(ds.scene, d / "scene.cfg")


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
