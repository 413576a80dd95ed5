"""Thin-lens camera model mapping scene depth to a signed COC radius.

The classical circle-of-confusion diameter for a subject at distance d
(millimeters) with focus distance d_f, focal length f0, and f-number N is

    c(d) = (|d - d_f| / d) * f0^2 / (N * (d_f - f0))    [mm]

The toolkit stores COC as a signed radius in pixels: the diameter is
divided by twice the pixel pitch, the sign is positive behind the focus
plane and negative in front of it, and the magnitude is clamped to
``max_coc_px`` (default 25 pixels).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imgcore import as_float_map

CAMERA_CONFIG_KEYS = ("f0_mm", "f_number", "focus_mm", "pixel_pitch_mm", "max_coc_px")


@dataclass(frozen=True)
class CameraModel:
    """Thin-lens parameters; immutable once constructed."""

    f0_mm: float
    f_number: float
    focus_mm: float
    pixel_pitch_mm: float
    max_coc_px: float = 25.0

    def __post_init__(self):
        if self.f0_mm <= 0:
            raise ValueError(f"focal length must be > 0, got {self.f0_mm}")
        if self.f_number <= 0:
            raise ValueError(f"f-number must be > 0, got {self.f_number}")
        if self.focus_mm <= self.f0_mm:
            raise ValueError(
                f"focus distance {self.focus_mm} must exceed focal length {self.f0_mm}"
            )
        if self.pixel_pitch_mm <= 0:
            raise ValueError(f"pixel pitch must be > 0, got {self.pixel_pitch_mm}")
        if self.max_coc_px <= 0:
            raise ValueError(f"max COC must be > 0, got {self.max_coc_px}")


def _check_depth(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if not np.isfinite(d).all() or (d <= 0).any():
        raise ValueError("depth values must be finite and > 0 mm")
    return d


def coc_diameter_mm(depth_mm, cam: CameraModel):
    """COC diameter in millimeters for a subject depth (scalar or array)."""
    d = _check_depth(depth_mm)
    k = cam.f0_mm * cam.f0_mm / (cam.f_number * (cam.focus_mm - cam.f0_mm))
    out = np.abs(d - cam.focus_mm) / d * k
    return float(out) if np.isscalar(depth_mm) else out


def coc_signed_px(depth_mm, cam: CameraModel):
    """Signed COC radius in pixels: negative in front of the focus plane,
    positive behind it, magnitude clamped to ``cam.max_coc_px``."""
    d = _check_depth(depth_mm)
    radius = coc_diameter_mm(d, cam) / (2.0 * cam.pixel_pitch_mm)
    out = np.sign(d - cam.focus_mm) * np.minimum(radius, cam.max_coc_px)
    return float(out) if np.isscalar(depth_mm) else out


def depth_to_coc_map(depth_map, cam: CameraModel) -> np.ndarray:
    """Per-pixel signed COC radius (pixels) from a depth map in millimeters."""
    depth = as_float_map(depth_map, "depth")
    if (depth <= 0).any():
        raise ValueError("depth map contains nonpositive values")
    return coc_signed_px(depth.astype(np.float64), cam).astype(np.float32)


def parse_keyvalue_file(path) -> dict:
    """Parse a plain ``key = value`` text file. Blank lines and lines
    starting with ``#`` are ignored."""
    entries = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in entries:
            raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
        entries[key] = value.strip()
    return entries


def load_camera_config(path) -> CameraModel:
    """Read a CameraModel from a key=value config file.

    Recognized keys: ``f0_mm, f_number, focus_mm, pixel_pitch_mm,
    max_coc_px`` (the last one optional). Unknown keys are errors.
    """
    entries = parse_keyvalue_file(path)
    unknown = set(entries) - set(CAMERA_CONFIG_KEYS)
    if unknown:
        raise ValueError(f"{path}: unknown camera keys {sorted(unknown)}")
    missing = set(CAMERA_CONFIG_KEYS[:4]) - set(entries)
    if missing:
        raise ValueError(f"{path}: missing camera keys {sorted(missing)}")
    kwargs = {key: float(value) for key, value in entries.items()}
    return CameraModel(**kwargs)
