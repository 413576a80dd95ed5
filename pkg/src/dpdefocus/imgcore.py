"""Image containers, padding/convolution primitives, and file I/O.

Conventions used throughout the package:

* Images are float32 numpy arrays in [0, 1], shaped (H, W) for grayscale
  or (H, W, 3) for color.
* Float maps (COC maps, cost slices, residuals) are float32 (H, W) arrays
  with unbounded range; all samples must be finite.
* Kernels are small float64 arrays with odd side length, nonnegative
  weights, and unit sum.
* All boundary handling is mirror (symmetric) padding: the edge sample is
  repeated, i.e. ``np.pad(mode="symmetric")`` / ``scipy.ndimage`` mode
  ``"reflect"``.
"""

from __future__ import annotations

import math
import os
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage, signal

KERNEL_SUM_TOL = 1e-9


class UnsupportedFormatError(ValueError):
    """Raised for files that decode but are not a supported format/bit depth."""


def as_image(arr, name: str = "image") -> np.ndarray:
    """Validate an image array and return it as float32.

    Accepts (H, W) or (H, W, 3) arrays with finite samples in [0, 1].
    """
    a = np.asarray(arr, dtype=np.float32)
    if a.ndim not in (2, 3) or (a.ndim == 3 and a.shape[2] != 3):
        raise ValueError(f"{name}: expected (H, W) or (H, W, 3), got {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name}: empty image {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name}: non-finite samples")
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError(f"{name}: samples outside [0, 1]")
    return a


def as_float_map(arr, name: str = "map") -> np.ndarray:
    """Validate a 2-D float map (finite, unbounded range) as float32."""
    a = np.asarray(arr, dtype=np.float32)
    if a.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D map, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name}: empty map {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name}: non-finite samples")
    return a


def as_kernel(arr, name: str = "kernel") -> np.ndarray:
    """Validate a convolution kernel: odd square side, weights >= 0, sum 1."""
    k = np.asarray(arr, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValueError(f"{name}: expected a square kernel, got {k.shape}")
    if k.shape[0] % 2 == 0:
        raise ValueError(f"{name}: side must be odd, got {k.shape[0]}")
    if not np.isfinite(k).all() or k.min() < 0.0:
        raise ValueError(f"{name}: weights must be finite and nonnegative")
    if abs(float(k.sum()) - 1.0) > KERNEL_SUM_TOL:
        raise ValueError(f"{name}: weights sum to {k.sum()!r}, expected 1")
    return k


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def clamp01(arr) -> np.ndarray:
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


def srgb_to_linear(v: np.ndarray) -> np.ndarray:
    """Invert the sRGB transfer function (encoded values -> linear light)."""
    v = np.asarray(v, dtype=np.float64)
    lin = np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)
    return lin.astype(np.float32)


# ---------------------------------------------------------------------------
# File I/O: PNG (8/16-bit via OpenCV) and single-channel PFM
# ---------------------------------------------------------------------------

def atomic_write_bytes(path, payload: bytes) -> None:
    """Write bytes to a temporary file in the target directory, then rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError:
        if tmp.exists():
            tmp.unlink()
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def load_image(path, want_linear: bool = False) -> np.ndarray:
    """Load an 8/16-bit PNG or a single-channel PFM as a [0, 1] image.

    Parameters
    ----------
    path : str or Path
        Input file. PNG samples are divided by the full-scale code value
        (255 or 65535). PFM samples are clamped into [0, 1].
    want_linear : bool
        If True, decode stored sRGB values to linear light. Default is off:
        samples are kept exactly as stored.

    Raises
    ------
    OSError
        Missing or unreadable file.
    UnsupportedFormatError
        Decodable file of an unsupported format or bit depth.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image file: {path}")
    if path.suffix.lower() == ".pfm":
        img = clamp01(load_pfm(path))
    else:
        raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if raw is None:
            raise UnsupportedFormatError(f"cannot decode image file: {path}")
        if raw.dtype == np.uint8:
            scale = 255.0
        elif raw.dtype == np.uint16:
            scale = 65535.0
        else:
            raise UnsupportedFormatError(
                f"{path}: unsupported sample type {raw.dtype}, expected 8- or 16-bit"
            )
        if raw.ndim == 3:
            if raw.shape[2] == 4:  # drop alpha
                raw = raw[:, :, :3]
            if raw.shape[2] != 3:
                raise UnsupportedFormatError(f"{path}: unsupported channel count")
            raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
        img = (raw.astype(np.float64) / scale).astype(np.float32)
    if want_linear:
        img = srgb_to_linear(img)
    return as_image(img, str(path))


def save_image(img, path, bit_depth: int = 8) -> None:
    """Save an image as an 8- or 16-bit PNG.

    Quantization is round half up: code = floor(value * full_scale + 0.5).
    """
    img = as_image(img)
    if bit_depth == 8:
        scale, dtype = 255.0, np.uint8
    elif bit_depth == 16:
        scale, dtype = 65535.0, np.uint16
    else:
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    codes = np.floor(img.astype(np.float64) * scale + 0.5)
    codes = np.clip(codes, 0, scale).astype(dtype)
    if codes.ndim == 3:
        codes = cv2.cvtColor(codes, cv2.COLOR_RGB2BGR)
    ok, buf = cv2.imencode(".png", codes)
    if not ok:
        raise OSError(f"PNG encoding failed for {path}")
    atomic_write_bytes(path, buf.tobytes())


def load_pfm(path) -> np.ndarray:
    """Read a single-channel PFM file (header ``Pf``) as a float map.

    Handles both little-endian (negative scale) and big-endian files;
    scanlines are stored bottom-up per the PFM convention.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic == b"PF":
            raise UnsupportedFormatError(f"{path}: color PFM not supported")
        if magic != b"Pf":
            raise UnsupportedFormatError(f"{path}: bad PFM magic {magic!r}")
        dims = fh.readline().split()
        if len(dims) != 2:
            raise UnsupportedFormatError(f"{path}: malformed PFM dimension line")
        try:
            width, height = int(dims[0]), int(dims[1])
            scale = float(fh.readline().strip())
        except ValueError as exc:
            raise UnsupportedFormatError(f"{path}: malformed PFM header") from exc
        if width < 1 or height < 1 or scale == 0.0:
            raise UnsupportedFormatError(f"{path}: malformed PFM header")
        payload = fh.read(width * height * 4)
    if len(payload) != width * height * 4:
        raise UnsupportedFormatError(f"{path}: truncated PFM payload")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return as_float_map(np.flipud(data).astype(np.float32), str(path))


def save_pfm(fmap, path) -> None:
    """Write a float map as a little-endian single-channel PFM (bit-exact)."""
    fmap = as_float_map(fmap)
    height, width = fmap.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    payload = np.flipud(fmap).astype("<f4").tobytes()
    atomic_write_bytes(path, header + payload)


# ---------------------------------------------------------------------------
# Convolution primitives
# ---------------------------------------------------------------------------

def _convolve_plane(plane: np.ndarray, k: np.ndarray) -> np.ndarray:
    r = (k.shape[0] - 1) // 2
    padded = np.pad(plane.astype(np.float64), r, mode="symmetric")
    return signal.fftconvolve(padded, k, mode="valid")


def convolve(arr, kernel) -> np.ndarray:
    """Convolve an image or float map with a kernel (mirror padding).

    This is true convolution (the kernel is flipped), matching the usual
    definition so that convolution with two kernels commutes. Output has
    the same dimensions as the input. Color images are filtered per
    channel with the same 2-D kernel.
    """
    a = np.asarray(arr, dtype=np.float32)
    k = as_kernel(kernel)
    if a.ndim not in (2, 3):
        raise ValueError(f"expected 2-D or 3-channel input, got shape {a.shape}")
    if k.shape[0] > min(a.shape[0], a.shape[1]):
        raise ValueError(
            f"kernel side {k.shape[0]} exceeds image extent {a.shape[:2]}"
        )
    if k.shape[0] == 1:
        # 1x1 kernels stay exact (no FFT round-off); identity must be bitwise.
        out = a.astype(np.float64) * float(k[0, 0])
        return out.astype(np.float32)
    if a.ndim == 2:
        return _convolve_plane(a, k).astype(np.float32)
    planes = [_convolve_plane(a[:, :, c], k) for c in range(a.shape[2])]
    return np.stack(planes, axis=2).astype(np.float32)


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Sampled Gaussian truncated at +-3 sigma, normalized to sum 1."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.array([1.0])
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def gaussian_blur(arr, sigma: float) -> np.ndarray:
    """Gaussian-blur a map or image; sigma = 0 is the identity.

    Separable filtering with the truncated (+-3 sigma) sampled Gaussian
    and mirror boundary handling.
    """
    a = np.asarray(arr, dtype=np.float32)
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return a.copy()
    w = gaussian_kernel_1d(sigma)
    out = a.astype(np.float64)
    out = ndimage.convolve1d(out, w, axis=0, mode="reflect")
    out = ndimage.convolve1d(out, w, axis=1, mode="reflect")
    return out.astype(np.float32)
