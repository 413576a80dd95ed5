"""Dual-pixel PSF construction and forward rendering of DP view pairs.

Geometry conventions
--------------------
A defocused point at signed COC radius r spreads over a disc of radius
|r| pixels. A dual-pixel sensor splits the aperture, so the two views see
mirrored half-disc kernels: for r > 0 the left view integrates the half
of the disc with x <= 0 and the right view its mirror image; for r < 0
the halves swap sides. The shared center column (x = 0) belongs to both
halves and carries half weight in each, so that the two view kernels
average exactly to the uniform full disc a non-DP sensor would see.

Each half kernel is normalized to sum 1 (views are gain-normalized to
full brightness), which makes ``(left + right) / 2`` of a rendered pair
equal to the full-disc blur of the same scene.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgcore import as_float_map, as_image, check_same_shape, clamp01, convolve

MAX_RADIUS = 25


@dataclass(frozen=True)
class DpKernelPair:
    """Mirrored left/right blur kernels for one signed COC radius."""

    radius: int
    left: np.ndarray
    right: np.ndarray


@dataclass
class DpPair:
    """Co-registered left/right sub-aperture views of one exposure."""

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        self.left = as_image(self.left, "left view")
        self.right = as_image(self.right, "right view")
        check_same_shape(self.left, self.right, "DP pair")

    def swapped(self) -> "DpPair":
        return DpPair(self.right, self.left)


def _disc_coords(radius: int):
    side = 2 * radius + 1
    y, x = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    inside = (x * x + y * y) <= radius * radius
    return x, inside, side


def full_disc_kernel(radius: int) -> np.ndarray:
    """Uniform normalized disc kernel of the given radius (0 -> identity)."""
    radius = int(radius)
    if radius < 0 or radius > MAX_RADIUS:
        raise ValueError(f"disc radius must be in [0, {MAX_RADIUS}], got {radius}")
    if radius == 0:
        return np.array([[1.0]])
    _, inside, _ = _disc_coords(radius)
    return inside.astype(np.float64) / float(inside.sum())


def make_dp_kernels(radius: int) -> DpKernelPair:
    """Build the mirrored half-disc kernel pair for a signed radius.

    The x <= 0 half of the disc forms one view's kernel (full weight for
    x < 0, half weight on the shared x = 0 column) and the other view gets
    its exact mirror about the vertical axis. For radius > 0 the left view
    takes the x <= 0 half; for radius < 0 the halves swap. Radius 0 yields
    two 1x1 identity kernels.
    """
    radius = int(radius)
    if abs(radius) > MAX_RADIUS:
        raise ValueError(f"|radius| must be <= {MAX_RADIUS}, got {radius}")
    if radius == 0:
        ident = np.array([[1.0]])
        return DpKernelPair(0, ident, ident.copy())
    r = abs(radius)
    x, inside, _ = _disc_coords(r)
    weights = np.zeros_like(x, dtype=np.float64)
    weights[inside & (x < 0)] = 2.0
    weights[inside & (x == 0)] = 1.0
    minus_half = weights / weights.sum()
    plus_half = minus_half[:, ::-1].copy()
    if radius > 0:
        return DpKernelPair(radius, minus_half, plus_half)
    return DpKernelPair(radius, plus_half, minus_half)


def round_radius(coc) -> np.ndarray:
    """Signed COC values rounded to the nearest integer radius."""
    return np.rint(np.asarray(coc, dtype=np.float64)).astype(np.int64)


def _check_coc(sharp: np.ndarray, coc: np.ndarray) -> np.ndarray:
    coc = as_float_map(coc, "coc")
    if sharp.shape[:2] != coc.shape:
        raise ValueError(f"image {sharp.shape[:2]} vs COC map {coc.shape} mismatch")
    if np.abs(coc).max() > MAX_RADIUS:
        raise ValueError(f"|COC| exceeds the supported bound {MAX_RADIUS}")
    return coc


def _render_layers(sharp: np.ndarray, radii: np.ndarray, kernel_for) -> np.ndarray:
    """Per-pixel gather: each output pixel takes the convolution of the
    sharp image with the kernel selected by its own rounded radius."""
    out = np.empty_like(sharp)
    for r in np.unique(radii):
        mask = radii == r
        layer = convolve(sharp, kernel_for(int(r)))
        out[mask] = layer[mask]
    # FFT round-off can leave samples a few ulp outside [0, 1]
    return clamp01(out)


def render_dp_pair(sharp, coc) -> DpPair:
    """Render a DP view pair from a sharp image and a signed COC map.

    Occlusion is ignored (gather approximation): output pixel j of each
    view is the mirror-padded convolution of the sharp image, at j, with
    that view's kernel for radius round(coc(j)).
    """
    sharp = as_image(sharp, "sharp")
    coc = _check_coc(sharp, coc)
    radii = round_radius(coc)
    left = _render_layers(sharp, radii, lambda r: make_dp_kernels(r).left)
    right = _render_layers(sharp, radii, lambda r: make_dp_kernels(r).right)
    return DpPair(left, right)


def render_mono(sharp, coc) -> np.ndarray:
    """Full-aperture render: like ``render_dp_pair`` but with the uniform
    disc kernel of radius |round(coc)| at every pixel."""
    sharp = as_image(sharp, "sharp")
    coc = _check_coc(sharp, coc)
    radii = np.abs(round_radius(coc))
    return _render_layers(sharp, radii, full_disc_kernel)
