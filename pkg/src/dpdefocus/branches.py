"""Multi-branch deblurring operators and their mask-gated composition.

Branches are ordered by capacity: branch 1 is a passthrough that hands
sharp regions through untouched, and the remaining branches invert the
disc blur of their assigned COC interval by Wiener deconvolution. Lighter
branches cover small radii with stronger regularization; heavier branches
cover large radii with a weaker (more aggressive) inverse, the
regularization strength being the per-branch parameter fitted by the
threshold search. Spatially varying blur inside one branch is handled by
deconvolving once per integer radius and gathering each pixel from the
layer matching its own rounded COC magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .dppsf import DpPair, full_disc_kernel, round_radius
from .imgcore import as_float_map, as_image, as_kernel, check_same_shape, clamp01

BRANCH_KINDS = ("passthrough", "deconv")


@dataclass(frozen=True)
class BranchConfig:
    """One deblurring operator: its capacity interval and parameters."""

    index: int  # 1-based position in the branch order
    kind: str
    theta: float | None
    interval: tuple  # [r_lo, r_hi) in COC-radius pixels, last branch closed

    def __post_init__(self):
        if self.kind not in BRANCH_KINDS:
            raise ValueError(f"unknown branch kind {self.kind!r}")
        if self.kind == "deconv" and (self.theta is None or self.theta <= 0):
            raise ValueError(f"deconv branch {self.index} needs theta > 0")
        lo, hi = self.interval
        if not (0 <= lo < hi):
            raise ValueError(f"bad branch interval {self.interval}")

    def layer_radii(self):
        """Integer COC radii this branch deconvolves (interval endpoints
        included so rounded magnitudes just outside still clip cleanly)."""
        lo, hi = self.interval
        return int(math.ceil(lo - 1e-9)), int(math.floor(hi + 1e-9))


@dataclass
class BranchSet:
    """Ordered branches tiling the COC magnitude range [0, max bound]."""

    branches: list
    thresholds: object  # maskgen.ThresholdSet

    def __post_init__(self):
        bounds = self.thresholds.bounds
        if len(self.branches) != len(bounds) - 1:
            raise ValueError("one branch per threshold interval required")
        for i, br in enumerate(self.branches):
            if br.index != i + 1:
                raise ValueError(f"branch order broken at position {i}")
            if br.interval != (bounds[i], bounds[i + 1]):
                raise ValueError(
                    f"branch {br.index} interval {br.interval} does not match "
                    f"thresholds {(bounds[i], bounds[i + 1])}"
                )
        if self.branches[0].kind != "passthrough":
            raise ValueError("branch 1 must be the passthrough branch")
        for br in self.branches[1:]:
            if br.kind != "deconv":
                raise ValueError(f"branch {br.index} must be a deconv branch")

    @property
    def n_branches(self) -> int:
        return len(self.branches)


def fuse_input(pair: DpPair) -> np.ndarray:
    """Average the two DP views into the full-aperture-equivalent image."""
    check_same_shape(pair.left, pair.right, "DP pair")
    fused = (pair.left.astype(np.float64) + pair.right.astype(np.float64)) / 2.0
    return fused.astype(np.float32)


def _centered_otf(kernel: np.ndarray, shape) -> np.ndarray:
    """FFT of the kernel embedded with its center at the origin."""
    side = kernel.shape[0]
    k = np.zeros(shape, dtype=np.float64)
    k[:side, :side] = kernel
    k = np.roll(k, (-(side // 2), -(side // 2)), axis=(0, 1))
    return np.fft.fft2(k)


def _taper_window(shape, pad: int) -> np.ndarray:
    """Raised-cosine window: 1 over the original image area, falling to 0
    at the outer border of the mirror extension."""
    h, w = shape
    ry = np.minimum(np.arange(h), np.arange(h)[::-1]).astype(np.float64)
    rx = np.minimum(np.arange(w), np.arange(w)[::-1]).astype(np.float64)
    wy = 0.5 - 0.5 * np.cos(np.pi * np.clip(ry / pad, 0.0, 1.0))
    wx = 0.5 - 0.5 * np.cos(np.pi * np.clip(rx / pad, 0.0, 1.0))
    return wy[:, None] * wx[None, :]


def wiener_deconv(img, kernel, theta: float) -> np.ndarray:
    """Wiener deconvolution with transfer conj(K) / (|K|^2 + theta).

    Edge handling: the image is mirror-extended by twice the kernel side
    and the extension is cosine-tapered down to the image mean, so the
    periodic wraparound the FFT imposes sees smooth, consistent content
    instead of a hard seam. The result is cropped back to the original
    extent and clamped to [0, 1].
    """
    img = as_image(img, "img")
    kernel = as_kernel(kernel)
    if theta <= 0:
        raise ValueError(f"theta must be > 0, got {theta}")
    pad = 2 * kernel.shape[0]
    planes = img[:, :, None] if img.ndim == 2 else img
    out = np.empty_like(planes, dtype=np.float64)
    transfer = None
    window = None
    for c in range(planes.shape[2]):
        plane = planes[:, :, c].astype(np.float64)
        padded = np.pad(plane, pad, mode="symmetric")
        if transfer is None:
            otf = _centered_otf(kernel, padded.shape)
            transfer = np.conj(otf) / (np.abs(otf) ** 2 + theta)
            window = _taper_window(padded.shape, pad)
        padded = window * padded + (1.0 - window) * plane.mean()
        restored = np.fft.ifft2(np.fft.fft2(padded) * transfer).real
        out[:, :, c] = restored[pad:-pad, pad:-pad]
    out = out[:, :, 0] if img.ndim == 2 else out
    return clamp01(out)


def _nearest_fill(img: np.ndarray, region: np.ndarray) -> np.ndarray:
    """Replace everything outside ``region`` with the nearest region pixel.

    The fill is continuous at the region border and carries the region's
    own blur statistics, so deconvolving the filled frame does not inject
    ringing from differently blurred neighborhoods into the region."""
    if region.all():
        return img
    idx = ndimage.distance_transform_edt(
        ~region, return_distances=False, return_indices=True
    )
    return img[tuple(idx)]


def apply_branch(branch: BranchConfig, fused, coc_mag) -> np.ndarray:
    """Run one branch over the whole fused image.

    Passthrough returns the fused image unchanged. Deconv branches restore
    each pixel with the Wiener inverse of the disc kernel for that pixel's
    rounded COC magnitude, clipped into the branch's radius range. Each
    radius layer deconvolves a region-filled frame (see ``_nearest_fill``)
    and only that radius's pixels are gathered from it.
    """
    fused = as_image(fused, "fused")
    if branch.kind == "passthrough":
        return fused
    mag = as_float_map(coc_mag, "coc_mag")
    if mag.shape != fused.shape[:2]:
        raise ValueError(f"COC map {mag.shape} vs image {fused.shape[:2]} mismatch")
    lo, hi = branch.layer_radii()
    sel = np.clip(round_radius(mag), lo, hi)
    out = np.empty_like(fused)
    for r in np.unique(sel):
        region = sel == r
        layer = wiener_deconv(_nearest_fill(fused, region),
                              full_disc_kernel(int(r)), branch.theta)
        out[region] = layer[region]
    return out


def compose(outputs, masks) -> np.ndarray:
    """Per-pixel convex combination of branch outputs under the masks."""
    if len(outputs) != len(masks.masks):
        raise ValueError(f"{len(outputs)} outputs vs {len(masks.masks)} masks")
    acc = None
    for out, mask in zip(outputs, masks.masks):
        out = as_image(out, "branch output")
        if mask.shape != out.shape[:2]:
            raise ValueError("mask/output shape mismatch")
        weighted = out.astype(np.float64) * (
            mask[:, :, None] if out.ndim == 3 else mask
        ).astype(np.float64)
        acc = weighted if acc is None else acc + weighted
    return clamp01(acc)


def deblur(pair: DpPair, coc, model: BranchSet, feather_sigma: float = 2.0,
           subset=None) -> np.ndarray:
    """Full pipeline: fuse the pair, quantize |COC| into defocus masks,
    run every branch, and compose the outputs.

    ``subset`` restricts the run to the given 1-based branch indices
    (ablation support): each pixel is routed to the kept branch whose
    radius interval is nearest to its COC magnitude, and each kept deconv
    branch covers every radius with its own fitted strength (the branch is
    standing in for the ones dropped, so its layer range is not clipped).
    """
    from .maskgen import mask_set_from_assignment, quantize  # local import, avoids cycle

    fused = fuse_input(pair)
    coc = as_float_map(coc, "coc")
    if coc.shape != fused.shape[:2]:
        raise ValueError(f"COC map {coc.shape} vs image {fused.shape[:2]} mismatch")
    mag = np.abs(coc)

    if subset is None:
        kept = list(model.branches)
        masks = quantize(coc, model.thresholds, feather_sigma)
    else:
        indices = sorted(set(int(i) for i in subset))
        if not indices or any(i < 1 or i > model.n_branches for i in indices):
            raise ValueError(f"branch subset {subset!r} out of range")
        kept = [model.branches[i - 1] for i in indices]
        dist = np.stack([_interval_distance(mag, b.interval) for b in kept])
        masks = mask_set_from_assignment(
            np.argmin(dist, axis=0), len(kept), model.thresholds, feather_sigma
        )
        kept = [
            b if b.kind == "passthrough"
            else replace(b, interval=(0.0, float(np.max(mag)) + 1.0))
            for b in kept
        ]

    outputs = [apply_branch(b, fused, mag) for b in kept]
    return compose(outputs, masks)


def _interval_distance(mag: np.ndarray, interval) -> np.ndarray:
    lo, hi = interval
    return np.maximum.reduce([lo - mag, mag - hi, np.zeros_like(mag)])


def branch_outputs(pair: DpPair, coc, model: BranchSet):
    """Every branch's full-image output in branch order; inspection aid
    for the intermediate images the composition selects from."""
    fused = fuse_input(pair)
    coc = as_float_map(coc, "coc")
    if coc.shape != fused.shape[:2]:
        raise ValueError(f"COC map {coc.shape} vs image {fused.shape[:2]} mismatch")
    mag = np.abs(coc)
    return [apply_branch(b, fused, mag) for b in model.branches]


def default_branch_set(thresholds, theta: float = 1e-3) -> BranchSet:
    """Passthrough plus deconv branches tiling the given thresholds."""
    bounds = thresholds.bounds
    branches = [
        BranchConfig(1, "passthrough", None, (bounds[0], bounds[1]))
    ]
    for i in range(1, len(bounds) - 1):
        branches.append(BranchConfig(i + 1, "deconv", theta, (bounds[i], bounds[i + 1])))
    return BranchSet(branches, thresholds)


def retarget_branch_set(model: BranchSet, thresholds) -> BranchSet:
    """Rebuild a branch set onto new thresholds, keeping kinds and thetas."""
    bounds = thresholds.bounds
    branches = [
        replace(br, interval=(bounds[i], bounds[i + 1]))
        for i, br in enumerate(model.branches)
    ]
    return BranchSet(branches, thresholds)
