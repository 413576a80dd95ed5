"""Unsupervised signed-COC estimation from a DP pair.

For a constant-depth neighborhood blurred at signed radius r, the two DP
views satisfy a cross-blur identity: blurring the left view with the
right-view kernel equals blurring the right view with the mirrored
right-view kernel (convolution with the two mirrored half-disc kernels
commutes through the shared latent image). The residual of that identity,
evaluated per pixel for every candidate radius, forms a cost volume whose
per-pixel minimizer is the signed COC estimate.

The solver is a deterministic discrete scheme: Gaussian-smoothed residual
slices, winner-take-all, a fixed number of rounds of quadratic
neighborhood smoothing balanced against the per-pixel cost by the weight
``lam``, and a final 3x3 median pass. Confidence is the normalized gap
between the best and second-best cost, zeroed where the local texture is
too weak to constrain the estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .dppsf import DpPair, make_dp_kernels
from .imgcore import as_image, clamp01, convolve, gaussian_blur
from .metrics import to_gray

DEFAULT_CANDIDATES = tuple(range(-25, 26))

# Pixels whose 5x5 neighborhood gradient energy falls below this floor are
# flagged low-confidence regardless of the cost gap.
TEXTURE_FLOOR = 1e-4

_GAP_EPS = 1e-12


@dataclass(frozen=True)
class EstimationConfig:
    """Knobs for cost-volume construction and the discrete solver."""

    lam: float = 10.0
    residual_smooth_sigma: float = 2.0
    candidates: tuple = DEFAULT_CANDIDATES
    smoothing_iters: int = 20
    confidence_floor: float = 0.1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.residual_smooth_sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.residual_smooth_sigma}")
        if len(self.candidates) == 0:
            raise ValueError("candidate list must be nonempty")
        cands = tuple(int(c) for c in self.candidates)
        if any(b <= a for a, b in zip(cands, cands[1:])):
            raise ValueError("candidates must be strictly increasing")
        object.__setattr__(self, "candidates", cands)


@dataclass
class CostVolume:
    """Per-pixel cross-blur residual for each candidate signed radius."""

    candidates: tuple
    cost: np.ndarray  # (n_candidates, H, W) float32, nonnegative

    def __post_init__(self):
        if len(self.candidates) != self.cost.shape[0]:
            raise ValueError("one cost slice per candidate required")
        if any(b <= a for a, b in zip(self.candidates, self.candidates[1:])):
            raise ValueError("candidates must be strictly increasing")
        if not np.isfinite(self.cost).all() or self.cost.min() < 0:
            raise ValueError("costs must be finite and >= 0")

    def slice_for(self, radius: int) -> np.ndarray:
        return self.cost[self.candidates.index(radius)]


def build_cost_volume(pair: DpPair, cfg: EstimationConfig = EstimationConfig()) -> CostVolume:
    """Evaluate the cross-blur residual for every candidate radius.

    For candidate r the slice is the Gaussian-smoothed, channel-summed
    squared difference between ``left * H_r`` and ``right * mirror(H_r)``
    where H_r is the right-view kernel for radius r. Evaluating the
    whole-image convolution yields the center-pixel residual for every
    location at once.
    """
    left = pair.left.astype(np.float32)
    right = pair.right.astype(np.float32)
    slices = []
    for r in cfg.candidates:
        kernels = make_dp_kernels(r)
        a = convolve(left, kernels.right)
        b = convolve(right, kernels.left)  # mirror of the right kernel
        diff = a.astype(np.float64) - b.astype(np.float64)
        resid = diff * diff
        if resid.ndim == 3:
            resid = resid.sum(axis=2)
        slices.append(gaussian_blur(resid, cfg.residual_smooth_sigma))
    return CostVolume(cfg.candidates, np.stack(slices).astype(np.float32))


def gradient_energy(img, window: int = 5) -> np.ndarray:
    """Local gradient energy: mean of squared central differences over a
    window x window neighborhood of the grayscale image."""
    g = to_gray(as_image(img))
    dy, dx = np.gradient(g)
    energy = dx * dx + dy * dy
    return ndimage.uniform_filter(energy, size=window, mode="reflect").astype(np.float32)


def _preference_order(candidates):
    # WTA tie-break: smallest |r| first, negative before positive.
    return sorted(range(len(candidates)), key=lambda i: (abs(candidates[i]), candidates[i] > 0))


def noise_gain(radius: int) -> float:
    """Variance gain of the candidate's residual under i.i.d. sensor noise:
    the summed squared weights of both view kernels. Large radii average
    noise away, so their raw residuals are structurally cheaper."""
    kernels = make_dp_kernels(radius)
    return float(np.sum(kernels.left**2) + np.sum(kernels.right**2))


def _neighbor_mean(est: np.ndarray) -> np.ndarray:
    cross = np.array([[0.0, 0.25, 0.0], [0.25, 0.0, 0.25], [0.0, 0.25, 0.0]])
    return ndimage.convolve(est, cross, mode="reflect")


def solve_coc(vol: CostVolume, cfg: EstimationConfig = EstimationConfig()):
    """Extract the signed COC map and a confidence map from a cost volume.

    The slices are first divided by their candidate's noise gain (summed
    squared kernel weights), equalizing the residual floor that i.i.d.
    sensor noise puts under each candidate. Winner-take-all over the
    whitened slices, then ``smoothing_iters`` rounds where each pixel
    re-picks the candidate minimizing

        cost(c) + lam * scale * ((c - neighbor_mean) / r_max)^2

    with ``scale`` the mean per-pixel cost contrast (making lam unitless),
    and finally a 3x3 median pass. Confidence is the raw pre-smoothing gap
    (second_best - best) / second_best.
    """
    order = _preference_order(vol.candidates)
    cand_ord = np.array([vol.candidates[i] for i in order], dtype=np.float64)
    raw_ord = vol.cost[order].astype(np.float64)
    gains = np.array([noise_gain(vol.candidates[i]) for i in order])
    cost_ord = raw_ord / gains[:, None, None]

    est = cand_ord[np.argmin(cost_ord, axis=0)]

    best = raw_ord.min(axis=0)
    second = np.partition(raw_ord, 1, axis=0)[1] if len(cand_ord) > 1 else best
    confidence = (second - best) / (second + _GAP_EPS)

    if cfg.lam > 0 and cfg.smoothing_iters > 0 and len(cand_ord) > 1:
        r_max = max(abs(c) for c in vol.candidates) or 1.0
        contrast = cost_ord.max(axis=0) - cost_ord.min(axis=0)
        scale = float(np.mean(contrast))
        weight = cfg.lam * scale / (r_max * r_max)
        # Ambiguous pixels (tiny best/second-best gap) follow the
        # neighborhood; any positive weight keeps the lam = 0 WTA intact.
        unary_w = np.maximum(confidence, 1e-3)
        cand_col = cand_ord[:, None, None]
        for _ in range(cfg.smoothing_iters):
            pull = _neighbor_mean(est)
            total = unary_w[None] * cost_ord + weight * (cand_col - pull[None]) ** 2
            est = cand_ord[np.argmin(total, axis=0)]

    est = ndimage.median_filter(est, size=3, mode="reflect")
    return est.astype(np.float32), confidence.astype(np.float32)


def estimate_coc(pair: DpPair, cfg: EstimationConfig = EstimationConfig()):
    """Estimate the signed COC map of a DP pair.

    Returns ``(coc, confidence)``; confidence is zeroed where the local
    gradient energy of the fused input is below ``TEXTURE_FLOOR``.
    """
    vol = build_cost_volume(pair, cfg)
    coc, confidence = solve_coc(vol, cfg)
    fused = (pair.left.astype(np.float64) + pair.right.astype(np.float64)) / 2.0
    energy = gradient_energy(fused.astype(np.float32))
    confidence = np.where(energy < TEXTURE_FLOOR, 0.0, confidence).astype(np.float32)
    return coc, confidence


def colorize_coc(coc, max_radius: float = 25.0) -> np.ndarray:
    """Fixed signed colormap for previews: negative COC in blue, zero
    black, positive in yellow."""
    c = np.asarray(coc, dtype=np.float64) / float(max_radius)
    c = np.clip(c, -1.0, 1.0)
    pos = np.maximum(c, 0.0)
    neg = np.maximum(-c, 0.0)
    return clamp01(np.stack([pos, pos, neg], axis=2))
