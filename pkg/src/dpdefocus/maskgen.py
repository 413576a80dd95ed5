"""Defocus-mask generation and the nested threshold search.

The COC magnitude range [0, 25] is partitioned into M intervals by a
ThresholdSet; quantizing a COC map against it yields one mask per branch.
The interval boundaries are learned by a nested loop: the inner step fits
each branch's regularization parameter on the training pixels currently
assigned to it (L1 objective), the outer step measures every branch's
absolute error per integer-radius bin on a validation set and re-segments
the bins by exact dynamic programming over contiguous assignments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import branches as br
from .dppsf import MAX_RADIUS, DpPair, round_radius
from .imgcore import as_float_map, as_image, atomic_write_text, gaussian_blur
from .thinlens import parse_keyvalue_file

N_BINS = MAX_RADIUS + 1

THETA_GRID = tuple(float(10.0 ** (e / 2.0)) for e in range(-10, -1))


@dataclass(frozen=True)
class ThresholdSet:
    """Strictly increasing interval boundaries with fixed endpoints 0 and 25."""

    bounds: tuple

    def __post_init__(self):
        bounds = tuple(float(b) for b in self.bounds)
        if len(bounds) < 2:
            raise ValueError("need at least two boundaries")
        if any(b <= a for a, b in zip(bounds, bounds[1:])):
            raise ValueError(f"boundaries must be strictly increasing: {bounds}")
        if bounds[0] != 0.0 or bounds[-1] != float(MAX_RADIUS):
            raise ValueError(
                f"endpoints are fixed to 0 and {MAX_RADIUS}, got {bounds}"
            )
        object.__setattr__(self, "bounds", bounds)

    @property
    def n_branches(self) -> int:
        return len(self.bounds) - 1

    def assign(self, coc_mag: np.ndarray) -> np.ndarray:
        """0-based branch index per value: interval [r_i, r_{i+1}), the
        last interval closed above."""
        interior = np.asarray(self.bounds[1:-1], dtype=np.float64)
        return np.searchsorted(interior, np.asarray(coc_mag, dtype=np.float64), side="right")


def uniform_thresholds(n_branches: int) -> ThresholdSet:
    """Evenly spaced initial boundaries over [0, 25]."""
    if n_branches < 1:
        raise ValueError("need at least one branch")
    return ThresholdSet(tuple(np.linspace(0.0, float(MAX_RADIUS), n_branches + 1)))


@dataclass
class DefocusMaskSet:
    """Per-branch pixel masks summing to 1 at every pixel."""

    masks: list
    mode: str  # "hard" or "feathered"
    thresholds: ThresholdSet


def mask_set_from_assignment(assignment: np.ndarray, n_branches: int,
                             thresholds: ThresholdSet,
                             feather_sigma: float = 0.0) -> DefocusMaskSet:
    """Build a mask set from a 0-based per-pixel branch assignment."""
    hard = [(assignment == i).astype(np.float32) for i in range(n_branches)]
    if feather_sigma <= 0:
        return DefocusMaskSet(hard, "hard", thresholds)
    blurred = np.stack([gaussian_blur(m, feather_sigma) for m in hard])
    total = blurred.sum(axis=0)
    blurred /= total[None]
    return DefocusMaskSet([m.astype(np.float32) for m in blurred], "feathered", thresholds)


def quantize(coc, thresholds: ThresholdSet, feather_sigma: float = 0.0) -> DefocusMaskSet:
    """Quantize a COC map into per-branch defocus masks.

    A pixel belongs to branch i iff its |COC| lies in [r_i, r_{i+1}), the
    last interval closed above. ``feather_sigma`` > 0 Gaussian-blurs each
    hard mask and renormalizes so the masks still sum to 1 per pixel.
    """
    mag = np.abs(as_float_map(coc, "coc"))
    assignment = thresholds.assign(mag)
    return mask_set_from_assignment(assignment, thresholds.n_branches,
                                    thresholds, feather_sigma)


class Scene(NamedTuple):
    """One training/validation sample: DP pair, sharp target, COC map."""

    pair: DpPair
    sharp: np.ndarray
    coc: np.ndarray


@dataclass
class CostProfile:
    """Mean absolute branch error per integer |COC| bin, plus bin sizes."""

    mean_err: np.ndarray  # (26, M) float64; rows with count 0 are absent
    counts: np.ndarray  # (26,) int64

    @property
    def n_branches(self) -> int:
        return self.mean_err.shape[1]


def _per_pixel_abs_err(out: np.ndarray, target: np.ndarray) -> np.ndarray:
    err = np.abs(out.astype(np.float64) - target.astype(np.float64))
    return err.mean(axis=2) if err.ndim == 3 else err


def _coc_bins(coc) -> np.ndarray:
    return np.clip(np.abs(round_radius(coc)), 0, MAX_RADIUS)


def branch_cost_profile(model: br.BranchSet, valset) -> CostProfile:
    """Accumulate each branch's full-image absolute error into per-bin
    means, binned by the ground-truth |COC| of every pixel.

    Each branch is evaluated as if every bin were assigned to it (its
    layer range is widened to the full [0, 25]), so a profile cell holds
    the counterfactual assignment error the threshold update minimizes,
    not the error under the stale assignment."""
    if not valset:
        raise ValueError("validation set is empty")
    n = model.n_branches
    sums = np.zeros((N_BINS, n), dtype=np.float64)
    counts = np.zeros(N_BINS, dtype=np.int64)
    wide = [
        branch if branch.kind == "passthrough"
        else replace(branch, interval=(0.0, float(MAX_RADIUS)))
        for branch in model.branches
    ]
    for scene in valset:
        sharp = as_image(scene.sharp, "sharp")
        fused = br.fuse_input(scene.pair)
        mag = np.abs(as_float_map(scene.coc, "coc"))
        bins = _coc_bins(mag).ravel()
        counts += np.bincount(bins, minlength=N_BINS)
        for j, branch in enumerate(wide):
            out = br.apply_branch(branch, fused, mag)
            err = _per_pixel_abs_err(out, sharp).ravel()
            sums[:, j] += np.bincount(bins, weights=err, minlength=N_BINS)
    mean_err = np.zeros_like(sums)
    nonzero = counts > 0
    mean_err[nonzero] = sums[nonzero] / counts[nonzero, None]
    return CostProfile(mean_err, counts)


def assignment_cost(profile: CostProfile, thresholds: ThresholdSet) -> float:
    """Pixel-weighted total error of assigning each bin per the thresholds."""
    bins = np.arange(N_BINS, dtype=np.float64)
    assigned = thresholds.assign(bins)
    per_bin = profile.mean_err[np.arange(N_BINS), assigned] * profile.counts
    return float(per_bin.sum())


def update_thresholds(profile: CostProfile, t_old: ThresholdSet) -> ThresholdSet:
    """Re-segment the integer bins into contiguous branch runs.

    Exact dynamic programming over the 26 bins x M branches, minimizing
    the pixel-weighted total error. Boundaries land on the first bin of
    each branch's run; ties push tied bins into the lighter branch, which
    also makes empty bins inherit their lower neighbor's assignment.
    """
    m = profile.n_branches
    if int((profile.counts > 0).sum()) < m:
        raise ValueError(
            f"profile has fewer nonempty bins than branches ({m})"
        )
    if m == 1:
        return t_old
    cost = profile.mean_err * profile.counts[:, None]  # (26, M)
    suffix_start_max = N_BINS - 2  # last branch keeps bin 25 off the boundary grid

    # dp[i][e]: best cost of bins 0..e over branches 0..i, branch i ends at e.
    dp = np.full((m, N_BINS), np.inf)
    starts = np.zeros((m, N_BINS), dtype=np.int64)
    dp[0] = np.cumsum(cost[:, 0])
    for i in range(1, m):
        run = np.cumsum(cost[:, i])
        for e in range(i, N_BINS):
            best, best_s = np.inf, -1
            hi = min(e, suffix_start_max) if i == m - 1 else e
            for s in range(i, hi + 1):
                val = dp[i - 1][s - 1] + run[e] - run[s - 1]
                if val <= best:  # ties keep the larger start (lighter branch)
                    best, best_s = val, s
            dp[i][e] = best
            starts[i][e] = best_s

    bounds = [float(MAX_RADIUS)]
    e = N_BINS - 1
    for i in range(m - 1, 0, -1):
        s = int(starts[i][e])
        bounds.append(float(s))
        e = s - 1
    bounds.append(0.0)
    return ThresholdSet(tuple(reversed(bounds)))


@dataclass
class HistoryRow:
    iteration: int
    val_cost: float
    thresholds: tuple
    starved: tuple


@dataclass
class SearchResult:
    thresholds: ThresholdSet
    branches: br.BranchSet
    history: list
    converged: bool


def fit_branches(model: br.BranchSet, trainset, theta_grid=THETA_GRID):
    """Inner loop: per branch, grid-search the regularization strength
    minimizing mean absolute error on the pixels assigned to it.

    Returns the refitted branch set and the indices of starved branches
    (no assigned training pixels; their parameters are left as-is)."""
    if not trainset:
        raise ValueError("training set is empty")
    thresholds = model.thresholds
    prepared = []
    for scene in trainset:
        sharp = as_image(scene.sharp, "sharp")
        fused = br.fuse_input(scene.pair)
        mag = np.abs(as_float_map(scene.coc, "coc"))
        prepared.append((fused, sharp, mag, thresholds.assign(mag)))

    new_branches = []
    starved = []
    for j, branch in enumerate(model.branches):
        if branch.kind == "passthrough":
            new_branches.append(branch)
            continue
        totals = np.zeros(len(theta_grid), dtype=np.float64)
        n_pixels = 0
        for fused, sharp, mag, assigned in prepared:
            mask = assigned == j
            if not mask.any():
                continue
            n_pixels += int(mask.sum())
            for t_idx, theta in enumerate(theta_grid):
                candidate = br.BranchConfig(branch.index, branch.kind, theta, branch.interval)
                err = _per_pixel_abs_err(br.apply_branch(candidate, fused, mag), sharp)
                totals[t_idx] += float(err[mask].sum())
        if n_pixels == 0:
            starved.append(branch.index)
            new_branches.append(branch)
            continue
        theta = theta_grid[int(np.argmin(totals))]
        new_branches.append(br.BranchConfig(branch.index, branch.kind, theta, branch.interval))
    return br.BranchSet(new_branches, thresholds), tuple(starved)


def search_thresholds(trainset, valset, model: br.BranchSet, *,
                      max_outer: int = 10, theta_grid=THETA_GRID) -> SearchResult:
    """Nested threshold optimization.

    Alternates the inner branch fit on the training set with the outer
    profile-and-resegment step on the validation set until the thresholds
    stop changing or ``max_outer`` iterations are reached.
    """
    if not trainset or not valset:
        raise ValueError("train and validation sets must be nonempty")
    t = model.thresholds
    fitted = model
    history = []
    converged = False
    for iteration in range(max_outer):
        fitted, starved = fit_branches(fitted, trainset, theta_grid)
        if starved:
            warnings.warn(
                f"branches {starved} received no training pixels at iteration "
                f"{iteration}; their parameters were not refit",
                RuntimeWarning,
                stacklevel=2,
            )
        profile = branch_cost_profile(fitted, valset)
        t_new = update_thresholds(profile, t)
        history.append(HistoryRow(iteration, assignment_cost(profile, t_new),
                                  t_new.bounds, starved))
        if t_new.bounds == t.bounds:
            converged = True
            break
        t = t_new
        fitted = br.retarget_branch_set(fitted, t)
    return SearchResult(t, fitted, history, converged)


# ---------------------------------------------------------------------------
# Model persistence (plain key=value) and history CSV
# ---------------------------------------------------------------------------

def save_model(model: br.BranchSet, path) -> None:
    """Write a branch model as ``M, r0..rM, branch<i>.kind, branch<i>.theta``."""
    lines = [f"M = {model.n_branches}"]
    for i, bound in enumerate(model.thresholds.bounds):
        lines.append(f"r{i} = {bound!r}")
    for branch in model.branches:
        lines.append(f"branch{branch.index}.kind = {branch.kind}")
        theta = 0.0 if branch.theta is None else branch.theta
        lines.append(f"branch{branch.index}.theta = {theta!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_model(path) -> br.BranchSet:
    """Read a branch model written by :func:`save_model`."""
    entries = parse_keyvalue_file(path)
    try:
        m = int(entries.pop("M"))
        bounds = tuple(float(entries.pop(f"r{i}")) for i in range(m + 1))
        thresholds = ThresholdSet(bounds)
        branch_list = []
        for i in range(1, m + 1):
            kind = entries.pop(f"branch{i}.kind")
            theta = float(entries.pop(f"branch{i}.theta"))
            branch_list.append(br.BranchConfig(
                i, kind, None if kind == "passthrough" else theta,
                (bounds[i - 1], bounds[i]),
            ))
    except KeyError as exc:
        raise ValueError(f"{path}: missing model key {exc}") from exc
    if entries:
        raise ValueError(f"{path}: unknown model keys {sorted(entries)}")
    return br.BranchSet(branch_list, thresholds)


def save_history_csv(history, n_branches: int, path) -> None:
    """Emit the outer-loop history as ``iter,val_cost,r1..r{M-1}``."""
    header = "iter,val_cost," + ",".join(f"r{i}" for i in range(1, n_branches))
    rows = [header]
    for row in history:
        interior = ",".join(f"{b:g}" for b in row.thresholds[1:-1])
        rows.append(f"{row.iteration},{row.val_cost:.8f},{interior}")
    atomic_write_text(path, "\n".join(rows) + "\n")
