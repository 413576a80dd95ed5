"""Dual-pixel defocus toolkit.

Simulates dual-pixel image formation from a thin-lens model, estimates
signed circle-of-confusion maps from DP pairs via the cross-blur geometric
identity, learns defocus-mask thresholds by nested optimization, and
performs blur-aware multi-branch deblurring.
"""

from .branches import (
    BranchConfig,
    BranchSet,
    apply_branch,
    branch_outputs,
    compose,
    deblur,
    default_branch_set,
    fuse_input,
    wiener_deconv,
)
from .cocest import (
    CostVolume,
    EstimationConfig,
    build_cost_volume,
    estimate_coc,
    solve_coc,
)
from .dppsf import (
    MAX_RADIUS,
    DpKernelPair,
    DpPair,
    full_disc_kernel,
    make_dp_kernels,
    render_dp_pair,
    render_mono,
)
from .estimators import CocEstimator, MultiBranchDeblurrer
from .imgcore import (
    UnsupportedFormatError,
    convolve,
    gaussian_blur,
    load_image,
    load_pfm,
    save_image,
    save_pfm,
)
from .maskgen import (
    CostProfile,
    DefocusMaskSet,
    Scene,
    ThresholdSet,
    branch_cost_profile,
    quantize,
    search_thresholds,
    uniform_thresholds,
    update_thresholds,
)
from .metrics import mae, psnr, residual_map, ssim
from .thinlens import CameraModel, coc_diameter_mm, coc_signed_px, depth_to_coc_map

__version__ = "0.1.0"

__all__ = [
    "BranchConfig",
    "BranchSet",
    "CameraModel",
    "CocEstimator",
    "CostProfile",
    "CostVolume",
    "DefocusMaskSet",
    "DpKernelPair",
    "DpPair",
    "EstimationConfig",
    "MAX_RADIUS",
    "MultiBranchDeblurrer",
    "Scene",
    "ThresholdSet",
    "UnsupportedFormatError",
    "apply_branch",
    "branch_cost_profile",
    "branch_outputs",
    "build_cost_volume",
    "coc_diameter_mm",
    "coc_signed_px",
    "compose",
    "convolve",
    "deblur",
    "default_branch_set",
    "depth_to_coc_map",
    "estimate_coc",
    "full_disc_kernel",
    "fuse_input",
    "gaussian_blur",
    "load_image",
    "load_pfm",
    "mae",
    "make_dp_kernels",
    "psnr",
    "quantize",
    "render_dp_pair",
    "render_mono",
    "residual_map",
    "save_image",
    "save_pfm",
    "search_thresholds",
    "solve_coc",
    "ssim",
    "uniform_thresholds",
    "update_thresholds",
    "wiener_deconv",
]
