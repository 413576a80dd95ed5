import numpy as np
import pytest

from dpdefocus.branches import (
    BranchConfig,
    BranchSet,
    apply_branch,
    compose,
    deblur,
    default_branch_set,
    fuse_input,
    wiener_deconv,
)
from dpdefocus.dppsf import DpPair, full_disc_kernel, render_dp_pair, render_mono
from dpdefocus.imgcore import convolve, gaussian_blur
from dpdefocus.maskgen import ThresholdSet, quantize, uniform_thresholds
from dpdefocus.metrics import psnr

from conftest import multiscale_texture


def naive_dft2(x):
    """O(n^4) forward DFT, independent of numpy.fft."""
    h, w = x.shape
    fy = np.exp(-2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    fx = np.exp(-2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    return fy @ x.astype(np.complex128) @ fx


def naive_idft2(x):
    h, w = x.shape
    fy = np.exp(2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    fx = np.exp(2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    return (fy @ x @ fx) / (h * w)


def reference_wiener(img, kernel, theta):
    """Replicates the padding and taper, but computes every transform by
    the explicit DFT sums above."""
    side = kernel.shape[0]
    pad = 2 * side
    plane = img.astype(np.float64)
    padded = np.pad(plane, pad, mode="symmetric")
    h, w = padded.shape
    ry = np.minimum(np.arange(h), np.arange(h)[::-1]).astype(np.float64)
    rx = np.minimum(np.arange(w), np.arange(w)[::-1]).astype(np.float64)
    wy = 0.5 - 0.5 * np.cos(np.pi * np.clip(ry / pad, 0, 1))
    wx = 0.5 - 0.5 * np.cos(np.pi * np.clip(rx / pad, 0, 1))
    window = wy[:, None] * wx[None, :]
    padded = window * padded + (1 - window) * plane.mean()
    k = np.zeros((h, w))
    k[:side, :side] = kernel
    k = np.roll(k, (-(side // 2), -(side // 2)), axis=(0, 1))
    otf = naive_dft2(k)
    transfer = np.conj(otf) / (np.abs(otf) ** 2 + theta)
    restored = naive_idft2(naive_dft2(padded) * transfer).real
    return np.clip(restored[pad:-pad, pad:-pad], 0, 1).astype(np.float32)


class TestFuse:
    def test_identical_views(self, rng):
        img = rng.random((8, 8)).astype(np.float32)
        assert np.allclose(fuse_input(DpPair(img, img)), img, atol=1e-7)

    def test_matches_mono_render(self):
        tex = multiscale_texture((64, 64), seed=40)
        coc = np.full((64, 64), 4.0, np.float32)
        pair = render_dp_pair(tex, coc)
        assert np.abs(fuse_input(pair) - render_mono(tex, coc)).max() <= 1e-6

    def test_idempotent(self, rng):
        img = rng.random((8, 8)).astype(np.float32)
        fused = fuse_input(DpPair(img, img))
        assert np.array_equal(fuse_input(DpPair(fused, fused)), fused)


class TestWiener:
    def test_identity_kernel_scales_by_one_over_one_plus_theta(self, rng):
        img = (rng.random((16, 16)) * 0.8).astype(np.float32)
        out = wiener_deconv(img, np.array([[1.0]]), 0.25)
        assert np.allclose(out, img / 1.25, atol=1e-6)

    def test_identity_kernel_tiny_theta_is_identity(self, rng):
        img = rng.random((16, 16)).astype(np.float32)
        out = wiener_deconv(img, np.array([[1.0]]), 1e-8)
        assert np.allclose(out, img, atol=1e-6)

    def test_recovers_disc_blur(self):
        tex = gaussian_blur(multiscale_texture((96, 96), seed=41), 1.5)
        tex = ((tex - tex.min()) / np.ptp(tex) * 0.9 + 0.05).astype(np.float32)
        blurred = convolve(tex, full_disc_kernel(4))
        restored = wiener_deconv(blurred, full_disc_kernel(4), 1e-4)
        assert psnr(restored, tex) >= psnr(blurred, tex) + 5.0

    def test_matches_naive_dft_reference(self, rng):
        img = rng.random((8, 8)).astype(np.float32)
        k = full_disc_kernel(1)
        assert np.allclose(wiener_deconv(img, k, 1e-2),
                           reference_wiener(img, k, 1e-2), atol=1e-5)

    def test_mean_drift_bounded(self):
        tex = multiscale_texture((64, 64), seed=42)
        blurred = convolve(tex, full_disc_kernel(3))
        for theta in (1e-4, 1e-3, 1e-2):
            out = wiener_deconv(blurred, full_disc_kernel(3), theta)
            assert abs(float(out.mean()) - float(blurred.mean())) <= 0.05

    def test_nonpositive_theta_rejected(self, rng):
        with pytest.raises(ValueError):
            wiener_deconv(rng.random((8, 8)).astype(np.float32), np.array([[1.0]]), 0.0)


class TestApplyBranch:
    def test_passthrough_identity(self, rng):
        img = rng.random((8, 8)).astype(np.float32)
        branch = BranchConfig(1, "passthrough", None, (0.0, 5.0))
        out = apply_branch(branch, img, np.zeros((8, 8), np.float32))
        assert np.array_equal(out, img)

    def test_constant_coc_equals_single_wiener(self):
        tex = multiscale_texture((64, 64), seed=43)
        coc = np.full((64, 64), 4.0, np.float32)
        fused = fuse_input(render_dp_pair(tex, coc))
        branch = BranchConfig(2, "deconv", 1e-3, (1.0, 25.0))
        out = apply_branch(branch, fused, coc)
        ref = wiener_deconv(fused, full_disc_kernel(4), 1e-3)
        assert np.array_equal(out, ref)

    def test_two_plane_interiors_match_per_radius_deconv(self):
        tex = multiscale_texture((128, 128), seed=44)
        cols = np.broadcast_to(np.arange(128)[None, :], (128, 128))
        coc = np.where(cols < 64, 3.0, 7.0).astype(np.float32)
        fused = fuse_input(render_dp_pair(tex, coc))
        branch = BranchConfig(2, "deconv", 1e-2, (1.0, 25.0))
        out = apply_branch(branch, fused, coc)
        for radius, region in ((3, cols < 64), (7, cols >= 64)):
            # oracle: the same scene uniformly blurred at this plane's
            # radius, deconvolved at it; agreement degrades only within the
            # inverse filter's reach of the plane boundary
            uniform = fuse_input(render_dp_pair(tex, np.full((128, 128), float(radius), np.float32)))
            ref = wiener_deconv(uniform, full_disc_kernel(radius), 1e-2)
            inner = region & (np.abs(cols - 64) > 4 * radius)
            assert np.abs(out[inner] - ref[inner]).mean() <= 2e-3

    def test_out_of_interval_pixels_use_nearest_endpoint(self):
        tex = multiscale_texture((64, 64), seed=45)
        coc = np.full((64, 64), 2.0, np.float32)
        fused = fuse_input(render_dp_pair(tex, coc))
        branch = BranchConfig(3, "deconv", 1e-3, (6.25, 12.5))
        out = apply_branch(branch, fused, coc)  # 2 < 6.25, clips to layer 7
        ref = wiener_deconv(fused, full_disc_kernel(7), 1e-3)
        assert np.array_equal(out, ref)


class TestCompose:
    def test_hard_masks_select_exactly(self, rng):
        a = rng.random((8, 8)).astype(np.float32)
        b = rng.random((8, 8)).astype(np.float32)
        coc = np.where(np.broadcast_to(np.arange(8)[None, :], (8, 8)) < 4, 0.0, 20.0)
        masks = quantize(coc.astype(np.float32), ThresholdSet((0.0, 12.5, 25.0)))
        out = compose([a, b], masks)
        assert np.array_equal(out[:, :4], a[:, :4])
        assert np.array_equal(out[:, 4:], b[:, 4:])

    def test_feathered_output_within_envelope(self, rng):
        a = rng.random((16, 16)).astype(np.float32)
        b = rng.random((16, 16)).astype(np.float32)
        coc = (rng.random((16, 16)) * 25).astype(np.float32)
        masks = quantize(coc, ThresholdSet((0.0, 12.5, 25.0)), feather_sigma=2.0)
        out = compose([a, b], masks)
        lo = np.minimum(a, b) - 1e-6
        hi = np.maximum(a, b) + 1e-6
        assert np.all(out >= lo) and np.all(out <= hi)

    def test_count_mismatch_rejected(self, rng):
        a = rng.random((8, 8)).astype(np.float32)
        masks = quantize(np.zeros((8, 8), np.float32), ThresholdSet((0.0, 12.5, 25.0)))
        with pytest.raises(ValueError):
            compose([a], masks)


class TestDeblur:
    def setup_method(self):
        ts = ThresholdSet((0.0, 1.0, 9.0, 25.0))
        self.model = BranchSet([
            BranchConfig(1, "passthrough", None, (0.0, 1.0)),
            BranchConfig(2, "deconv", 1e-3, (1.0, 9.0)),
            BranchConfig(3, "deconv", 1e-3, (9.0, 25.0)),
        ], ts)

    def test_all_in_focus_exact_passthrough(self):
        tex = multiscale_texture((48, 48), seed=46)
        coc = np.zeros((48, 48), np.float32)
        pair = render_dp_pair(tex, coc)
        out = deblur(pair, coc, self.model, feather_sigma=0.0)
        assert np.array_equal(out, fuse_input(pair))

    def test_improves_blurred_scene(self):
        tex = multiscale_texture((128, 128), seed=47)
        cols = np.broadcast_to(np.arange(128)[None, :], (128, 128))
        coc = np.where(cols < 64, 0.0, 6.0).astype(np.float32)
        pair = render_dp_pair(tex, coc)
        out = deblur(pair, coc, self.model, feather_sigma=0.0)
        assert psnr(out, tex) > psnr(fuse_input(pair), tex) + 2.0

    def test_deterministic(self):
        tex = multiscale_texture((64, 64), seed=48)
        coc = np.full((64, 64), 5.0, np.float32)
        pair = render_dp_pair(tex, coc)
        a = deblur(pair, coc, self.model, feather_sigma=2.0)
        b = deblur(pair, coc, self.model, feather_sigma=2.0)
        assert np.array_equal(a, b)

    def test_subset_passthrough_only_returns_fused(self):
        tex = multiscale_texture((64, 64), seed=49)
        coc = np.full((64, 64), 12.0, np.float32)
        pair = render_dp_pair(tex, coc)
        out = deblur(pair, coc, self.model, feather_sigma=0.0, subset=[1])
        assert np.array_equal(out, fuse_input(pair))

    def test_subset_out_of_range_rejected(self):
        tex = multiscale_texture((48, 48), seed=50)
        coc = np.zeros((48, 48), np.float32)
        pair = render_dp_pair(tex, coc)
        with pytest.raises(ValueError):
            deblur(pair, coc, self.model, subset=[0])

    def test_monotone_capacity(self):
        # a fitted deconv branch beats passthrough on its own radii (>= 2)
        for radius in (2, 6, 12, 20):
            tex = multiscale_texture((72, 72), seed=60 + radius)
            coc = np.full((72, 72), float(radius), np.float32)
            pair = render_dp_pair(tex, coc)
            fused = fuse_input(pair)
            branch = BranchConfig(2, "deconv", 1e-3, (1.0, 25.0))
            out = apply_branch(branch, fused, coc)
            err_deconv = np.abs(out.astype(np.float64) - tex).mean()
            err_pass = np.abs(fused.astype(np.float64) - tex).mean()
            assert err_deconv <= err_pass


class TestBranchSetValidation:
    def test_default_set_shape(self):
        model = default_branch_set(uniform_thresholds(4))
        assert model.n_branches == 4
        assert model.branches[0].kind == "passthrough"
        assert all(b.kind == "deconv" for b in model.branches[1:])

    def test_interval_mismatch_rejected(self):
        ts = ThresholdSet((0.0, 12.5, 25.0))
        with pytest.raises(ValueError):
            BranchSet([
                BranchConfig(1, "passthrough", None, (0.0, 10.0)),
                BranchConfig(2, "deconv", 1e-3, (10.0, 25.0)),
            ], ts)

    def test_first_branch_must_be_passthrough(self):
        ts = ThresholdSet((0.0, 12.5, 25.0))
        with pytest.raises(ValueError):
            BranchSet([
                BranchConfig(1, "deconv", 1e-3, (0.0, 12.5)),
                BranchConfig(2, "deconv", 1e-3, (12.5, 25.0)),
            ], ts)

    def test_deconv_requires_positive_theta(self):
        with pytest.raises(ValueError):
            BranchConfig(2, "deconv", None, (0.0, 5.0))
