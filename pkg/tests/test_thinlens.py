import numpy as np
import pytest

from dpdefocus.thinlens import (
    CameraModel,
    coc_diameter_mm,
    coc_signed_px,
    depth_to_coc_map,
    load_camera_config,
)

CAM = CameraModel(f0_mm=50.0, f_number=4.0, focus_mm=2000.0, pixel_pitch_mm=0.01)


class TestDiameter:
    def test_in_focus_zero(self):
        assert coc_diameter_mm(2000.0, CAM) == 0.0

    def test_far_limit(self):
        # d -> infinity limit is f0^2 / (N (d_f - f0)) = 2500 / 7800
        assert coc_diameter_mm(1e12, CAM) == pytest.approx(2500 / 7800, rel=1e-6)

    def test_double_focus_distance(self):
        # independent scalar evaluation: 0.5 * 2500 / 7800
        assert coc_diameter_mm(4000.0, CAM) == pytest.approx(0.5 * 2500 / 7800, rel=1e-9)

    def test_nonpositive_depth_rejected(self):
        with pytest.raises(ValueError):
            coc_diameter_mm(0.0, CAM)
        with pytest.raises(ValueError):
            coc_diameter_mm(-5.0, CAM)

    def test_monotone_on_each_side(self):
        near = [coc_diameter_mm(d, CAM) for d in np.linspace(100, 1999, 40)]
        far = [coc_diameter_mm(d, CAM) for d in np.linspace(2001, 50000, 40)]
        assert all(b <= a + 1e-12 for a, b in zip(near, near[1:]))  # decreasing toward focus
        assert all(b >= a - 1e-12 for a, b in zip(far, far[1:]))


class TestSignedPx:
    def test_sign_convention(self):
        assert coc_signed_px(2000.0, CAM) == 0.0
        assert coc_signed_px(500.0, CAM) < 0.0
        assert coc_signed_px(8000.0, CAM) > 0.0

    def test_radius_is_half_diameter_in_pixels(self):
        d = 4000.0
        expect = coc_diameter_mm(d, CAM) / (2 * CAM.pixel_pitch_mm)
        assert coc_signed_px(d, CAM) == pytest.approx(expect, rel=1e-9)

    def test_clamped_to_max(self):
        tight = CameraModel(50.0, 1.4, 2000.0, 0.002, max_coc_px=25.0)
        assert coc_signed_px(1e9, tight) == 25.0
        assert coc_signed_px(60.0, tight) == -25.0

    def test_sign_flip_exactly_at_focus(self):
        eps = 1e-6
        assert coc_signed_px(CAM.focus_mm - eps, CAM) < 0 < coc_signed_px(CAM.focus_mm + eps, CAM)


class TestCocMap:
    def test_constant_focus_depth(self):
        depth = np.full((6, 6), CAM.focus_mm, np.float32)
        assert np.array_equal(depth_to_coc_map(depth, CAM), np.zeros((6, 6), np.float32))

    def test_two_plane_signs(self):
        depth = np.where(np.arange(16).reshape(4, 4) < 8, 1000.0, 4000.0).astype(np.float32)
        coc = depth_to_coc_map(depth, CAM)
        assert (coc[:2] < 0).all() and (coc[2:] > 0).all()
        assert len(np.unique(coc)) == 2

    def test_matches_scalar_oracle(self, rng):
        depth = rng.uniform(200, 9000, size=(7, 5)).astype(np.float32)
        coc = depth_to_coc_map(depth, CAM)
        for y in range(7):
            for x in range(5):
                assert coc[y, x] == pytest.approx(coc_signed_px(float(depth[y, x]), CAM), abs=1e-4)

    def test_nonpositive_depth_rejected(self):
        depth = np.full((3, 3), 100.0, np.float32)
        depth[1, 1] = 0.0
        with pytest.raises(ValueError):
            depth_to_coc_map(depth, CAM)

    def test_clamp_bound_everywhere(self, rng):
        tight = CameraModel(50.0, 1.4, 2000.0, 0.001)
        depth = rng.uniform(100, 100000, size=(20, 20)).astype(np.float32)
        assert np.abs(depth_to_coc_map(depth, tight)).max() <= tight.max_coc_px


class TestCameraModelValidation:
    @pytest.mark.parametrize("kwargs", [
        dict(f0_mm=0.0, f_number=4, focus_mm=2000, pixel_pitch_mm=0.01),
        dict(f0_mm=50, f_number=0.0, focus_mm=2000, pixel_pitch_mm=0.01),
        dict(f0_mm=50, f_number=4, focus_mm=40.0, pixel_pitch_mm=0.01),
        dict(f0_mm=50, f_number=4, focus_mm=2000, pixel_pitch_mm=0.0),
        dict(f0_mm=50, f_number=4, focus_mm=2000, pixel_pitch_mm=0.01, max_coc_px=0),
    ])
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(ValueError):
            CameraModel(**kwargs)


class TestConfigFile:
    def test_load(self, tmp_path):
        cfg = tmp_path / "cam.cfg"
        cfg.write_text(
            "# demo camera\n"
            "f0_mm = 50\nf_number = 4\nfocus_mm = 2000\n"
            "pixel_pitch_mm = 0.01\nmax_coc_px = 20\n"
        )
        cam = load_camera_config(cfg)
        assert cam == CameraModel(50.0, 4.0, 2000.0, 0.01, 20.0)

    def test_max_coc_optional(self, tmp_path):
        cfg = tmp_path / "cam.cfg"
        cfg.write_text("f0_mm=50\nf_number=4\nfocus_mm=2000\npixel_pitch_mm=0.01\n")
        assert load_camera_config(cfg).max_coc_px == 25.0

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "cam.cfg"
        cfg.write_text("f0_mm=50\nf_number=4\nfocus_mm=2000\npixel_pitch_mm=0.01\nbogus=1\n")
        with pytest.raises(ValueError):
            load_camera_config(cfg)

    def test_missing_key_rejected(self, tmp_path):
        cfg = tmp_path / "cam.cfg"
        cfg.write_text("f0_mm=50\nf_number=4\n")
        with pytest.raises(ValueError):
            load_camera_config(cfg)
