import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hairgbuf.gbuffer import (Camera, GBuffer, TensorImage, decode_tangent,
                              encode_tangent, foreground_mask)


def _gbuffer(h=4, w=4):
    return GBuffer(
        coverage=TensorImage.zeros(h, w, 1),
        tangent=TensorImage.zeros(h, w, 3),
        position=TensorImage.zeros(h, w, 3),
        depth=TensorImage.zeros(h, w, 1),
        motion=TensorImage.zeros(h, w, 2),
    )


class TestTensorImage:
    def test_shape_properties(self):
        img = TensorImage(np.zeros((3, 5, 2), dtype=np.float32))
        assert (img.height, img.width, img.channels) == (3, 5, 2)

    def test_rejects_nan(self):
        data = np.zeros((2, 2, 1))
        data[0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            TensorImage(data)

    def test_rejects_bad_rank(self):
        with pytest.raises(ValueError):
            TensorImage(np.zeros((2, 2, 2, 2)))

    def test_two_dim_promoted_to_single_channel(self):
        img = TensorImage(np.zeros((4, 4)))
        assert img.channels == 1


class TestGBuffer:
    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="tangent"):
            GBuffer(
                coverage=TensorImage.zeros(4, 4, 1),
                tangent=TensorImage.zeros(4, 5, 3),
                position=TensorImage.zeros(4, 4, 3),
                depth=TensorImage.zeros(4, 4, 1),
                motion=TensorImage.zeros(4, 4, 2),
            )

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError, match="channels"):
            GBuffer(
                coverage=TensorImage.zeros(4, 4, 2),
                tangent=TensorImage.zeros(4, 4, 3),
                position=TensorImage.zeros(4, 4, 3),
                depth=TensorImage.zeros(4, 4, 1),
                motion=TensorImage.zeros(4, 4, 2),
            )

    def test_validate_flags_depth_position_convention(self):
        g = _gbuffer()
        g.depth.data[1, 1, 0] = 2.0  # depth without a position
        with pytest.raises(ValueError, match="convention"):
            g.validate()

    def test_validate_accepts_consistent_buffers(self):
        g = _gbuffer()
        g.depth.data[1, 1, 0] = 2.0
        g.position.data[1, 1] = (0.0, 0.0, 2.0)
        g.coverage.data[1, 1, 0] = 0.5
        g.tangent.data[1, 1] = (1.0, 0.0, 0.0)
        g.validate()


class TestForegroundMask:
    def test_all_zero_coverage(self):
        cov = TensorImage.zeros(4, 4, 1)
        assert foreground_mask(cov, 0.0).data.sum() == 0

    def test_strict_inequality(self):
        cov = TensorImage(np.array([[[0.0], [0.5], [1.0]]], dtype=np.float32))
        mask = foreground_mask(cov, 0.0)
        assert mask.data[0, :, 0].tolist() == [0.0, 1.0, 1.0]

    def test_matches_per_pixel_loop(self, rng):
        cov = rng.uniform(0, 1, size=(9, 7, 1)).astype(np.float32)
        mask = foreground_mask(TensorImage(cov), 0.25).data
        for y in range(9):
            for x in range(7):
                assert mask[y, x, 0] == (1.0 if cov[y, x, 0] > 0.25 else 0.0)

    def test_idempotent(self, rng):
        cov = TensorImage(rng.uniform(0, 1, size=(8, 8, 1)).astype(np.float32))
        once = foreground_mask(cov, 0.0)
        twice = foreground_mask(once, 0.0)
        assert np.array_equal(once.data, twice.data)

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            foreground_mask(TensorImage.zeros(2, 2, 1), -0.1)


class TestTangentEncoding:
    def test_axis_cases(self):
        np.testing.assert_allclose(encode_tangent([0.0, 0.0, 1.0]), [0.5, 0.5, 1.0])
        np.testing.assert_allclose(encode_tangent([1.0, 0.0, 0.0]), [1.0, 0.5, 0.5])

    def test_rejects_non_unit(self):
        with pytest.raises(ValueError):
            encode_tangent([0.5, 0.0, 0.0])

    @settings(max_examples=120, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(
        lambda v: 0.1 < sum(x * x for x in v) ** 0.5))
    def test_round_trip(self, vec):
        t = np.asarray(vec) / np.linalg.norm(vec)
        back = decode_tangent(encode_tangent(t))
        assert np.abs(back - t).max() < 1e-6


class TestCamera:
    def test_invertibility_required(self):
        with pytest.raises(ValueError, match="singular"):
            Camera(np.zeros((4, 4)), fx=1.0, fy=1.0, width=8, height=8,
                   eye=np.zeros(3))

    def test_positive_focal_required(self, camera):
        with pytest.raises(ValueError):
            Camera(camera.view_projection, fx=-1.0, fy=1.0, width=8, height=8,
                   eye=np.zeros(3))

    def test_center_projects_to_image_center(self, camera):
        sx, sy, depth = camera.project(np.zeros(3))
        assert abs(sx - 32.0) < 1e-9 and abs(sy - 32.0) < 1e-9
        assert abs(depth - 4.0) < 1e-9

    def test_project_unproject_round_trip(self, camera, rng):
        pts = rng.uniform(-1, 1, size=(50, 3))
        sx, sy, d = camera.project(pts)
        back = camera.unproject(sx, sy, d)
        assert np.abs(back - pts).max() < 1e-8

    def test_view_depth_matches_projection(self, camera, rng):
        pts = rng.uniform(-1, 1, size=(20, 3))
        _, _, d = camera.project(pts)
        np.testing.assert_allclose(camera.view_depth(pts), d, atol=1e-12)
