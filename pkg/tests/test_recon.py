import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hairgbuf.gbuffer import Camera, GBuffer, TensorImage
from hairgbuf.raster import rasterize
from hairgbuf.recon import (BACKGROUND, HAIR_INVALID, HAIR_VALID,
                            CurvatureField, DegenerateFrameError, VotePool,
                            _WorkState, backward_repair, classify_pixels,
                            curvature_centers, fit_circle, forward_voting,
                            inpaint_depth, nearest_fill_positions,
                            project_tangent, project_tangents,
                            reconstruct_positions, step_size)
from hairgbuf.strands import JitterSequence, Strand, StrandScene


def _front_camera(width=32, height=32, eye=(0, 0, 4)):
    return Camera.look_at(eye, (0, 0, 0), (0, 1, 0), 40.0, width, height)


class TestClassify:
    def test_no_coverage_all_background(self):
        classes = classify_pixels(np.zeros((4, 4, 3)), np.zeros((4, 4, 1)), 1e-6)
        assert np.all(classes == BACKGROUND)

    def test_covered_with_positions_all_valid(self):
        pos = np.full((4, 4, 3), (5.0, 0.0, 0.0))
        classes = classify_pixels(pos, np.ones((4, 4, 1)), 1e-6)
        assert np.all(classes == HAIR_VALID)

    def test_matches_per_pixel_oracle(self, rng):
        cov = (rng.uniform(0, 1, (8, 8, 1)) > 0.4).astype(np.float32)
        pos = rng.normal(size=(8, 8, 3)) * (rng.uniform(0, 1, (8, 8, 1)) > 0.5)
        classes = classify_pixels(pos, cov, 1e-6)
        for y in range(8):
            for x in range(8):
                if cov[y, x, 0] <= 0:
                    expected = BACKGROUND
                elif np.linalg.norm(pos[y, x]) > 1e-6:
                    expected = HAIR_VALID
                else:
                    expected = HAIR_INVALID
                assert classes[y, x] == expected

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            classify_pixels(np.zeros((2, 2, 3)), np.zeros((2, 2, 1)), 0.0)


class TestInpaintDepth:
    def test_complete_depth_unchanged(self, rng):
        depth = rng.uniform(1, 5, (6, 6, 1)).astype(np.float32)
        classes = np.full((6, 6), HAIR_VALID, dtype=np.int8)
        out = inpaint_depth(depth, classes)
        np.testing.assert_array_equal(out, depth)

    def test_single_source_floods(self):
        depth = np.zeros((5, 5, 1), dtype=np.float32)
        depth[0, 0, 0] = 3.0
        classes = np.full((5, 5), HAIR_INVALID, dtype=np.int8)
        classes[0, 0] = HAIR_VALID
        out = inpaint_depth(depth, classes)
        assert np.all(out == 3.0)

    def test_matches_brute_force_with_tie_break(self, rng):
        h = w = 32
        depth = np.where(rng.uniform(0, 1, (h, w)) > 0.85,
                         rng.uniform(1, 9, (h, w)), 0.0).astype(np.float32)
        classes = np.where(rng.uniform(0, 1, (h, w)) > 0.3, HAIR_INVALID,
                           BACKGROUND).astype(np.int8)
        classes[depth > 0] = HAIR_VALID
        out = inpaint_depth(depth[:, :, None], classes)[:, :, 0]
        sources = [(y, x) for y in range(h) for x in range(w) if depth[y, x] > 0]
        for y in range(h):
            for x in range(w):
                if classes[y, x] == BACKGROUND or depth[y, x] > 0:
                    continue
                best, best_d2 = None, None
                for sy, sx in sources:  # row-major: first min wins
                    d2 = (sy - y) ** 2 + (sx - x) ** 2
                    if best_d2 is None or d2 < best_d2:
                        best, best_d2 = (sy, sx), d2
                assert out[y, x] == depth[best]

    def test_degenerate_frame_raises(self):
        classes = np.full((4, 4), HAIR_INVALID, dtype=np.int8)
        with pytest.raises(DegenerateFrameError):
            inpaint_depth(np.zeros((4, 4, 1), dtype=np.float32), classes)


class TestStepSize:
    def _camera(self, fx, fy):
        return Camera(np.eye(4), fx=fx, fy=fy, width=8, height=8,
                      eye=np.zeros(3))

    def test_unit_case(self):
        assert step_size(1.0, self._camera(1, 1)) == pytest.approx(math.sqrt(2))

    def test_linear_in_depth(self):
        assert step_size(2.0, self._camera(1, 1)) == pytest.approx(2 * math.sqrt(2))

    def test_against_float64_direct(self):
        cam = self._camera(800, 600)
        expected = math.sqrt((1.5 / 800) ** 2 + (1.5 / 600) ** 2)
        assert abs(step_size(1.5, cam) - expected) < 1e-12

    def test_rejects_nonpositive_depth(self):
        with pytest.raises(ValueError):
            step_size(0.0, self._camera(1, 1))


class TestFitCircle:
    @pytest.mark.parametrize("radius", [5, 9, 20, 35, 50])
    def test_exact_arc_recovery(self, radius):
        # arc spanning roughly an 11px window, in window-local coordinates
        # (the curvature stage always recenters on the query pixel)
        span = min(5.5 / radius, math.pi / 3)
        angles = np.linspace(-span, span, 15)
        center = np.array([3.2, -1.7])
        pts = center + radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        anchor = pts[len(pts) // 2]
        fitted, cond = fit_circle(pts - anchor)
        assert cond <= 1e8
        assert np.linalg.norm(fitted + anchor - center) < 0.5

    @pytest.mark.parametrize("direction", [(1, 0), (0, 1), (1, 1), (2, 1), (3, -2)])
    def test_collinear_degenerate(self, direction):
        t = np.arange(-5, 6, dtype=np.float64)
        pts = np.stack([t * direction[0], t * direction[1]], axis=1)
        _, cond = fit_circle(pts)
        assert not math.isfinite(cond) or cond > 1e8

    def test_weighted_matches_field_implementation(self, rng):
        cov = np.where(rng.uniform(0, 1, (15, 15)) > 0.6,
                       rng.uniform(0.2, 1.0, (15, 15)), 0.0).astype(np.float32)
        field = curvature_centers(cov[:, :, None], window=11)
        ys, xs = np.nonzero(cov > 0)
        for y, x in zip(ys, xs):
            ny, nx = np.nonzero(cov[max(0, y - 5):y + 6, max(0, x - 5):x + 6] > 0)
            pts = np.stack([nx + max(0, x - 5) - x, ny + max(0, y - 5) - y],
                           axis=1).astype(np.float64)
            w = cov[ny + max(0, y - 5), nx + max(0, x - 5)]
            center, cond = fit_circle(pts, w)
            degenerate = len(pts) < 3 or not math.isfinite(cond) or cond > 1e8
            assert degenerate == field.degenerate[y, x]
            if not degenerate:
                np.testing.assert_allclose(center + (x, y), field.center[y, x],
                                           atol=1e-6)


class TestCurvatureField:
    def test_single_row_is_degenerate(self):
        cov = np.zeros((9, 9, 1), dtype=np.float32)
        cov[4, 1:8, 0] = 1.0
        field = curvature_centers(cov)
        assert np.all(field.degenerate[4, 1:8])

    def test_exact_diagonal_is_degenerate(self):
        cov = np.zeros((11, 11, 1), dtype=np.float32)
        for i in range(1, 10):
            cov[i, i, 0] = 1.0
        field = curvature_centers(cov)
        assert np.all(field.degenerate[np.arange(1, 10), np.arange(1, 10)])

    def test_isolated_pixel_degenerate(self):
        cov = np.zeros((7, 7, 1), dtype=np.float32)
        cov[3, 3, 0] = 1.0
        assert curvature_centers(cov).degenerate[3, 3]

    def test_window_must_be_odd(self):
        with pytest.raises(ValueError):
            curvature_centers(np.zeros((4, 4, 1)), window=10)

    def test_discriminates_parallel_strands(self):
        # two horizontal strands 5 px apart; the center of a pixel's window
        # fit should match same-strand neighbors better than the other strand
        cov = np.zeros((16, 16, 1), dtype=np.float32)
        cov[5, 2:14, 0] = 1.0
        cov[5, 2:14, 0] = 1.0
        cov[4, 2:14, 0] = 0.4  # slight thickness bends the fits consistently
        cov[10, 2:14, 0] = 1.0
        cov[11, 2:14, 0] = 0.4
        field = curvature_centers(cov)
        ok = ~field.degenerate
        if ok[5, 7] and ok[5, 8] and ok[10, 8]:
            same = np.linalg.norm(field.center[5, 7] - field.center[5, 8])
            other = np.linalg.norm(field.center[5, 7] - field.center[10, 8])
            assert same < other


class TestProjectTangent:
    def test_axis_aligned(self):
        cam = _front_camera()
        direction, degenerate = project_tangent((1.0, 0, 0), (0, 0, 0), cam)
        assert not degenerate
        assert abs(abs(direction[0]) - 1.0) < 1e-9
        assert abs(direction[1]) < 1e-9

    def test_world_up_maps_to_screen_up(self):
        cam = _front_camera()
        direction, _ = project_tangent((0, 1.0, 0), (0, 0, 0), cam)
        assert direction[1] < -0.99  # screen y grows downward

    def test_view_parallel_degenerate(self):
        cam = _front_camera()
        _, degenerate = project_tangent((0, 0, 1.0), (0, 0, 0), cam)
        assert degenerate

    def test_matches_finite_difference(self, rng):
        cam = _front_camera()
        tangents = rng.normal(size=(64, 3))
        tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)
        positions = rng.uniform(-0.8, 0.8, size=(64, 3))
        dirs, degenerate = project_tangents(tangents, positions, cam)
        for i in range(64):
            if degenerate[i]:
                continue
            _, _, depth = cam.project(positions[i])
            delta = 1e-4 * depth
            sx0, sy0, _ = cam.project(positions[i])
            sx1, sy1, _ = cam.project(positions[i] + delta * tangents[i])
            fd = np.array([sx1 - sx0, sy1 - sy0])
            norm = np.linalg.norm(fd)
            if norm < 1e-9:
                continue
            fd /= norm
            angle = math.acos(min(1.0, abs(float(fd @ dirs[i]))))
            assert angle < 1e-3


class TestVotePool:
    def test_capacity_bound(self):
        pool = VotePool(3)
        for i in range(10):
            pool.insert(np.zeros(3), depth=float(i))
        assert len(pool.entries) == 3

    def test_keeps_smallest_depths(self, rng):
        pool = VotePool(4)
        depths = rng.uniform(0, 10, size=40)
        for d in depths:
            pool.insert(np.zeros(3), float(d))
        kept = sorted(e[0] for e in pool.entries)
        assert kept == sorted(depths.tolist())[:4]

    def test_eviction_always_removes_pool_maximum(self, rng):
        pool = VotePool(4)
        for d in rng.uniform(0, 10, size=60):
            before = [e[0] for e in pool.entries]
            n_evicted = len(pool.evicted)
            pool.insert(np.zeros(3), float(d))
            if len(pool.evicted) > n_evicted:
                evicted = pool.evicted[-1]
                assert evicted >= max(before + [float(d)]) - 1e-12 or \
                    evicted == max(before)

    def test_frontmost_prefers_first_inserted_on_tie(self):
        pool = VotePool(4)
        a, b = np.array([1.0, 0, 0]), np.array([2.0, 0, 0])
        pool.insert(a, 1.0)
        pool.insert(b, 1.0)
        assert pool.frontmost()[2] is a

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0.1, 100.0), min_size=1, max_size=30),
           st.integers(1, 6))
    def test_pool_invariants_hold_for_any_stream(self, depths, capacity):
        pool = VotePool(capacity)
        for d in depths:
            pool.insert(None, d)
            assert len(pool.entries) <= capacity
        stored_max = max(e[0] for e in pool.entries)
        assert all(d >= stored_max - 1e-9 or d in [e[0] for e in pool.entries]
                   for d in pool.evicted)


def _state(classes, positions, tangents, depth):
    return _WorkState(classes=classes.astype(np.int8),
                      positions=positions.astype(np.float64),
                      tangents=tangents.astype(np.float64),
                      depth=depth.astype(np.float64))


class TestBackwardRepair:
    def test_no_invalid_pixels_is_a_no_op(self, rng):
        cam = _front_camera()
        classes = np.full((4, 4), HAIR_VALID, dtype=np.int8)
        positions = rng.normal(size=(4, 4, 3))
        state = _state(classes, positions.copy(), rng.normal(size=(4, 4, 3)),
                       np.full((4, 4), 4.0))
        field = CurvatureField(center=np.zeros((4, 4, 2)),
                               degenerate=np.ones((4, 4), dtype=bool))
        n = backward_repair(state, field, np.full((4, 4), 0.1), cam)
        assert n == 0
        np.testing.assert_array_equal(state.positions, positions)

    def test_single_candidate_pinned_step(self):
        # spec-pinned arithmetic: valid neighbor at P=(1,0,0), step 0.1,
        # target tangent +y, positive orientation -> (1, 0.1, 0)
        cam = Camera.look_at((1, 0, 5), (1, 0, 0), (0, 1, 0), 40.0, 32, 32)
        classes = np.full((32, 32), BACKGROUND, dtype=np.int8)
        classes[16, 16] = HAIR_VALID
        classes[15, 16] = HAIR_INVALID
        positions = np.zeros((32, 32, 3))
        positions[16, 16] = (1.0, 0.0, 0.0)
        tangents = np.zeros((32, 32, 3))
        tangents[15, 16] = (0.0, 1.0, 0.0)
        steps = np.zeros((32, 32))
        steps[15, 16] = 0.1
        state = _state(classes, positions, tangents, np.full((32, 32), 5.0))
        field = CurvatureField(center=np.zeros((32, 32, 2)),
                               degenerate=np.ones((32, 32), dtype=bool))
        n = backward_repair(state, field, steps, cam)
        assert n == 1
        np.testing.assert_allclose(state.positions[15, 16], (1.0, 0.1, 0.0),
                                   atol=1e-12)
        assert state.classes[15, 16] == HAIR_VALID

    def test_helix_raster_with_deleted_positions(self):
        scene = StrandScene(strands=[
            Strand.helix((0, -0.9, 0), (0, 1, 0), radius=0.6, pitch=0.6,
                         turns=2.5, width=0.07)])
        cam = _front_camera(32, 32)
        jitter = JitterSequence.halton23()
        g = rasterize(scene, cam, 8, jitter, 0)
        rng = np.random.default_rng(11)
        classes = classify_pixels(g.position.data, g.coverage.data, 1e-6)
        valid_ys, valid_xs = np.nonzero(classes == HAIR_VALID)
        kill = rng.uniform(size=len(valid_ys)) < 0.3
        position = g.position.data.copy()
        depth = g.depth.data.copy()
        position[valid_ys[kill], valid_xs[kill]] = 0.0
        depth[valid_ys[kill], valid_xs[kill]] = 0.0
        damaged = GBuffer(coverage=g.coverage, tangent=g.tangent,
                          position=TensorImage(position),
                          depth=TensorImage(depth), motion=g.motion)
        # dense tangents stand in for the neural reconstruction
        result = reconstruct_positions(damaged, g.coverage.data,
                                       g.tangent.data, cam)
        ys, xs = valid_ys[kill], valid_xs[kill]
        repaired = result.position[ys, xs].astype(np.float64)
        curve, _ = scene.strands[0].evaluate(np.linspace(0, 1, 8192))
        dmin = np.linalg.norm(curve[None, :, :] - repaired[:, None, :],
                              axis=2).min(axis=1)
        allowed = 2.0 * step_size(g.depth.data[ys, xs, 0].astype(np.float64), cam)
        assert np.mean(dmin <= allowed) >= 0.9


class TestForwardVoting:
    def _voting_state(self):
        classes = np.full((8, 8), BACKGROUND, dtype=np.int8)
        positions = np.zeros((8, 8, 3))
        tangents = np.zeros((8, 8, 3))
        depth = np.full((8, 8), 4.0)
        return classes, positions, tangents, depth

    def test_diagonal_vote_rejected_at_30_degrees(self):
        cam = _front_camera(8, 8)
        classes, positions, tangents, depth = self._voting_state()
        classes[4, 4] = HAIR_VALID
        classes[3, 5] = HAIR_INVALID  # 45 degrees off a horizontal tangent
        positions[4, 4] = (0.1, 0, 0)
        tangents[4, 4] = (1.0, 0, 0)
        state = _state(classes, positions, tangents, depth)
        dirs = np.zeros((8, 8, 2))
        dirs[4, 4] = (1.0, 0.0)
        degenerate = np.ones((8, 8), dtype=bool)
        degenerate[4, 4] = False
        log = []
        n = forward_voting(state, dirs, degenerate, np.full((8, 8), 0.1), cam,
                           theta_max_deg=30.0, k_votes=4, vote_log=log)
        assert n == 0
        assert log and log[0][0] == "reject"
        assert state.classes[3, 5] == HAIR_INVALID

    def test_aligned_vote_accepted(self):
        cam = _front_camera(8, 8)
        classes, positions, tangents, depth = self._voting_state()
        classes[4, 4] = HAIR_VALID
        classes[4, 5] = HAIR_INVALID
        positions[4, 4] = (0.1, 0, 0)
        tangents[4, 4] = (1.0, 0, 0)
        state = _state(classes, positions, tangents, depth)
        dirs = np.zeros((8, 8, 2))
        dirs[4, 4] = (1.0, 0.0)
        degenerate = np.ones((8, 8), dtype=bool)
        degenerate[4, 4] = False
        log = []
        n = forward_voting(state, dirs, degenerate, np.full((8, 8), 0.1), cam,
                           theta_max_deg=30.0, k_votes=4, vote_log=log)
        assert n == 1
        assert state.classes[4, 5] == HAIR_VALID
        assert all(abs(entry[3]) >= math.cos(math.radians(30.0))
                   for entry in log if entry[0] == "accept")

    def test_frontmost_candidate_wins(self):
        cam = _front_camera(8, 8)
        classes, positions, tangents, depth = self._voting_state()
        # two sources on either side, different depths (z toward camera)
        classes[4, 3] = classes[4, 5] = HAIR_VALID
        classes[4, 4] = HAIR_INVALID
        positions[4, 3] = (-0.1, 0, 2.0)   # depth 2
        positions[4, 5] = (0.1, 0, 3.0)    # depth 1
        tangents[4, 3] = (1.0, 0, 0)
        tangents[4, 5] = (1.0, 0, 0)
        depth[4, 3], depth[4, 5] = 2.0, 1.0
        state = _state(classes, positions, tangents, depth)
        dirs = np.zeros((8, 8, 2))
        dirs[4, 3] = dirs[4, 5] = (1.0, 0.0)
        degenerate = np.ones((8, 8), dtype=bool)
        degenerate[4, 3] = degenerate[4, 5] = False
        forward_voting(state, dirs, degenerate, np.full((8, 8), 0.02), cam,
                       theta_max_deg=30.0, k_votes=4)
        assert state.classes[4, 4] == HAIR_VALID
        assert abs(state.positions[4, 4][2] - 3.0) < 0.1  # from the near source

    def test_crossing_resolves_to_front_strand(self):
        front = Strand.line((-1.2, -1.2, 1.0), (1.2, 1.2, 1.0), width=0.1)
        back = Strand.line((-1.2, 1.2, -1.0), (1.2, -1.2, -1.0), width=0.1)
        scene = StrandScene(strands=[back, front])
        cam = _front_camera(32, 32)
        g = rasterize(scene, cam, 16, JitterSequence.halton23(), 0)
        clean_depth = g.depth.data[:, :, 0].copy()
        front_depth = float(cam.view_depth(np.array([0, 0, 1.0])))
        # delete all positions within 2.5 px of the screen crossing point
        sx, sy, _ = cam.project(np.zeros(3))
        ys, xs = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
        disc = (np.hypot(xs + 0.5 - sx, ys + 0.5 - sy) < 2.5) & (clean_depth > 0)
        position = g.position.data.copy()
        depth = g.depth.data.copy()
        position[disc] = 0.0
        depth[disc[:, :, None]] = 0.0
        damaged = GBuffer(coverage=g.coverage, tangent=g.tangent,
                          position=TensorImage(position),
                          depth=TensorImage(depth), motion=g.motion)
        result = reconstruct_positions(damaged, g.coverage.data, g.tangent.data,
                                       cam)
        was_front = disc & (np.abs(clean_depth - front_depth) < 0.2)
        assert was_front.sum() >= 3
        repaired_depth = cam.view_depth(
            result.position[was_front].astype(np.float64))
        assert np.all(np.abs(repaired_depth - front_depth) < 0.5)


class TestReconstructPositions:
    def _scene_buffers(self, seed=0, spp=1):
        from hairgbuf.strands import demo_scene
        scene = demo_scene("helix", seed)
        cam = scene.camera(0, 32, 32)
        g = rasterize(scene, cam, spp, JitterSequence.halton23(), 0)
        return scene, cam, g

    def test_fully_valid_input_untouched(self):
        scene, cam, g = self._scene_buffers(seed=2, spp=8)
        result = reconstruct_positions(g, g.coverage.data, g.tangent.data, cam)
        np.testing.assert_array_equal(result.position, g.position.data)
        assert result.repaired_px == 0 and result.fallback_px == 0

    def test_completion_and_non_destructiveness(self):
        scene, cam, g = self._scene_buffers(seed=5, spp=1)
        classes = classify_pixels(g.position.data, g.coverage.data, 1e-6)
        assert (classes == HAIR_INVALID).any()
        result = reconstruct_positions(g, g.coverage.data, g.tangent.data, cam)
        hair = g.coverage.data[:, :, 0] > 0
        assert np.all(np.linalg.norm(result.position[hair], axis=1) > 0)
        valid = classes == HAIR_VALID
        assert np.array_equal(result.position[valid], g.position.data[valid])

    def test_deterministic(self):
        scene, cam, g = self._scene_buffers(seed=7, spp=1)
        a = reconstruct_positions(g, g.coverage.data, g.tangent.data, cam)
        b = reconstruct_positions(g, g.coverage.data, g.tangent.data, cam)
        np.testing.assert_array_equal(a.position, b.position)
        np.testing.assert_array_equal(a.depth, b.depth)

    def test_empty_scene_early_exit(self):
        g = GBuffer(coverage=TensorImage.zeros(8, 8, 1),
                    tangent=TensorImage.zeros(8, 8, 3),
                    position=TensorImage.zeros(8, 8, 3),
                    depth=TensorImage.zeros(8, 8, 1),
                    motion=TensorImage.zeros(8, 8, 2))
        result = reconstruct_positions(g, g.coverage.data, g.tangent.data,
                                       _front_camera(8, 8))
        assert result.hair_px == 0 and result.repaired_px == 0

    def test_beats_nearest_fill_on_sample_seeds(self):
        wins = 0
        for seed in (0, 4, 6):
            scene, cam, g = self._scene_buffers(seed=seed, spp=1)
            classes = classify_pixels(g.position.data, g.coverage.data, 1e-6)
            ref = rasterize(scene, cam, 128, JitterSequence.halton23(), 0)
            ref_valid = np.linalg.norm(ref.position.data, axis=2) > 1e-6
            mask = (classes == HAIR_INVALID) & ref_valid
            if not mask.any():
                continue
            result = reconstruct_positions(g, g.coverage.data, g.tangent.data,
                                           cam)
            nn = nearest_fill_positions(g.position.data.astype(np.float64),
                                        classes)
            err_mine = np.linalg.norm(
                (result.position - ref.position.data)[mask], axis=1)
            err_nn = np.linalg.norm((nn - ref.position.data)[mask], axis=1)
            wins += float(np.sqrt(np.mean(err_mine ** 2))) \
                < float(np.sqrt(np.mean(err_nn ** 2)))
        assert wins >= 2
