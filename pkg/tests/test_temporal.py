import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapvec.relation import layer_norm
from mapvec.synth import ScenarioConfig, generate_bev, generate_gt
from mapvec.temporal import (BevGrid, FusionWeights, GruWeights, KfsState, Pose2,
                             ResBlockWeights, conv2d, global_fusion_stacking,
                             global_fusion_streaming, gru_fuse, keyframe_step, local_fusion,
                             relative_pose, res_block, run_fusion, warp, warp_to)

angles = st.floats(-10, 10)
shifts = st.floats(-20, 20)


def naive_conv(x, weight, bias=None):
    h, w, _ = x.shape
    k = weight.shape[0]
    out = np.zeros((h, w, weight.shape[3]))
    for r in range(h):
        for c in range(w):
            for dy in range(k):
                for dx in range(k):
                    rr, cc = r + dy - k // 2, c + dx - k // 2
                    if 0 <= rr < h and 0 <= cc < w:
                        out[r, c] += x[rr, cc] @ weight[dy, dx]
    return out if bias is None else out + bias


def smooth_field(h, w, cell):
    ys = (np.arange(h) + 0.5 - h / 2) * cell
    xs = (np.arange(w) + 0.5 - w / 2) * cell
    gx, gy = np.meshgrid(xs, ys)
    return (np.sin(gx / 4.0) + np.cos(gy / 5.0) + 0.5 * np.sin((gx + gy) / 7.0))[..., None]


def stationary_grids(n, shape=(12, 8, 3), seed=0):
    data = np.random.default_rng(seed).normal(size=shape)
    return [BevGrid(data, 0.5, Pose2(), float(t)) for t in range(n)]


def moving_grids(step, n, shape=(10, 6, 2)):
    data = np.random.default_rng(1).normal(size=shape)
    return [BevGrid(data, 0.5, Pose2(0.0, step * t, 0.0), 0.5 * t) for t in range(n)]


class TestPose:
    @given(angles)
    def test_yaw_normalized(self, yaw):
        p = Pose2(0, 0, yaw)
        assert -math.pi < p.yaw <= math.pi
        assert math.isclose(math.cos(p.yaw), math.cos(yaw), abs_tol=1e-9)

    def test_pi_kept(self):
        assert Pose2(0, 0, -math.pi).yaw == math.pi
        assert Pose2(0, 0, 0.3).yaw == 0.3

    @given(shifts, shifts, angles)
    def test_inverse_compose_identity(self, x, y, yaw):
        p = Pose2(x, y, yaw)
        e = p.compose(p.inverse())
        assert e.x == pytest.approx(0, abs=1e-9) and e.y == pytest.approx(0, abs=1e-9)
        assert math.sin(e.yaw) == pytest.approx(0, abs=1e-12)

    def test_relative_pose_maps_points(self):
        a, b = Pose2(1, 2, 0.3), Pose2(-4, 0.5, -1.1)
        pts = np.array([[0.5, 1.0], [3.0, -2.0]])
        world = a.apply(pts)
        np.testing.assert_allclose(relative_pose(a, b).apply(pts), b.inverse().apply(world),
                                   atol=1e-12)

    def test_non_finite(self):
        with pytest.raises(ValueError):
            Pose2(float("nan"), 0, 0)


class TestWarp:
    def test_identity_exact(self):
        g = BevGrid(np.random.default_rng(0).normal(size=(20, 10, 3)))
        assert np.array_equal(warp(g, Pose2()).data, g.data)

    def test_one_cell_shift_exact(self):
        data = np.random.default_rng(1).normal(size=(6, 5, 2))
        g = BevGrid(data, cell_size=0.3)
        out = warp(g, Pose2(0.3, 0.0, 0.0)).data
        # content moves one column towards +x; the vacated column is zero
        assert np.array_equal(out[:, 1:], data[:, :-1])
        assert np.all(out[:, 0] == 0)
        out = warp(g, Pose2(0.0, -0.3, 0.0)).data
        assert np.array_equal(out[:-1], data[1:])
        assert np.all(out[-1] == 0)

    def test_warp_to_ego_motion(self):
        data = np.random.default_rng(2).normal(size=(6, 4, 1))
        prev = BevGrid(data, 1.0, Pose2(0, 0, 0))
        out = warp_to(prev, Pose2(0, 1.0, 0))
        assert out.pose == Pose2(0, 1.0, 0)
        assert np.array_equal(out.data[:-1], data[1:])

    def test_round_trip_smooth_field(self):
        g = BevGrid(smooth_field(200, 100, 0.3), 0.3)
        rel = Pose2(1.37, -2.11, 0.2)
        back = warp(warp(g, rel), rel.inverse()).data
        valid = warp(warp(BevGrid(np.ones_like(g.data), 0.3), rel), rel.inverse()).data
        interior = np.isclose(valid, 1.0, atol=1e-12)
        amp = np.ptp(g.data)
        assert interior.sum() > 0.5 * interior.size
        assert np.abs(back - g.data)[interior].max() < 0.05 * amp

    @settings(max_examples=40)
    @given(shifts, shifts, angles, st.integers(0, 100))
    def test_shape_and_finite(self, x, y, yaw, seed):
        g = BevGrid(np.random.default_rng(seed).normal(size=(9, 7, 2)), 0.5)
        out = warp(g, Pose2(x, y, yaw)).data
        assert out.shape == g.shape and np.all(np.isfinite(out))

    @settings(max_examples=60)
    @given(shifts, shifts, st.integers(0, 100))
    def test_translation_never_adds_mass(self, x, y, seed):
        data = np.random.default_rng(seed).random((9, 7, 2))
        out = warp(BevGrid(data, 0.5), Pose2(x, y, 0.0)).data
        assert out.sum() <= data.sum() * (1 + 1e-12)

    def test_rotation_can_concentrate_a_delta(self):
        # bilinear weights of a rotated lattice may sum above 1 for one source cell
        d = np.zeros((21, 21, 1))
        d[10, 10] = 1.0
        out = warp(BevGrid(d, 1.0), Pose2(0.25, 0.075, 0.785)).data
        assert out.sum() > 1.0
        smooth = BevGrid(smooth_field(60, 60, 1.0) + 3.0, 1.0)
        ratio = warp(smooth, Pose2(0, 0, 0.785)).data.sum() / smooth.data.sum()
        assert ratio <= 1.0


class TestBlocks:
    def test_conv_matches_naive(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5, 4, 3))
        for k in (1, 3):
            wgt = rng.normal(size=(k, k, 3, 2))
            b = rng.normal(size=2)
            np.testing.assert_allclose(conv2d(x, wgt, b), naive_conv(x, wgt, b), atol=1e-12)

    def test_conv_errors(self):
        with pytest.raises(ValueError):
            conv2d(np.zeros((3, 3, 2)), np.zeros((2, 2, 2, 1)))
        with pytest.raises(ValueError):
            conv2d(np.zeros((3, 3, 2)), np.zeros((1, 1, 3, 1)))

    def test_gru_closed_at_update_gate_zero(self):
        c = 3
        rng = np.random.default_rng(4)
        h, x = BevGrid(rng.normal(size=(4, 4, c))), BevGrid(rng.normal(size=(4, 4, c)))
        w = GruWeights.random(c, rng)
        w.bz = np.full(c, -50.0)
        assert np.abs(gru_fuse(h, x, w).data - h.data).max() < 1e-3

    def test_gru_open_passes_tanh_input(self):
        c = 2
        rng = np.random.default_rng(5)
        h, x = BevGrid(rng.normal(size=(4, 4, c))), BevGrid(rng.normal(size=(4, 4, c)))
        w = GruWeights.zeros(c)
        w.bz = np.full(c, 50.0)
        w.wh[0, 0, c:, :] = np.eye(c)
        np.testing.assert_allclose(gru_fuse(h, x, w).data, np.tanh(x.data), atol=1e-12)

    def test_gru_zero_weights_halves_hidden(self):
        rng = np.random.default_rng(6)
        h, x = BevGrid(rng.normal(size=(3, 3, 2))), BevGrid(rng.normal(size=(3, 3, 2)))
        np.testing.assert_allclose(gru_fuse(h, x, GruWeights.zeros(2)).data, 0.5 * h.data,
                                   atol=1e-15)

    @given(st.integers(0, 1000), st.sampled_from([1, 3]))
    def test_gru_output_bounded(self, seed, kernel):
        rng = np.random.default_rng(seed)
        h = BevGrid(rng.normal(0, 3, (5, 5, 2)))
        x = BevGrid(rng.normal(0, 3, (5, 5, 2)))
        out = gru_fuse(h, x, GruWeights.random(2, rng, kernel, scale=2.0)).data
        assert np.abs(out).max() <= max(np.abs(h.data).max(), 1.0) + 1e-12

    def test_gru_shape_mismatch(self):
        with pytest.raises(ValueError):
            gru_fuse(BevGrid.zeros(3, 3, 2), BevGrid.zeros(3, 4, 2), GruWeights.zeros(2))

    def test_res_block_matches_naive(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(5, 4, 6))
        w = ResBlockWeights.random(6, 2, rng, scale=1.0)
        ref = naive_conv(np.maximum(naive_conv(x, w.w1, w.b1), 0), w.w2, w.b2)
        ref += naive_conv(x, w.shortcut)
        np.testing.assert_allclose(res_block(x, w), ref, atol=1e-12)

    def test_res_block_identity(self):
        x = np.random.default_rng(8).normal(size=(4, 4, 3))
        assert np.array_equal(res_block(x, ResBlockWeights.identity(3)), x)


class TestLocalFusion:
    def test_first_frame_zero_hidden(self):
        rng = np.random.default_rng(9)
        w = FusionWeights.random(3, rng)
        f = stationary_grids(1)[0]
        state = KfsState()
        out = local_fusion(state, f, w).data
        zero = f.like(np.zeros_like(f.data))
        ref = res_block(layer_norm(gru_fuse(zero, f, w.local_gru).data), w.local_res)
        np.testing.assert_allclose(out, ref, atol=1e-14)
        assert state.submap.data is out

    def test_identity_blocks_give_gru(self):
        rng = np.random.default_rng(10)
        w = FusionWeights.random(3, rng)
        w.local_res = ResBlockWeights.identity(3)
        w.use_layer_norm = False
        f = stationary_grids(1)[0]
        out = local_fusion(KfsState(), f, w).data
        zero = f.like(np.zeros_like(f.data))
        assert np.array_equal(out, gru_fuse(zero, f, w.local_gru).data)

    def test_requires_newer_frame(self):
        w = FusionWeights.random(3, np.random.default_rng(0))
        g = stationary_grids(1)[0]
        state = KfsState()
        local_fusion(state, g, w)
        with pytest.raises(ValueError):
            local_fusion(state, g, w)

    def test_stationary_convergence_default_fixture(self):
        cfg = ScenarioConfig()
        bev = generate_bev(generate_gt(cfg)[0], cfg)
        grids = [BevGrid(bev.data, bev.cell_size, Pose2(), float(t)) for t in range(20)]
        w = FusionWeights.random(cfg.bev_channels, np.random.default_rng(0))
        steps = run_fusion(grids, w)
        res = [np.abs(steps[t].submap.data - steps[t - 1].submap.data).max()
               for t in range(1, 20)]
        assert all(b < a for a, b in zip(res[2:], res[3:]))


class TestKeyframes:
    def schedule(self, step, n, d_stride=5.0):
        state = KfsState(d_stride=d_stride)
        return [t for t in range(n) if keyframe_step(state, Pose2(0, step * t, 0))]

    def test_examples(self):
        assert self.schedule(5.0, 6) == [0, 1, 2, 3, 4, 5]
        assert self.schedule(2.0, 10) == [0, 3, 6, 9]
        assert self.schedule(0.0, 6) == [0]

    def test_cumulative_path_not_displacement(self):
        state = KfsState(d_stride=5.0)
        poses = [Pose2(0, 0), Pose2(3, 0), Pose2(0, 0), Pose2(3, 0)]
        assert [keyframe_step(state, p) for p in poses] == [True, False, True, False]

    @given(st.floats(0.1, 100), st.lists(st.floats(0, 4), min_size=1, max_size=15))
    def test_independent_of_timestamps(self, scale, steps):
        ys = np.cumsum([0.0] + steps)
        w = FusionWeights.random(2, np.random.default_rng(0), n_pre=2)
        keys = []
        for dt in (1.0, scale):
            grids = [BevGrid(np.zeros((4, 3, 2)), 0.5, Pose2(0, float(y), 0), dt * (t + 1))
                     for t, y in enumerate(ys)]
            keys.append([s.index for s in run_fusion(grids, w, n_pre=2) if s.keyframe])
        assert keys[0] == keys[1]

    def test_modes_share_schedule(self):
        w = FusionWeights.random(2, np.random.default_rng(0))
        grids = moving_grids(2.0, 8)
        a = [s.keyframe for s in run_fusion(grids, w, "streaming")]
        b = [s.keyframe for s in run_fusion(grids, w, "stacking")]
        assert a == b == [t % 3 == 0 for t in range(8)]

    def test_buffer_bounded(self):
        w = FusionWeights.random(2, np.random.default_rng(0), n_pre=2)
        state = KfsState(n_pre=2, d_stride=0.5)
        for g in moving_grids(1.0, 6):
            local_fusion(state, g, w)
            keyframe_step(state, g.pose)
            assert len(state.keyframe_buffer) <= 2

    def test_random_scheduler_seeded(self):
        w = FusionWeights.random(2, np.random.default_rng(0))
        grids = moving_grids(1.0, 20)
        a = [s.keyframe for s in run_fusion(grids, w, scheduler="random", seed=4)]
        b = [s.keyframe for s in run_fusion(grids, w, scheduler="random", seed=4)]
        assert a == b and a[0]
        with pytest.raises(ValueError):
            KfsState(scheduler="random")


class TestGlobalFusion:
    def test_streaming_first_keyframe(self):
        w = FusionWeights.random(3, np.random.default_rng(12))
        state = KfsState()
        f = stationary_grids(1)[0]
        local_fusion(state, f, w)
        out = global_fusion_streaming(state, w).data
        sub = state.submap
        ref = layer_norm(gru_fuse(sub.like(np.zeros_like(sub.data)), sub, w.global_gru).data)
        np.testing.assert_allclose(out, ref, atol=1e-14)
        assert state.global_feature is not None

    def test_layer_norm_statistics(self):
        x = np.random.default_rng(13).normal(3, 5, (6, 5, 8))
        y = layer_norm(x)
        np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=-1), 1, atol=1e-3)

    def test_streaming_stationary_convergence(self):
        w = FusionWeights.random(3, np.random.default_rng(14))
        steps = run_fusion(stationary_grids(12), w, "streaming")
        res = [np.abs(steps[t].global_feature.data - steps[t - 1].global_feature.data).max()
               for t in range(1, 12)]
        assert res[-1] < 0.2 * res[0]

    def stacking_state(self, c, n_pre, buffer, cur):
        state = KfsState(n_pre=n_pre)
        state.keyframe_buffer.extend(buffer)
        state.submap = cur
        return state

    def test_stacking_empty_buffer_pass_through(self):
        c, n_pre = 3, 4
        cur = stationary_grids(1, (5, 4, c))[0]
        w = FusionWeights.random(c, np.random.default_rng(0), n_pre=n_pre)
        w.stack_res = ResBlockWeights(np.zeros((3, 3, 5 * c, c)), np.zeros(c),
                                      np.zeros((3, 3, c, c)), np.zeros(c),
                                      np.eye(5 * c)[:, -c:].reshape(1, 1, 5 * c, c))
        out = global_fusion_stacking(self.stacking_state(c, n_pre, [], cur), w)
        assert np.array_equal(out.data, cur.data)

    def test_stacking_average_of_identical(self):
        c, n_pre = 2, 4
        data = np.abs(np.random.default_rng(1).normal(size=(5, 4, c)))
        grids = [BevGrid(data, 0.5, Pose2(), float(t)) for t in range(5)]
        w = FusionWeights.random(c, np.random.default_rng(0), n_pre=n_pre)
        w1 = np.zeros((3, 3, 5 * c, c))
        w1[1, 1] = np.tile(np.eye(c), (5, 1)) / 5
        w2 = np.zeros((3, 3, c, c))
        w2[1, 1] = np.eye(c)
        w.stack_res = ResBlockWeights(w1, np.zeros(c), w2, np.zeros(c),
                                      np.zeros((1, 1, 5 * c, c)))
        out = global_fusion_stacking(self.stacking_state(c, n_pre, grids[:4], grids[4]), w)
        np.testing.assert_allclose(out.data, data, atol=1e-14)

    def test_stacking_two_keyframes_reference(self):
        c, n_pre = 2, 3
        rng = np.random.default_rng(15)
        subs = [BevGrid(rng.normal(size=(6, 5, c)), 1.0, Pose2(0, float(t), 0), float(t))
                for t in range(3)]
        w = FusionWeights.random(c, rng, n_pre=n_pre)
        w.stack_res = ResBlockWeights.random((n_pre + 1) * c, c, rng, scale=1.0)
        out = global_fusion_stacking(self.stacking_state(c, n_pre, subs[:2], subs[2]), w).data

        def shift_rows(a, k):
            # ego moved +k cells along y: target row r reads source row r + k
            s = np.zeros_like(a)
            s[:len(a) - k] = a[k:]
            return s
        stacked = np.concatenate([np.zeros((6, 5, c)), shift_rows(subs[0].data, 2),
                                  shift_rows(subs[1].data, 1), subs[2].data], axis=-1)
        r = w.stack_res
        ref = naive_conv(np.maximum(naive_conv(stacked, r.w1, r.b1), 0), r.w2, r.b2)
        ref += naive_conv(stacked, r.shortcut)
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_stacking_buffer_excludes_current(self):
        w = FusionWeights.random(2, np.random.default_rng(0), n_pre=2)
        steps = run_fusion(moving_grids(5.0, 2), w, "stacking", n_pre=2)
        assert [s.keyframe for s in steps] == [True, True]

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            run_fusion(stationary_grids(2), FusionWeights.random(3, np.random.default_rng(0)),
                       "pooling")
