import numpy as np
import pytest

from conftest import make_frame, random_snapshots
from naive_raster import naive_render
from vibsplat.cameras import CameraExtrinsics, CameraIntrinsics, CameraFrame
from vibsplat.cubemap import CubeMap
from vibsplat.points import PointCloud, SceneConfig, SnapshotSet, snapshot_at
from vibsplat.rasterizer import (RenderOptions, colorize_velocity, cull_and_bin,
                                 render, render_snapshots, sky_jitter_offsets)

OPTS64 = RenderOptions(dtype=np.float64)


def one_splat(u, v, z=2.0, sigma_px=2.0, alpha0=0.5, color=(1.0, 0.0, 0.0),
              intr=None, vel=(0.0, 0.0, 0.0)):
    intr = intr or CameraIntrinsics(20.0, 20.0, 8.0, 8.0, 16, 16)
    center = np.array([[(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z]])
    return SnapshotSet(
        center=center,
        rot=np.array([[1.0, 0.0, 0.0, 0.0]]),
        # subtract the low-pass floor so the effective footprint is exact
        scale=np.full((1, 3), np.sqrt(max(sigma_px ** 2 - 0.3, 1e-6)) * z / intr.fx),
        alpha0=np.array([alpha0]),
        color=np.array([color], dtype=np.float64),
        avg_vel=np.array([vel], dtype=np.float64),
    ), intr


class TestCompositing:
    def test_single_fragment_at_mean(self):
        snaps, intr = one_splat(8.5, 8.5, alpha0=0.5)
        frame = make_frame(16, 16, 20.0)
        cube = CubeMap.constant(4, 0.0)
        out = render_snapshots(snaps, cube, frame, OPTS64)
        np.testing.assert_allclose(out.foreground[8, 8], [0.5, 0.0, 0.0], rtol=1e-12)
        np.testing.assert_allclose(out.opacity[8, 8], 0.5, rtol=1e-12)

    def test_two_fragments_front_to_back(self):
        front, intr = one_splat(8.5, 8.5, z=2.0, alpha0=0.5, color=(1, 0, 0))
        back, _ = one_splat(8.5, 8.5, z=4.0, alpha0=0.5, color=(0, 1, 0))
        back.scale[:] = front.scale * 2.0  # same pixel footprint at double depth
        snaps = SnapshotSet(
            center=np.concatenate([front.center, back.center]),
            rot=np.concatenate([front.rot, back.rot]),
            scale=np.concatenate([front.scale, back.scale]),
            alpha0=np.concatenate([front.alpha0, back.alpha0]),
            color=np.concatenate([front.color, back.color]),
            avg_vel=np.zeros((2, 3)),
        )
        frame = make_frame(16, 16, 20.0)
        out = render_snapshots(snaps, CubeMap.constant(4, 0.0), frame, OPTS64)
        np.testing.assert_allclose(out.foreground[8, 8], [0.5, 0.25, 0.0], rtol=1e-9)
        np.testing.assert_allclose(out.opacity[8, 8], 0.75, rtol=1e-9)

    def test_single_fragment_depth_is_z(self):
        snaps, _ = one_splat(8.5, 8.5, z=3.7, alpha0=0.4)
        frame = make_frame(16, 16, 20.0)
        out = render_snapshots(snaps, CubeMap.constant(4, 0.0), frame, OPTS64)
        covered = out.opacity > 1e-9
        np.testing.assert_allclose(out.depth[covered], 3.7, rtol=1e-12)

    def test_empty_scene_is_sky_only(self):
        snaps = SnapshotSet(center=np.zeros((0, 3)), rot=np.zeros((0, 4)),
                            scale=np.zeros((0, 3)), alpha0=np.zeros(0),
                            color=np.zeros((0, 3)), avg_vel=np.zeros((0, 3)))
        cube = CubeMap.constant(4, [0.3, 0.5, 0.7])
        out = render_snapshots(snaps, cube, make_frame(16, 16, 20.0), OPTS64)
        np.testing.assert_array_equal(out.opacity, 0.0)
        np.testing.assert_allclose(out.color, np.broadcast_to([0.3, 0.5, 0.7],
                                                              out.color.shape), rtol=1e-12)

    def test_opacity_within_unit_interval(self):
        rng = np.random.default_rng(0)
        snaps = random_snapshots(rng, 64, 16, 16, 20.0)
        out = render_snapshots(snaps, CubeMap.constant(4, 0.5),
                               make_frame(16, 16, 20.0), OPTS64)
        assert out.opacity.min() >= 0.0
        assert out.opacity.max() <= 1.0

    def test_sky_partition_exact(self):
        rng = np.random.default_rng(1)
        snaps = random_snapshots(rng, 20, 16, 16, 20.0)
        cube = CubeMap(rng.uniform(0.0, 1.0, (6, 8, 8, 3)))
        out = render_snapshots(snaps, cube, make_frame(16, 16, 20.0), OPTS64)
        np.testing.assert_array_equal(
            out.color, out.foreground + (1.0 - out.opacity)[..., None] * out.sky)


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(8))
    def test_matches_naive_per_pixel_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 64))
        w, h = int(rng.integers(4, 17)), int(rng.integers(4, 17))
        focal = 1.4 * max(w, h)
        snaps = random_snapshots(rng, n, w, h, focal)
        cube = CubeMap(rng.uniform(0.0, 1.0, (6, 8, 8, 3)))
        frame = make_frame(w, h, focal)
        out = render_snapshots(snaps, cube, frame, OPTS64)
        color, fg, opac, depth, vel = naive_render(snaps, cube, frame)
        np.testing.assert_allclose(out.color, color, atol=1e-6)
        np.testing.assert_allclose(out.foreground, fg, atol=1e-6)
        np.testing.assert_allclose(out.opacity, opac, atol=1e-6)
        np.testing.assert_allclose(out.depth, depth, atol=1e-6)
        np.testing.assert_allclose(out.velocity, vel, atol=1e-6)


class TestCullAndBin:
    def test_empty_input(self):
        snaps = SnapshotSet(center=np.zeros((0, 3)), rot=np.zeros((0, 4)),
                            scale=np.zeros((0, 3)), alpha0=np.zeros(0),
                            color=np.zeros((0, 3)), avg_vel=np.zeros((0, 3)))
        keep, *_, tile_ids, frag_ids = cull_and_bin(snaps, make_frame(32, 16, 30.0), OPTS64)
        assert keep.size == 0 and tile_ids.size == 0

    def test_small_central_splat_single_tile(self):
        snaps, _ = one_splat(8.5, 8.5, sigma_px=0.8)
        keep, *_, tile_ids, frag_ids = cull_and_bin(snaps, make_frame(16, 16, 20.0), OPTS64)
        assert keep.size == 1
        assert np.unique(tile_ids).size == 1

    def test_boundary_splat_lands_in_both_tiles(self):
        # 32x16 image = two 16x16 tiles; a splat at the seam joins both.
        intr = CameraIntrinsics(30.0, 30.0, 16.0, 8.0, 32, 16)
        snaps, _ = one_splat(16.0, 8.0, sigma_px=2.0, intr=intr)
        frame = CameraFrame(intr, CameraExtrinsics.identity(), 0.0)
        keep, *_, tile_ids, frag_ids = cull_and_bin(snaps, frame, OPTS64)
        assert sorted(np.unique(tile_ids)) == [0, 1]

    def test_behind_camera_and_faint_dropped(self):
        intr = CameraIntrinsics(20.0, 20.0, 8.0, 8.0, 16, 16)
        snaps = SnapshotSet(
            center=np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 2.0]]),
            rot=np.tile([1.0, 0, 0, 0], (2, 1)),
            scale=np.full((2, 3), 0.1),
            alpha0=np.array([0.5, 1e-4]),   # second is below 1/255
            color=np.full((2, 3), 0.5),
            avg_vel=np.zeros((2, 3)),
        )
        keep, *_ = cull_and_bin(snaps, make_frame(16, 16, 20.0), OPTS64)
        assert keep.size == 0

    def test_offscreen_dropped(self):
        snaps, intr = one_splat(200.0, 8.5, sigma_px=1.0)
        keep, *_ = cull_and_bin(snaps, make_frame(16, 16, 20.0), OPTS64)
        assert keep.size == 0


class TestDeterminism:
    def test_bit_identical_across_runs(self):
        rng = np.random.default_rng(2)
        snaps = random_snapshots(rng, 40, 16, 16, 20.0)
        cube = CubeMap(rng.uniform(0.0, 1.0, (6, 8, 8, 3)))
        frame = make_frame(16, 16, 20.0)
        a = render_snapshots(snaps, cube, frame, OPTS64)
        b = render_snapshots(snaps, cube, frame, OPTS64)
        np.testing.assert_array_equal(a.color, b.color)
        np.testing.assert_array_equal(a.depth, b.depth)

    def test_periodic_static_scene(self, scene_cfg):
        rng = np.random.default_rng(3)
        pc = PointCloud.zeros(10)
        pc.mu[:, 2] = rng.uniform(2.0, 4.0, 10)
        pc.mu[:, :2] = rng.uniform(-0.5, 0.5, (10, 2))
        pc.vel[:] = rng.normal(scale=0.5, size=(10, 3))
        pc.tau[:] = rng.uniform(0, 0.2, 10)
        pc.log_scale[:] = np.log(0.08)
        # Long decay window: only the (periodic) vibration varies with time.
        pc.log_beta[:] = np.log(1e6 * scene_cfg.cycle_length)
        frame = make_frame(16, 16, 20.0, t=0.13)
        cube = CubeMap.constant(4, 0.2)
        a = render(pc, cube, frame, scene_cfg, opts=OPTS64, t=0.13)
        b = render(pc, cube, frame, scene_cfg, opts=OPTS64, t=0.13 + scene_cfg.cycle_length)
        np.testing.assert_allclose(a.color, b.color, atol=1e-9)

    def test_jitter_is_keyed_and_reproducible(self):
        a = sky_jitter_offsets(8, 8, seed=1, frame_index=3)
        b = sky_jitter_offsets(8, 8, seed=1, frame_index=3)
        c = sky_jitter_offsets(8, 8, seed=1, frame_index=4)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)
        assert np.all(np.abs(a) <= 0.5)

    def test_dt_zero_matches_snapshot_render(self, scene_cfg):
        rng = np.random.default_rng(4)
        pc = PointCloud.zeros(6)
        pc.mu[:, 2] = rng.uniform(2.0, 4.0, 6)
        pc.vel[:] = rng.normal(size=(6, 3))
        pc.tau[:] = rng.uniform(0, 0.3, 6)
        pc.log_scale[:] = np.log(0.1)
        frame = make_frame(12, 12, 15.0, t=0.2)
        cube = CubeMap.constant(4, 0.3)
        via_points = render(pc, cube, frame, scene_cfg, opts=OPTS64, dt=0.0)
        via_snaps = render_snapshots(snapshot_at(pc, 0.2, scene_cfg), cube, frame, OPTS64)
        np.testing.assert_array_equal(via_points.color, via_snaps.color)


class TestVelocityColor:
    def _output_with_velocity(self, vel):
        snaps, intr = one_splat(8.5, 8.5, alpha0=0.9, vel=vel)
        frame = make_frame(16, 16, 20.0)
        return render_snapshots(snaps, CubeMap.constant(4, 0.0), frame, OPTS64), frame

    def test_zero_velocity_renders_white(self):
        out, frame = self._output_with_velocity((0.0, 0.0, 0.0))
        img = colorize_velocity(out, frame)
        np.testing.assert_allclose(img, 1.0, atol=1e-12)

    def test_rightward_motion_is_reddish(self):
        out, frame = self._output_with_velocity((1.5, 0.0, 0.0))
        img = colorize_velocity(out, frame, max_speed=1.0)
        px = img[8, 8]
        assert px[0] > px[2] and px[0] > 0.9

    def test_saturation_scales_until_clamp(self):
        out1, frame = self._output_with_velocity((0.2, 0.0, 0.0))
        out2, _ = self._output_with_velocity((0.4, 0.0, 0.0))
        img1 = colorize_velocity(out1, frame, max_speed=10.0)
        img2 = colorize_velocity(out2, frame, max_speed=10.0)
        sat1 = 1.0 - img1[8, 8].min()
        sat2 = 1.0 - img2[8, 8].min()
        np.testing.assert_allclose(sat2, 2.0 * sat1, rtol=1e-6)
