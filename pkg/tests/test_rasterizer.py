import numpy as np
import pytest

from conftest import front_camera, random_scene
from oracles import mono_color_render
from texgs.rasterizer import (
    RenderOptions,
    cull_and_project,
    prepare_view,
    render,
    render_depth_and_weight_stats,
    shade,
)
from texgs.scene import Camera, SceneModel
from texgs.sh import SH_C0, eval_color, eval_opacity, sigmoid


def scene_of(positions, scales, color_dc, opacity_dc, color_degree=0, opacity_degree=0):
    n = len(positions)
    color = np.zeros((n, 3, (color_degree + 1) ** 2))
    color[:, :, 0] = np.asarray(color_dc, float) / SH_C0
    opac = np.zeros((n, (opacity_degree + 1) ** 2))
    opac[:, 0] = np.asarray(opacity_dc, float) / SH_C0
    rot = np.tile([1.0, 0, 0, 0], (n, 1))
    return SceneModel(positions, rot, np.log(np.asarray(scales, float)), color, opac,
                      color_degree, opacity_degree)


def centered_camera(size=15):
    # principal point on a pixel center so an on-axis splat has G = 1 there
    c = size / 2.0
    return Camera(size, size, 20.0, 20.0, c, c, np.eye(3), [0.0, 0.0, 5.0])


def dc_only(scene):
    s = scene.copy()
    s.color_sh[:, :, 1:] = 0.0
    s.opacity_sh[:, 1:] = 0.0
    return s


class TestCull:
    def test_behind_camera_absent(self):
        s = scene_of([[0, 0, -10.0], [0, 0, 0]], [[0.3] * 3] * 2, [[0.5] * 3] * 2, [1.0] * 2)
        proj = cull_and_project(s, centered_camera())
        assert list(proj.index) == [1]

    def test_on_axis_center(self):
        s = scene_of([[0, 0, 0.0]], [[0.3] * 3], [[0.5] * 3], [1.0])
        cam = centered_camera()
        rec = cull_and_project(s, cam)[0]
        np.testing.assert_allclose(rec.center, [cam.cx, cam.cy])
        assert rec.depth == pytest.approx(5.0)
        assert np.all(np.isfinite(rec.conic))

    def test_offscreen_removed(self):
        s = scene_of([[100.0, 0, 0]], [[0.1] * 3], [[0.5] * 3], [1.0])
        assert len(cull_and_project(s, centered_camera())) == 0

    def test_empty_scene(self):
        assert len(cull_and_project(SceneModel.empty(), centered_camera())) == 0
        fb = render(SceneModel.empty(), centered_camera(), background=(0.2, 0.4, 0.6))
        np.testing.assert_array_equal(np.asarray(fb.image)[3, 4], [0.2, 0.4, 0.6])

    def test_depth_sorted_with_index_tiebreak(self, rng):
        s = random_scene(rng, n=6)
        s.positions[:, 2] = np.array([0.5, 0.0, 0.5, -0.5, 0.0, 0.2])
        s.positions[:, :2] = 0.0
        proj = cull_and_project(s, centered_camera())
        assert list(proj.index) == [3, 1, 4, 5, 0, 2]


class TestCompositing:
    def test_single_saturated_splat(self):
        s = scene_of([[0, 0, 0.0]], [[0.5] * 3], [[0.2, 0.6, 0.9]], [30.0])
        cam = centered_camera()
        fb = render(s, cam)
        px = py = int(cam.cx)
        np.testing.assert_allclose(np.asarray(fb.image)[py, px], sigmoid(np.array([0.2, 0.6, 0.9])),
                                   atol=1e-9)
        assert fb.transmittance[py, px] < 1e-9

    def test_two_splats_half_and_opaque(self):
        # front w = 0.5 (opacity 0.5, G = 1), back opaque
        s = scene_of([[0, 0, -1.0], [0, 0, 1.0]], [[0.5] * 3] * 2,
                     [[0.9, 0.1, 0.1], [0.1, 0.1, 0.9]], [0.0, 30.0])
        cam = centered_camera()
        fb = render(s, cam, record_contributions=True)
        px = py = int(cam.cx)
        c1 = sigmoid(np.array([0.9, 0.1, 0.1]))
        c2 = sigmoid(np.array([0.1, 0.1, 0.9]))
        np.testing.assert_allclose(np.asarray(fb.image)[py, px], 0.5 * c1 + 0.5 * c2, atol=1e-9)
        ws = [c.weight for c in fb.contributions_at(px, py)]
        np.testing.assert_allclose(ws, [0.5, 0.5], atol=1e-9)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_degree_zero_matches_mono_oracle(self, seed):
        rng = np.random.default_rng(seed)
        s = dc_only(random_scene(rng, n=8, color_degree=3, opacity_degree=3))
        cam = front_camera(size=12)
        img = np.asarray(render(s, cam).image)
        ref = mono_color_render(s.positions, s.rotations, s.scales, s.color_sh[:, :, 0],
                                s.opacity_sh[:, 0], cam)
        assert np.max(np.abs(img - ref)) < 1e-6

    def test_mono_oracle_with_background(self, rng):
        s = dc_only(random_scene(rng, n=4))
        cam = front_camera(size=10)
        bg = (0.3, 0.7, 1.0)
        img = np.asarray(render(s, cam, background=bg).image)
        ref = mono_color_render(s.positions, s.rotations, s.scales, s.color_sh[:, :, 0],
                                s.opacity_sh[:, 0], cam, background=bg)
        assert np.max(np.abs(img - ref)) < 1e-6

    def test_conservation_and_monotone_transmittance(self, rng):
        s = random_scene(rng, n=12, opacity_bias=2.0)
        cam = front_camera(size=20)
        fb = render(s, cam, record_contributions=True)
        for py in range(cam.height):
            for px in range(cam.width):
                cs = fb.contributions_at(px, py)
                w = np.array([c.weight for c in cs])
                assert np.all((w >= 0) & (w <= 1))
                assert abs(w.sum() + fb.transmittance[py, px] - 1.0) < 1e-6
                T = 1.0 - np.concatenate([[0.0], np.cumsum(w)])
                assert np.all(np.diff(T) <= 1e-15)

    def test_contribution_fields_consistent(self, rng):
        s = random_scene(rng, n=6)
        cam = front_camera()
        fb = render(s, cam, record_contributions=True)
        checked = 0
        for py in range(0, cam.height, 3):
            for px in range(0, cam.width, 3):
                for c in fb.contributions_at(px, py):
                    g = s[c.gaussian]
                    np.testing.assert_allclose(c.color, eval_color(g, c.basis), rtol=1e-12)
                    assert c.opacity == pytest.approx(eval_opacity(g, c.basis[:9]), rel=1e-12)
                    checked += 1
        assert checked > 0

    def test_back_to_front_over_reproduces_image(self, rng):
        s = random_scene(rng, n=10)
        cam = front_camera()
        bg = np.array([0.1, 0.2, 0.3])
        fb = render(s, cam, record_contributions=True, background=tuple(bg))
        img = np.asarray(fb.image)
        for py in range(cam.height):
            for px in range(cam.width):
                C = bg.copy()
                for c in reversed(fb.contributions_at(px, py)):
                    a = c.opacity * c.footprint
                    C = a * c.color + (1 - a) * C
                assert np.max(np.abs(C - img[py, px])) < 1e-6

    def test_early_termination(self):
        # ten stacked opaque splats: everything past the first is skipped
        s = scene_of([[0, 0, 0.1 * k] for k in range(10)], [[0.5] * 3] * 10,
                     [[0.5] * 3] * 10, [30.0] * 10)
        cam = centered_camera()
        fb = render(s, cam, record_contributions=True)
        px = py = int(cam.cx)
        assert len(fb.contributions_at(px, py)) == 1

    def test_permutation_invariance(self, rng):
        s = random_scene(rng, n=15)
        cam = front_camera(size=20)
        base = np.asarray(render(s, cam).image)
        for _ in range(3):
            p = rng.permutation(len(s))
            q = SceneModel(s.positions[p], s.rotations[p], s.log_scales[p], s.color_sh[p],
                           s.opacity_sh[p], s.color_degree, s.opacity_degree)
            assert np.max(np.abs(np.asarray(render(q, cam).image) - base)) < 1e-6

    @pytest.mark.parametrize("tile", [1, 3, 7, 16, 64])
    def test_tile_size_does_not_change_image(self, rng, tile):
        s = random_scene(rng, n=10)
        cam = front_camera(size=21)
        base = np.asarray(render(s, cam).image)
        np.testing.assert_array_equal(np.asarray(render(s, cam, tile_size=tile).image), base)

    @pytest.mark.parametrize("workers", [2, 3, 8])
    def test_threads_bit_identical(self, rng, workers):
        s = random_scene(rng, n=20)
        cam = front_camera(size=40)
        a = render(s, cam, tile_size=8)
        b = render(s, cam, tile_size=8, workers=workers)
        assert np.asarray(a.image).tobytes() == np.asarray(b.image).tobytes()
        assert a.transmittance.tobytes() == b.transmittance.tobytes()

    def test_per_tile_n_is_an_approximation(self, rng):
        s = random_scene(rng, n=6, color_degree=3)
        cam = front_camera(size=32)
        exact = np.asarray(render(s, cam).image)
        approx = np.asarray(render(s, cam, per_tile_n=True).image)
        assert not np.array_equal(exact, approx)
        assert np.max(np.abs(exact - approx)) < 0.5

    def test_overflow_counter(self):
        s = scene_of([[0, 0, 0.1 * k] for k in range(10)], [[0.5] * 3] * 10,
                     [[0.5] * 3] * 10, [-3.0] * 10)
        cam = centered_camera()
        fb = render(s, cam, record_contributions=True, max_contributions=4)
        px = py = int(cam.cx)
        assert fb.overflow[py, px] == 6
        assert len(fb.contributions_at(px, py)) == 4
        assert render(s, cam, record_contributions=True).overflow.sum() == 0

    def test_nan_is_an_internal_error(self, rng):
        s = random_scene(rng, n=3, spread=0.1)
        s.color_sh[0, 0, 0] = np.nan
        with pytest.raises(AssertionError):
            render(s, front_camera())

    def test_reshading_matches_fresh_render(self, rng):
        s = random_scene(rng, n=8)
        cam = front_camera()
        view = prepare_view(s, cam)
        s2 = s.copy()
        s2.color_sh += rng.normal(0, 0.3, size=s2.color_sh.shape)
        a = np.asarray(shade(view, s2).image)
        b = np.asarray(render(s2, cam).image)
        assert a.tobytes() == b.tobytes()

    def test_raw_and_sqrt_modes_differ_only_through_texture(self, rng):
        s = random_scene(rng, n=5, color_degree=2)
        r = s.copy()
        r.scale_mode = type(s.scale_mode).RAW
        cam = front_camera()
        a, b = np.asarray(render(s, cam).image), np.asarray(render(r, cam).image)
        assert not np.array_equal(a, b)
        np.testing.assert_allclose(np.asarray(render(dc_only(s), cam).image),
                                   np.asarray(render(dc_only(r), cam).image), atol=1e-12)


class TestStats:
    def test_empty_scene(self):
        counts, mean_w = render_depth_and_weight_stats(SceneModel.empty(), centered_camera())
        assert counts.sum() == 0 and mean_w.sum() == 0

    def test_single_small_splat_in_one_tile(self):
        cam = Camera(64, 64, 100.0, 100.0, 8.0, 8.0, np.eye(3), [0.0, 0.0, 5.0])
        s = scene_of([[0, 0, 0.0]], [[0.05] * 3], [[0.5] * 3], [1.0])
        counts, mean_w = render_depth_and_weight_stats(s, cam, RenderOptions(tile_size=16))
        ys, xs = np.nonzero(counts)
        assert len(ys) > 0
        assert ys.max() < 16 and xs.max() < 16
        assert np.all(mean_w[counts > 0] > 0)

    def test_counts_equal_list_lengths(self, rng):
        s = random_scene(rng, n=10)
        cam = front_camera()
        counts, _ = render_depth_and_weight_stats(s, cam)
        fb = render(s, cam, record_contributions=True)
        np.testing.assert_array_equal(counts, fb.contribution_counts())
        assert counts[5, 7] == len(fb.contributions_at(7, 5))
