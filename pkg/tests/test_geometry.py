import mpmath
import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from oracles import silhouette_jump, sphere_samples
from texgs.errors import ContractViolation
from texgs.geometry import (
    covariance_from,
    intersect_local,
    intersect_ray_ellipsoid,
    pixel_ray,
    project_covariance,
)
from texgs.scene import Camera, ScaleMode, TexturedGaussian


def quat_wxyz(R):
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    return np.array([w, x, y, z])


def splat(position=(0, 0, 0), q=(1, 0, 0, 0), scale=(1, 1, 1)):
    return TexturedGaussian(np.asarray(position, float), np.asarray(q, float),
                            np.asarray(scale, float), np.zeros((3, 1)), np.zeros(1))


class TestCovariance:
    def test_identity_rotation(self):
        np.testing.assert_allclose(covariance_from([1, 0, 0, 0], [1, 2, 3]), np.diag([1, 4, 9]))

    def test_quarter_turn_about_z(self):
        q = [np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)]
        np.testing.assert_allclose(covariance_from(q, [1, 2, 1]), np.diag([4, 1, 1]), atol=1e-12)

    def test_eigenvalues_are_squared_scales(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            s = rng.uniform(0.1, 3.0, size=3)
            cov = covariance_from(q, s)
            assert np.max(np.abs(cov - cov.T)) < 1e-12
            np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(cov)), np.sort(s ** 2),
                                       atol=1e-10)


class TestProjection:
    def test_isotropic_on_axis(self):
        cam = Camera(64, 64, 50.0, 50.0, 32.0, 32.0)
        sigma, z = 0.2, 5.0
        proj = project_covariance(sigma ** 2 * np.eye(3), [0, 0, z], cam)
        expected = (sigma * 50.0 / z) ** 2 + 0.3
        np.testing.assert_allclose(proj.cov2, np.diag([expected, expected]), rtol=1e-12)
        assert proj.depth == z
        np.testing.assert_allclose(proj.center, [32.0, 32.0])

    def test_near_plane_cull(self):
        cam = Camera(8, 8, 10.0, 10.0, 4.0, 4.0)
        assert project_covariance(np.eye(3), [0, 0, 0.005], cam) is None
        assert project_covariance(np.eye(3), [0, 0, -1.0], cam) is None

    def test_matches_numeric_jacobian(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            R = Rotation.random(random_state=rng).as_matrix()
            cam = Camera(100, 80, rng.uniform(50, 150), rng.uniform(50, 150), 50, 40, R,
                         rng.normal(size=3))
            pc = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2, 6)])
            x = R.T @ (pc - cam.translation)
            q = rng.normal(size=4)
            cov = covariance_from(q / np.linalg.norm(q), rng.uniform(0.05, 0.5, 3))

            def pi(xw):
                c = R @ xw + cam.translation
                return np.array([cam.fx * c[0] / c[2] + cam.cx, cam.fy * c[1] / c[2] + cam.cy])

            h = 1e-6
            Jn = np.stack([(pi(x + h * e) - pi(x - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
            expected = Jn @ cov @ Jn.T + 0.3 * np.eye(2)
            got = project_covariance(cov, x, cam).cov2
            assert np.max(np.abs(got - expected) / np.abs(expected).max()) < 1e-4


class TestIntersection:
    def test_unit_sphere_head_on(self):
        r = intersect_ray_ellipsoid(splat(), [0, 0, -2], [0, 0, 1], ScaleMode.RAW)
        assert r.hit and r.t == pytest.approx(1.0)
        np.testing.assert_allclose(r.n, [0, 0, -1], atol=1e-15)

    def test_axis_aligned_hit(self):
        r = intersect_ray_ellipsoid(splat(scale=(1, 2, 3)), [-5, 0, 0], [1, 0, 0], "raw")
        assert r.hit and r.t == pytest.approx(4.0)
        np.testing.assert_allclose(r.n, [-1, 0, 0], atol=1e-15)

    def test_sqrt_mode_uses_root_scales(self):
        r = intersect_ray_ellipsoid(splat(scale=(4, 4, 4)), [0, 0, -5], [0, 0, 1], "sqrt")
        assert r.t == pytest.approx(3.0)

    def test_random_hits_satisfy_ellipsoid_equation(self):
        rng = np.random.default_rng(11)
        m = 10_000
        a = rng.uniform(0.05, 3.0, size=(m, 3))
        target = sphere_samples(m, seed=3) * a * rng.uniform(0, 0.95, size=(m, 1))
        o = sphere_samples(m, seed=4) * rng.uniform(4, 20, size=(m, 1))
        d = target - o
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        res = intersect_local(o, d, a)
        assert np.all(res.hit)
        p = o + res.t[:, None] * d
        g = np.sum(p ** 2 / a ** 2, axis=1)
        assert np.max(np.abs(g - 1.0)) < 1e-9
        assert np.max(np.abs(np.linalg.norm(res.n, axis=1) - 1.0)) < 1e-9

    def test_nearest_root_selected(self):
        o = np.array([0.0, 0.0, -3.0])
        res = intersect_local(o, np.array([0.0, 0.0, 1.0]), np.ones(3))
        assert res.t == pytest.approx(2.0)

    def test_robust_root_against_extended_precision(self):
        # origins just outside the surface: the near root is tiny next to the far one
        mpmath.mp.dps = 80
        rng = np.random.default_rng(21)
        for eps in [1e-3, 1e-6, 1e-9, 1e-12]:
            for _ in range(50):
                a = rng.uniform(0.3, 3.0, 3)
                u = sphere_samples(1, seed=rng.integers(1 << 30))[0]
                o = u * a * (1 + eps)
                d = -u + rng.normal(0, 0.3, 3)
                d /= np.linalg.norm(d)
                t = float(intersect_local(o, d, a).t)
                om, dm, am = ([mpmath.mpf(float(v)) for v in x] for x in (o, d, a))
                A = sum(dm[i] ** 2 / am[i] ** 2 for i in range(3))
                B = 2 * sum(om[i] * dm[i] / am[i] ** 2 for i in range(3))
                C = sum(om[i] ** 2 / am[i] ** 2 for i in range(3)) - 1
                exact = (-B - mpmath.sqrt(B * B - 4 * A * C)) / (2 * A)
                assert abs(t - exact) < 1e-15

    def test_silhouette_limits_agree(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            a = rng.uniform(0.05, 3.0, 3)
            d = sphere_samples(1, seed=rng.integers(1 << 30))[0]
            e = np.cross(d, rng.normal(size=3))
            e /= np.linalg.norm(e)
            assert silhouette_jump(intersect_local, a, d, e, reach=rng.uniform(2, 50)) < 1e-6

    def test_tangency_continuity(self):
        a = np.array([0.7, 1.3, 0.4])
        o = np.array([-5.0, 0.0, 0.0])
        d0 = np.array([1.0, 0.0, 0.0])
        # sweep the ray's y-offset across the silhouette at y = a_y
        offsets = np.linspace(a[1] - 1e-3, a[1] + 1e-3, 20001)
        origins = o + offsets[:, None] * np.array([0.0, 1.0, 0.0])
        res = intersect_local(origins, np.broadcast_to(d0, origins.shape), a)
        assert res.hit[0] and not res.hit[-1]
        jumps = np.linalg.norm(np.diff(res.n, axis=0), axis=1)
        k = np.nonzero(res.hit[:-1] != res.hit[1:])[0][0]
        # the step across the boundary is no larger than the neighbouring steps
        assert jumps[k] <= 1e-6 + 2.0 * max(jumps[k - 1], jumps[k + 1])
        np.testing.assert_allclose(res.n[-1], [0.0, 1.0, 0.0], atol=1e-6)

    def test_miss_fallback_is_unit_closest_approach(self):
        res = intersect_local(np.array([0.0, 2.0, -5.0]), np.array([0.0, 0.0, 1.0]), np.ones(3))
        assert not res.hit
        np.testing.assert_allclose(res.n, [0.0, 1.0, 0.0])

    def test_frame_consistency(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            q = rng.normal(size=4)
            g = splat(rng.normal(size=3), q / np.linalg.norm(q), rng.uniform(0.2, 2.0, 3))
            cam_c = g.position + sphere_samples(1, seed=rng.integers(1 << 30))[0] * 6
            d = g.position + rng.normal(0, 0.3, 3) - cam_c
            d /= np.linalg.norm(d)
            base = intersect_ray_ellipsoid(g, cam_c, d, "sqrt")
            M = Rotation.random(random_state=rng).as_matrix()
            shift = rng.normal(size=3)
            g2 = splat(M @ g.position + shift, quat_wxyz(M @ g.rotation_matrix()), g.scale)
            moved = intersect_ray_ellipsoid(g2, M @ cam_c + shift, M @ d, "sqrt")
            np.testing.assert_allclose(moved.n, base.n, atol=1e-9)

    def test_scale_invariance(self):
        rng = np.random.default_rng(9)
        a = rng.uniform(0.2, 2.0, size=(200, 3))
        o = sphere_samples(200, seed=5) * 5
        d = rng.normal(0, 0.2, size=(200, 3)) - o
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        base = intersect_local(o, d, a)
        for k in [0.01, 3.7, 250.0]:
            np.testing.assert_allclose(intersect_local(k * o, d, k * a).n, base.n, atol=1e-9)


class TestPixelRay:
    def test_principal_point(self):
        cam = Camera(10, 10, 20.0, 20.0, 4.5, 6.5)
        o, d = pixel_ray(cam, 4, 6)
        np.testing.assert_allclose(o, 0.0)
        np.testing.assert_allclose(d, [0, 0, 1])

    def test_one_focal_length_right(self):
        cam = Camera(64, 10, 20.0, 20.0, 4.5, 6.5)
        _, d = pixel_ray(cam, 24, 6)
        np.testing.assert_allclose(d, np.array([1, 0, 1]) / np.sqrt(2))

    def test_unit_norm_and_range(self):
        cam = Camera.look_at([1, 2, 3], [0, 0, 0], [0, 1, 0], 13, 7, 9.0)
        for px in range(13):
            for py in range(7):
                o, d = pixel_ray(cam, px, py)
                assert abs(np.linalg.norm(d) - 1.0) < 1e-12
        np.testing.assert_allclose(o, [1, 2, 3], atol=1e-12)
        with pytest.raises(ContractViolation):
            pixel_ray(cam, 13, 0)
        with pytest.raises(ContractViolation):
            pixel_ray(cam, 0, -1)
