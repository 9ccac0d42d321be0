"""Covariances, EWA projection, pixel rays and the ray/ellipsoid texture lookup."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ContractViolation
from .scene import Camera, ScaleMode, TexturedGaussian, quat_to_rotmat

NEAR_PLANE = 0.01
LOW_PASS = 0.3


class Projection(NamedTuple):
    cov2: np.ndarray
    depth: float
    center: np.ndarray


class Intersection(NamedTuple):
    n: np.ndarray
    hit: np.ndarray
    t: np.ndarray


def covariance_from(q, s) -> np.ndarray:
    """World covariance R(q) diag(s)^2 R(q)^T; batches over leading axes."""
    R = quat_to_rotmat(q)
    s = np.asarray(s, dtype=np.float64)
    M = R * s[..., None, :]
    cov = M @ np.swapaxes(M, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def ewa_jacobian(p_cam: np.ndarray, fx: float, fy: float) -> np.ndarray:
    """Affine Jacobian of the pinhole map at camera-frame points (..., 3)."""
    x, y, z = p_cam[..., 0], p_cam[..., 1], p_cam[..., 2]
    J = np.zeros(p_cam.shape[:-1] + (2, 3))
    J[..., 0, 0] = fx / z
    J[..., 0, 2] = -fx * x / (z * z)
    J[..., 1, 1] = fy / z
    J[..., 1, 2] = -fy * y / (z * z)
    return J


def project_points(positions: np.ndarray, covs: np.ndarray, cam: Camera):
    """Batched projection.

    Returns (cov2, depth, center, visible) where ``visible`` is False for points
    at or behind the near plane; their other outputs are unspecified.
    """
    p_cam = cam.world_to_camera(positions)
    z = p_cam[..., 2]
    visible = z > NEAR_PLANE
    zs = np.where(visible, z, 1.0)
    p_safe = np.concatenate([p_cam[..., :2], zs[..., None]], axis=-1)
    J = ewa_jacobian(p_safe, cam.fx, cam.fy)
    T = J @ cam.rotation
    cov2 = T @ covs @ np.swapaxes(T, -1, -2)
    cov2 = 0.5 * (cov2 + np.swapaxes(cov2, -1, -2))
    cov2[..., 0, 0] += LOW_PASS
    cov2[..., 1, 1] += LOW_PASS
    center = np.stack([cam.fx * p_safe[..., 0] / zs + cam.cx,
                       cam.fy * p_safe[..., 1] / zs + cam.cy], axis=-1)
    return cov2, z, center, visible


def project_covariance(cov: np.ndarray, position, cam: Camera) -> Projection | None:
    """Screen-space covariance (with low-pass dilation), depth and pixel center.

    Returns ``None`` when the point is culled by the near plane.
    """
    cov2, z, center, visible = project_points(np.asarray(position, dtype=np.float64)[None],
                                              np.asarray(cov)[None], cam)
    if not visible[0]:
        return None
    return Projection(cov2[0], float(z[0]), center[0])


def intersect_local(o: np.ndarray, d: np.ndarray, a: np.ndarray) -> Intersection:
    """Intersect local-frame rays with axis-aligned ellipsoids of semi-axes ``a``.

    All inputs broadcast over leading axes.  On a hit the nearer root is used and
    ``n = p / a``.  On a miss ``n`` is the sphere-space point of closest approach
    to the center, projected onto the unit sphere, and ``t`` is its ray
    parameter.
    """
    a = np.asarray(a, dtype=np.float64)
    o = np.asarray(o, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    os_, ds = o / a, d / a
    A = np.sum(ds * ds, axis=-1)
    B = 2.0 * np.sum(os_ * ds, axis=-1)
    C = np.sum(os_ * os_, axis=-1) - 1.0
    # B^2 - 4AC rewritten through the perpendicular from the center to the
    # scaled ray; avoids cancellation near tangency for distant origins.
    t_close = -0.5 * B / A
    perp = os_ + t_close[..., None] * ds
    disc = 4.0 * A * (1.0 - np.sum(perp * perp, axis=-1))
    hit = disc >= 0.0

    root = np.sqrt(np.where(hit, disc, 0.0))
    sign_b = np.where(B >= 0.0, 1.0, -1.0)
    q = -0.5 * (B + sign_b * root)
    q_safe = np.where(q == 0.0, 1.0, q)
    t1 = q / A
    t2 = np.where(q == 0.0, t1, C / q_safe)
    t_hit = np.minimum(t1, t2)

    t = np.where(hit, t_hit, t_close)
    n = (o + t[..., None] * d) / a
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    n = np.where(hit[..., None], n, n / np.where(norm == 0.0, 1.0, norm))
    return Intersection(n, hit, t)


def ellipsoid_semi_axes(scale: np.ndarray, mode: "ScaleMode | str") -> np.ndarray:
    scale = np.asarray(scale, dtype=np.float64)
    return np.sqrt(scale) if ScaleMode.parse(mode) is ScaleMode.SQRT else scale


def intersect_ray_ellipsoid(g: TexturedGaussian, cam_center, pixel_dir,
                            mode: "ScaleMode | str" = ScaleMode.SQRT) -> Intersection:
    """Texture direction ``n`` where a world ray meets the Gaussian's ellipsoid."""
    R = quat_to_rotmat(g.rotation)
    o = (np.asarray(cam_center, dtype=np.float64) - g.position) @ R
    d = np.asarray(pixel_dir, dtype=np.float64) @ R
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    return intersect_local(o, d, ellipsoid_semi_axes(g.scale, mode))


def pixel_directions(cam: Camera, px, py) -> np.ndarray:
    """World-space unit directions through pixel centers (no range checks)."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    d_cam = np.stack([(px + 0.5 - cam.cx) / cam.fx,
                      (py + 0.5 - cam.cy) / cam.fy,
                      np.ones_like(px)], axis=-1)
    d_cam /= np.linalg.norm(d_cam, axis=-1, keepdims=True)
    return d_cam @ cam.rotation


def pixel_ray(cam: Camera, px: float, py: float) -> tuple[np.ndarray, np.ndarray]:
    """World origin and unit direction of the ray through pixel (px, py)'s center."""
    if not (0 <= px < cam.width and 0 <= py < cam.height):
        raise ContractViolation(f"pixel ({px}, {py}) outside {cam.width}x{cam.height} image")
    return cam.center, pixel_directions(cam, px, py)
