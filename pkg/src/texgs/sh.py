"""Real spherical harmonics up to degree 3 and sigmoid-activated textures.

The basis uses the hardcoded polynomial table common to splatting renderers,
ordered (l = 0..L, m = -l..l).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import ContractViolation
from .scene import MAX_SH_DEGREE, TexturedGaussian, num_sh_coeffs

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

UNIT_TOL = 1e-6


def sigmoid(x):
    return expit(x)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def sh_basis(degree: int, n: np.ndarray) -> np.ndarray:
    """Evaluate the basis at (..., 3) directions without checking norms."""
    n = np.asarray(n, dtype=np.float64)
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    out = np.empty(n.shape[:-1] + (num_sh_coeffs(degree),))
    out[..., 0] = SH_C0
    if degree >= 1:
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out[..., 4] = SH_C2[0] * xy
        out[..., 5] = SH_C2[1] * yz
        out[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * xz
        out[..., 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        out[..., 9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = SH_C3[1] * xy * z
        out[..., 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def eval_sh_basis(degree: int, n) -> np.ndarray:
    """Basis values Y_lm(n) for unit direction(s) ``n``.

    Accepts a single 3-vector or an (..., 3) batch and returns (degree+1)**2
    values per direction.
    """
    if not (0 <= degree <= MAX_SH_DEGREE):
        raise ContractViolation(f"SH degree must lie in [0, {MAX_SH_DEGREE}], got {degree}")
    n = np.asarray(n, dtype=np.float64)
    if n.shape[-1] != 3:
        raise ContractViolation("direction must have 3 components")
    norms = np.linalg.norm(n, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise ContractViolation("direction must have unit norm")
    return sh_basis(degree, n)


def eval_color(g: TexturedGaussian, basis: np.ndarray) -> np.ndarray:
    """Activated RGB of ``g`` at the surface point whose basis values are given."""
    basis = np.asarray(basis, dtype=np.float64)
    coeffs = np.asarray(g.color_sh, dtype=np.float64).reshape(3, -1)
    if basis.shape[-1] != coeffs.shape[1]:
        raise ContractViolation(
            f"basis has {basis.shape[-1]} values but color texture has {coeffs.shape[1]}"
        )
    return sigmoid(basis @ coeffs.T)


def eval_opacity(g: TexturedGaussian, basis: np.ndarray):
    """Activated opacity of ``g``; scalar for a single basis vector."""
    basis = np.asarray(basis, dtype=np.float64)
    coeffs = np.asarray(g.opacity_sh, dtype=np.float64).ravel()
    if basis.shape[-1] != coeffs.shape[0]:
        raise ContractViolation(
            f"basis has {basis.shape[-1]} values but opacity texture has {coeffs.shape[0]}"
        )
    out = sigmoid(basis @ coeffs)
    return float(out) if np.ndim(out) == 0 else out
