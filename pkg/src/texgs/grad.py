"""Training loss, image metrics and the analytic backward pass.

Gradients flow only into the color and opacity SH coefficients.  The texture
direction of each (pixel, splat) pair is treated as a constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import ContractViolation
from .rasterizer import FrameBuffer
from .scene import SceneModel

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
DEFAULT_LAMBDA = 0.2


@dataclass
class GradBuffer:
    color: np.ndarray
    opacity: np.ndarray

    @classmethod
    def zeros_like(cls, scene: SceneModel) -> "GradBuffer":
        return cls(np.zeros_like(scene.color_sh), np.zeros_like(scene.opacity_sh))

    def zero(self) -> None:
        self.color[...] = 0.0
        self.opacity[...] = 0.0

    def __iadd__(self, other: "GradBuffer") -> "GradBuffer":
        self.color += other.color
        self.opacity += other.opacity
        return self


@dataclass
class LossReport:
    total: float
    l1: float
    dssim: float
    lam: float


def _as_array(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ContractViolation(f"expected an (H, W, 3) image, got shape {a.shape}")
    return a


def _check_same(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ContractViolation(f"image dimensions differ: {a.shape} vs {b.shape}")


@lru_cache(maxsize=32)
def _window_operator(n: int) -> sp.csr_matrix:
    """1-D Gaussian window with reflect padding as an (n x n) sparse matrix."""
    r = SSIM_WINDOW // 2
    x = np.arange(SSIM_WINDOW) - r
    k = np.exp(-(x ** 2) / (2.0 * SSIM_SIGMA ** 2))
    k /= k.sum()
    # padded index j maps to source index src[j] (half-sample symmetric)
    src = np.pad(np.arange(n), r, mode="symmetric")
    rows = np.repeat(np.arange(n), SSIM_WINDOW)
    cols = src[(np.arange(n)[:, None] + np.arange(SSIM_WINDOW)[None, :]).ravel()]
    vals = np.tile(k, n)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _blur(img: np.ndarray) -> np.ndarray:
    h, w, ch = img.shape
    Fh, Fw = _window_operator(h), _window_operator(w)
    out = (Fh @ img.reshape(h, w * ch)).reshape(h, w, ch)
    out = (Fw @ out.transpose(1, 0, 2).reshape(w, h * ch)).reshape(w, h, ch)
    return out.transpose(1, 0, 2)


def _blur_adjoint(img: np.ndarray) -> np.ndarray:
    h, w, ch = img.shape
    Fh, Fw = _window_operator(h), _window_operator(w)
    out = (Fh.T @ img.reshape(h, w * ch)).reshape(h, w, ch)
    out = (Fw.T @ out.transpose(1, 0, 2).reshape(w, h * ch)).reshape(w, h, ch)
    return out.transpose(1, 0, 2)


def _ssim_parts(x: np.ndarray, y: np.ndarray):
    mu_x, mu_y = _blur(x), _blur(y)
    sxx = _blur(x * x) - mu_x * mu_x
    syy = _blur(y * y) - mu_y * mu_y
    sxy = _blur(x * y) - mu_x * mu_y
    b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    b2 = sxx + syy + SSIM_C2
    r1 = (2.0 * mu_x * mu_y + SSIM_C1) / b1
    r2 = (2.0 * sxy + SSIM_C2) / b2
    return mu_x, mu_y, b1, b2, r1, r2


def ssim(a, b) -> float:
    """Mean SSIM over pixels and channels (11x11 Gaussian window, sigma 1.5)."""
    x, y = _as_array(a), _as_array(b)
    _check_same(x, y)
    *_, r1, r2 = _ssim_parts(x, y)
    return float(np.mean(r1 * r2))


def ssim_with_grad(a, b) -> tuple[float, np.ndarray]:
    """SSIM of ``a`` against ``b`` and its gradient with respect to ``a``."""
    x, y = _as_array(a), _as_array(b)
    _check_same(x, y)
    mu_x, mu_y, b1, b2, r1, r2 = _ssim_parts(x, y)
    # Partials of the per-pixel map S = r1 * r2 with respect to the local
    # moments mu_x, E[x^2] and E[xy].  Written so they vanish exactly at x == y.
    d_mu = r2 * (2.0 * mu_y - 2.0 * mu_x * r1) / b1 + r1 * (2.0 * mu_x * r2 - 2.0 * mu_y) / b2
    d_xx = -(r1 * r2) / b2
    d_xy = (2.0 * r1) / b2
    scale = 1.0 / x.size
    grad = _blur_adjoint(d_mu) + (2.0 * x) * _blur_adjoint(d_xx) + y * _blur_adjoint(d_xy)
    return float(np.mean(r1 * r2)), grad * scale


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]; +inf if identical."""
    x, y = _as_array(a), _as_array(b)
    _check_same(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def loss(rendered, target, lam: float = DEFAULT_LAMBDA) -> tuple[LossReport, np.ndarray]:
    """(1 - lam) * L1 + lam * D-SSIM, plus its gradient with respect to ``rendered``."""
    if not 0.0 <= lam <= 1.0:
        raise ContractViolation(f"lambda must lie in [0, 1], got {lam}")
    x, y = _as_array(rendered), _as_array(target)
    _check_same(x, y)
    diff = x - y
    l1 = float(np.mean(np.abs(diff)))
    s, ds = ssim_with_grad(x, y)
    dssim = (1.0 - s) / 2.0
    total = (1.0 - lam) * l1 + lam * dssim
    grad = (1.0 - lam) * np.sign(diff) / x.size - (lam / 2.0) * ds
    return LossReport(total, l1, dssim, lam), grad


def backward(fb: FrameBuffer, dl_dc, scene: SceneModel) -> GradBuffer:
    """Gradients of the loss with respect to every SH coefficient of ``scene``.

    Walks each pixel's contributions back to front, keeping the color seen
    behind the current splat (normalized by its transmittance) so no division
    by (1 - alpha) is needed.
    """
    c = fb.contributions
    if c is None:
        raise ContractViolation("frame buffer has no recorded contributions")
    if np.any(fb.overflow):
        raise ContractViolation("contribution records overflowed; gradients would be incomplete")
    view = fb.view
    if view.n_gaussians != len(scene):
        raise ContractViolation("scene does not match the rendered frame")
    g = np.asarray(dl_dc, dtype=np.float64)
    if g.shape != (fb.height, fb.width, 3):
        raise ContractViolation(f"pixel gradient must have shape {(fb.height, fb.width, 3)}")
    g = g.reshape(-1, 3)

    behind = np.tile(fb.background, (g.shape[0], 1))
    d_alpha = np.zeros(view.n_pairs)
    for bounds in view.chunk_bounds:
        for s0, s1 in zip(bounds[-2::-1], bounds[:0:-1]):
            p = view.pixel[s0:s1]
            col = c.color[s0:s1]
            bh = behind[p]
            d_alpha[s0:s1] = c.transmittance[s0:s1] * np.einsum("ij,ij->i", g[p], col - bh)
            a = c.alpha[s0:s1, None]
            behind[p] = a * col + (1.0 - a) * bh

    d_pre_color = c.weight[:, None] * g[view.pixel] * c.color * (1.0 - c.color)
    d_pre_opac = d_alpha * view.footprint * c.opacity * (1.0 - c.opacity)

    n = len(scene)
    bc = scene.color_sh.shape[2]
    gc = view.coefficient_matrix(scene.color_degree).T @ d_pre_color
    go = view.coefficient_matrix(scene.opacity_degree).T @ d_pre_opac
    return GradBuffer(np.ascontiguousarray(gc.reshape(n, bc, 3).transpose(0, 2, 1)),
                      go.reshape(n, -1))
