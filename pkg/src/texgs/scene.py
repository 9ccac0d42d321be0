"""Core domain types: textured Gaussians, scenes, cameras and images.

A :class:`SceneModel` stores its Gaussians as parallel numpy arrays (one row
per splat) because every consumer works on the whole set at once.  Indexing a
scene yields a :class:`TexturedGaussian` view for code that wants one splat.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ContractViolation

MAX_SH_DEGREE = 3


def num_sh_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


class ScaleMode(str, enum.Enum):
    """Which semi-axes the texture ellipsoid uses."""

    RAW = "raw"
    SQRT = "sqrt"

    @classmethod
    def parse(cls, value: "str | ScaleMode") -> "ScaleMode":
        if isinstance(value, ScaleMode):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ContractViolation(f"unknown ellipsoid scale mode {value!r}") from None


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (..., 4) unit quaternions stored as (w, x, y, z)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass
class TexturedGaussian:
    """One splat.  ``color_sh`` has shape (3, B), ``opacity_sh`` shape (B',)."""

    position: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    color_sh: np.ndarray
    opacity_sh: np.ndarray

    @property
    def color_degree(self) -> int:
        return int(round(np.sqrt(self.color_sh.shape[-1]))) - 1

    @property
    def opacity_degree(self) -> int:
        return int(round(np.sqrt(self.opacity_sh.shape[-1]))) - 1

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_rotmat(self.rotation)


class SceneModel:
    """Ordered collection of textured Gaussians sharing SH degrees.

    Scales are held as their logarithm (``log_scales``) so that checkpoints
    round-trip bit-exactly; ``scales`` is derived from it.
    """

    def __init__(
        self,
        positions: np.ndarray,
        rotations: np.ndarray,
        log_scales: np.ndarray,
        color_sh: np.ndarray,
        opacity_sh: np.ndarray,
        color_degree: int,
        opacity_degree: int,
        scale_mode: "ScaleMode | str" = ScaleMode.SQRT,
        normalize: bool = True,
    ):
        for name, deg in (("color_degree", color_degree), ("opacity_degree", opacity_degree)):
            if not (0 <= int(deg) <= MAX_SH_DEGREE):
                raise ContractViolation(f"{name} must lie in [0, {MAX_SH_DEGREE}], got {deg}")
        self.color_degree = int(color_degree)
        self.opacity_degree = int(opacity_degree)
        self.scale_mode = ScaleMode.parse(scale_mode)

        positions = np.array(positions, dtype=np.float64).reshape(-1, 3)
        n = positions.shape[0]
        rotations = np.array(rotations, dtype=np.float64).reshape(n, 4)
        log_scales = np.array(log_scales, dtype=np.float64).reshape(n, 3)
        bc, bo = num_sh_coeffs(self.color_degree), num_sh_coeffs(self.opacity_degree)
        color_sh = np.array(color_sh, dtype=np.float64)
        opacity_sh = np.array(opacity_sh, dtype=np.float64)
        if color_sh.shape != (n, 3, bc):
            raise ContractViolation(f"color_sh must have shape {(n, 3, bc)}, got {color_sh.shape}")
        if opacity_sh.shape != (n, bo):
            raise ContractViolation(f"opacity_sh must have shape {(n, bo)}, got {opacity_sh.shape}")

        norms = np.linalg.norm(rotations, axis=1)
        if np.any(norms == 0) or not np.all(np.isfinite(norms)):
            raise ContractViolation("quaternions must be finite and nonzero")
        if normalize:
            rotations = rotations / norms[:, None]
        elif np.any(np.abs(norms - 1.0) > 1e-9):
            raise ContractViolation("quaternions must have unit norm")
        if not np.all(np.isfinite(log_scales)):
            raise ContractViolation("scales must be finite and positive")

        self.positions = positions
        self.rotations = rotations
        self.log_scales = log_scales
        self.color_sh = color_sh
        self.opacity_sh = opacity_sh

    @classmethod
    def from_gaussians(
        cls,
        gaussians: Sequence[TexturedGaussian],
        color_degree: int,
        opacity_degree: int,
        scale_mode: "ScaleMode | str" = ScaleMode.SQRT,
    ) -> "SceneModel":
        n = len(gaussians)
        bc, bo = num_sh_coeffs(color_degree), num_sh_coeffs(opacity_degree)
        scales = np.array([g.scale for g in gaussians], dtype=np.float64).reshape(n, 3)
        if np.any(scales <= 0):
            raise ContractViolation("scale components must be positive")
        return cls(
            positions=np.array([g.position for g in gaussians]).reshape(n, 3),
            rotations=np.array([g.rotation for g in gaussians]).reshape(n, 4),
            log_scales=np.log(scales),
            color_sh=np.array([np.reshape(g.color_sh, (3, -1)) for g in gaussians]).reshape(n, 3, bc),
            opacity_sh=np.array([np.ravel(g.opacity_sh) for g in gaussians]).reshape(n, bo),
            color_degree=color_degree,
            opacity_degree=opacity_degree,
            scale_mode=scale_mode,
        )

    @classmethod
    def empty(cls, color_degree: int = 3, opacity_degree: int = 3,
              scale_mode: "ScaleMode | str" = ScaleMode.SQRT) -> "SceneModel":
        bc, bo = num_sh_coeffs(color_degree), num_sh_coeffs(opacity_degree)
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros((0, 3, bc)),
                   np.zeros((0, bo)), color_degree, opacity_degree, scale_mode)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def semi_axes(self) -> np.ndarray:
        """Per-axis semi-axes of the texture ellipsoid under the scene's scale mode."""
        s = self.scales
        return np.sqrt(s) if self.scale_mode is ScaleMode.SQRT else s

    def rotation_matrices(self) -> np.ndarray:
        return quat_to_rotmat(self.rotations)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __getitem__(self, i: int) -> TexturedGaussian:
        return TexturedGaussian(
            position=self.positions[i],
            rotation=self.rotations[i],
            scale=np.exp(self.log_scales[i]),
            color_sh=self.color_sh[i],
            opacity_sh=self.opacity_sh[i],
        )

    def __iter__(self) -> Iterator[TexturedGaussian]:
        for i in range(len(self)):
            yield self[i]

    @property
    def gaussians(self) -> list[TexturedGaussian]:
        return list(self)

    def copy(self) -> "SceneModel":
        return SceneModel(self.positions.copy(), self.rotations.copy(), self.log_scales.copy(),
                          self.color_sh.copy(), self.opacity_sh.copy(), self.color_degree,
                          self.opacity_degree, self.scale_mode, normalize=False)

    def with_degrees(self, color_degree: int, opacity_degree: int) -> "SceneModel":
        """Copy with coefficient blocks truncated or zero-padded to new degrees."""
        n = len(self)
        bc, bo = num_sh_coeffs(color_degree), num_sh_coeffs(opacity_degree)
        color = np.zeros((n, 3, bc))
        opac = np.zeros((n, bo))
        kc = min(bc, self.color_sh.shape[2])
        ko = min(bo, self.opacity_sh.shape[1])
        color[:, :, :kc] = self.color_sh[:, :, :kc]
        opac[:, :ko] = self.opacity_sh[:, :ko]
        return SceneModel(self.positions.copy(), self.rotations.copy(), self.log_scales.copy(),
                          color, opac, color_degree, opacity_degree, self.scale_mode, normalize=False)


@dataclass
class Camera:
    """Pinhole camera with a world-to-camera rigid transform; looks down +z."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.width = int(self.width)
        self.height = int(self.height)
        if self.width < 1 or self.height < 1:
            raise ContractViolation("camera width and height must be >= 1")
        self.rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.array(self.translation, dtype=np.float64).reshape(3)
        if np.max(np.abs(self.rotation @ self.rotation.T - np.eye(3))) > 1e-6:
            raise ContractViolation("camera rotation is not orthonormal")
        if np.linalg.det(self.rotation) < 0:
            raise ContractViolation("camera rotation has determinant -1")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    @classmethod
    def look_at(cls, eye, target, up, width: int, height: int, fx: float,
                fy: float | None = None) -> "Camera":
        """Camera at ``eye`` looking at ``target``; image y runs opposite ``up``."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        return cls(width, height, fx, fx if fy is None else fy, width / 2.0, height / 2.0,
                   R, -R @ eye)


@dataclass
class ImageRGB:
    """Row-major float RGB image, shape (height, width, 3)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ContractViolation(f"image data must have shape (H, W, 3), got {self.data.shape}")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)
