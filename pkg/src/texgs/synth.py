"""Synthetic textured scenes with self-consistent ground-truth renders.

Targets are produced by this package's own forward pass, so a model with the
ground-truth SH degrees can in principle reproduce them exactly.  The emitted
initialization keeps only the DC terms, which training has to improve on.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation
from .io import save_cameras, save_checkpoint, save_splat_ply, write_image
from .rasterizer import RenderOptions, render
from .scene import Camera, SceneModel, num_sh_coeffs
from .sh import SH_C0, SH_C1, logit

KINDS = ("single-ellipsoid", "grid", "two-tone-opacity", "random-N")


@dataclass
class SynthSpec:
    kind: str = "grid"
    width: int = 128
    height: int = 128
    n_cameras: int = 12
    radius: float = 4.0
    seed: int = 0
    color_degree: int = 3
    opacity_degree: int = 3
    count: int = 50
    elevation: float = 0.8
    focal: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractViolation(f"unknown scene kind {self.kind!r}; choose from {KINDS}")
        if self.n_cameras < 1 or self.count < 1 or self.width < 1 or self.height < 1:
            raise ContractViolation("counts and image size must be >= 1")


def ring_cameras(spec: SynthSpec) -> list[Camera]:
    """Cameras evenly spaced on a horizontal ring, all looking at the origin."""
    focal = spec.focal if spec.focal is not None else 1.1 * max(spec.width, spec.height)
    cams = []
    for i in range(spec.n_cameras):
        theta = 2.0 * np.pi * i / spec.n_cameras
        eye = [spec.radius * np.sin(theta), spec.elevation, -spec.radius * np.cos(theta)]
        cams.append(Camera.look_at(eye, [0.0, 0.0, 0.0], [0.0, 1.0, 0.0],
                                   spec.width, spec.height, focal))
    return cams


def _f32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _random_quats(rng, n) -> np.ndarray:
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _textures(rng, n, color_degree, opacity_degree, opacity_logit=(1.5, 3.0)):
    bc, bo = num_sh_coeffs(color_degree), num_sh_coeffs(opacity_degree)
    color = np.zeros((n, 3, bc))
    color[:, :, 0] = logit(rng.uniform(0.15, 0.85, size=(n, 3))) / SH_C0
    for l in range(1, color_degree + 1):
        color[:, :, l * l:(l + 1) ** 2] = rng.normal(0.0, 1.2, size=(n, 3, 2 * l + 1))
    opac = np.zeros((n, bo))
    opac[:, 0] = rng.uniform(*opacity_logit, size=n) / SH_C0
    for l in range(1, opacity_degree + 1):
        opac[:, l * l:(l + 1) ** 2] = rng.normal(0.0, 1.5, size=(n, 2 * l + 1))
    return color, opac


def make_scene(spec: SynthSpec) -> SceneModel:
    """Ground-truth scene.  Geometry is float32-representable so the float32
    initialization PLY reproduces it exactly."""
    rng = np.random.default_rng(spec.seed)
    lc, lo = spec.color_degree, spec.opacity_degree
    if spec.kind == "single-ellipsoid":
        pos = np.zeros((1, 3))
        quat = _random_quats(rng, 1)
        log_s = np.log([[0.9, 0.6, 0.45]])
        color, opac = _textures(rng, 1, lc, lo)
    elif spec.kind == "two-tone-opacity":
        if lo < 1:
            raise ContractViolation("two-tone-opacity needs opacity_degree >= 1")
        pos = np.zeros((1, 3))
        quat = np.array([[1.0, 0.0, 0.0, 0.0]])
        log_s = np.log([[0.8, 0.8, 0.5]])
        color, _ = _textures(rng, 1, lc, 0)
        color[:, :, 1:] = 0.0
        opac = np.zeros((1, num_sh_coeffs(lo)))
        opac[0, 0] = 0.5 / SH_C0
        # z-linear term only: opaque facing +z, transparent facing -z
        opac[0, 2] = 4.0 / SH_C1
    elif spec.kind == "grid":
        nx = int(np.ceil(np.sqrt(spec.count / 2.0)))
        cells = np.array([(i, j, k) for k in range(2) for j in range(nx) for i in range(nx)],
                         dtype=np.float64)[:spec.count]
        spacing = 2.4 / max(nx - 1, 1)
        pos = (cells - [0.5 * (nx - 1), 0.5 * (nx - 1), 0.5]) * [spacing, spacing, 1.0]
        pos += rng.normal(0.0, 0.05, size=pos.shape)
        quat = _random_quats(rng, spec.count)
        log_s = np.log(rng.uniform(0.12, 0.3, size=(spec.count, 3)))
        color, opac = _textures(rng, spec.count, lc, lo)
    else:
        pos = rng.uniform(-1.0, 1.0, size=(spec.count, 3))
        quat = _random_quats(rng, spec.count)
        log_s = np.log(rng.uniform(0.1, 0.35, size=(spec.count, 3)))
        color, opac = _textures(rng, spec.count, lc, lo)
    return SceneModel(_f32(pos), _f32(quat), _f32(log_s), color, opac, lc, lo)


def degrade(scene: SceneModel) -> SceneModel:
    """Drop every non-DC coefficient."""
    out = scene.copy()
    out.color_sh[:, :, 1:] = 0.0
    out.opacity_sh[:, 1:] = 0.0
    return out


def generate(spec: SynthSpec, outdir, opts: RenderOptions | None = None) -> dict:
    """Write init.ply, groundtruth.ply, cameras.json and images/NNNNN.png."""
    out = Path(outdir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    gt = make_scene(spec)
    cams = ring_cameras(spec)
    for i, cam in enumerate(cams):
        write_image(render(gt, cam, opts).image, out / "images" / f"{i:05d}.png")
    save_cameras(cams, out / "cameras.json")
    save_checkpoint(gt, out / "groundtruth.ply")
    save_splat_ply(degrade(gt), out / "init.ply")
    (out / "synth.json").write_text(json.dumps(asdict(spec), indent=1))
    return {
        "init": out / "init.ply",
        "groundtruth": out / "groundtruth.ply",
        "cameras": out / "cameras.json",
        "images": out / "images",
    }
