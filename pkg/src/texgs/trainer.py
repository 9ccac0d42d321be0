"""Frozen-geometry appearance fitting with Adam over the SH coefficients."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractViolation, TrainingError
from .grad import backward, loss, psnr, ssim
from .io import save_checkpoint
from .rasterizer import RenderOptions, prepare_view, shade
from .scene import Camera, SceneModel

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration", "loss", "l1", "dssim", "psnr_eval")


@dataclass
class TrainConfig:
    iterations: int = 14000
    lr_color: float = 0.0025
    lr_opacity: float = 0.005
    lam: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    eval_every: int = 100
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ContractViolation("iterations must be >= 1")
        if self.lr_color < 0 or self.lr_opacity < 0:
            raise ContractViolation("learning rates must be non-negative")
        if not 0.0 <= self.lam <= 1.0:
            raise ContractViolation("lambda must lie in [0, 1]")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param))

    def update(self, param: np.ndarray, grad: np.ndarray, lr: float, beta1: float,
               beta2: float, eps: float) -> None:
        """One in-place Adam step on ``param``."""
        self.step += 1
        self.m *= beta1
        self.m += (1.0 - beta1) * grad
        self.v *= beta2
        self.v += (1.0 - beta2) * grad * grad
        m_hat = self.m / (1.0 - beta1 ** self.step)
        v_hat = self.v / (1.0 - beta2 ** self.step)
        if lr != 0.0:
            param -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class EvalTable:
    rows: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows]))


def _check_dataset(cameras: Sequence[Camera], images: Sequence) -> list[np.ndarray]:
    if len(cameras) == 0:
        raise ContractViolation("dataset is empty")
    if len(cameras) != len(images):
        raise ContractViolation("number of cameras and images differ")
    out = []
    for i, (cam, img) in enumerate(zip(cameras, images)):
        a = np.asarray(img, dtype=np.float64)
        if a.shape != (cam.height, cam.width, 3):
            raise ContractViolation(
                f"image {i} has shape {a.shape}, camera expects {(cam.height, cam.width, 3)}")
        out.append(a)
    return out


def evaluate(scene: SceneModel, cameras: Sequence[Camera], images: Sequence,
             opts: RenderOptions | None = None, indices: Sequence[int] | None = None,
             views=None) -> EvalTable:
    """Per-image PSNR and SSIM of renders against targets."""
    targets = _check_dataset(cameras, images)
    opts = opts or RenderOptions()
    indices = list(range(len(cameras))) if indices is None else list(indices)
    table = EvalTable()
    for k, (cam, target) in enumerate(zip(cameras, targets)):
        view = views[k] if views is not None else prepare_view(scene, cam, opts)
        img = shade(view, scene, opts).image
        table.rows.append((indices[k], psnr(img, target), ssim(img, target)))
    return table


def train(scene: SceneModel, cameras: Sequence[Camera], images: Sequence,
          cfg: TrainConfig | None = None, opts: RenderOptions | None = None,
          eval_cameras: Sequence[Camera] = (), eval_images: Sequence = (),
          checkpoint_dir: "str | Path | None" = None) -> tuple[SceneModel, list[dict]]:
    """Fit the SH coefficients of a copy of ``scene`` to the target images.

    One camera per iteration, visited in a seeded order reshuffled every
    epoch.  Geometry is never touched, so each view is rasterized once.
    Returns the trained scene and the metric log rows.
    """
    cfg = cfg or TrainConfig()
    targets = _check_dataset(cameras, images)
    eval_targets = _check_dataset(eval_cameras, eval_images) if len(eval_cameras) else []
    opts = RenderOptions(**{**asdict(opts or RenderOptions()), "record_contributions": True})
    eval_opts = RenderOptions(**{**asdict(opts), "record_contributions": False})

    scene = scene.copy()
    views = [prepare_view(scene, cam, opts) for cam in cameras]
    eval_views = [prepare_view(scene, cam, eval_opts) for cam in eval_cameras]
    adam_color = AdamState.like(scene.color_sh)
    adam_opacity = AdamState.like(scene.opacity_sh)
    rng = np.random.default_rng(cfg.seed)
    order: list[int] = []
    rows: list[dict] = []

    for it in range(1, cfg.iterations + 1):
        if not order:
            order = list(rng.permutation(len(cameras)))
        cam_idx = int(order.pop(0))
        fb = shade(views[cam_idx], scene, opts)
        report, dl_dc = loss(fb.image, targets[cam_idx], cfg.lam)
        if not np.isfinite(report.total):
            raise TrainingError(it, cam_idx)
        grads = backward(fb, dl_dc, scene)
        adam_color.update(scene.color_sh, grads.color, cfg.lr_color, cfg.beta1, cfg.beta2, cfg.eps)
        adam_opacity.update(scene.opacity_sh, grads.opacity, cfg.lr_opacity, cfg.beta1,
                            cfg.beta2, cfg.eps)

        if cfg.eval_every and it % cfg.eval_every == 0:
            p_eval = float("nan")
            if eval_targets:
                p_eval = evaluate(scene, eval_cameras, eval_targets, eval_opts,
                                  views=eval_views).mean_psnr
            rows.append({"iteration": it, "loss": report.total, "l1": report.l1,
                         "dssim": report.dssim, "psnr_eval": p_eval})
            log.info("iter %d loss %.6f psnr_eval %.3f", it, report.total, p_eval)
        if checkpoint_dir is not None and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
            save_checkpoint(scene, Path(checkpoint_dir) / f"checkpoint_{it:06d}.ply")
    return scene, rows


def write_log(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in LOG_COLUMNS})
