"""Differentiable renderer and appearance optimizer for textured Gaussian splats."""

from .errors import CameraFormatError, ContractViolation, PlyFormatError, TrainingError
from .scene import Camera, ImageRGB, ScaleMode, SceneModel, TexturedGaussian
from .rasterizer import FrameBuffer, RenderOptions, render
from .grad import GradBuffer, LossReport, backward, loss, psnr, ssim
from .trainer import TrainConfig, evaluate, train
from .io import (load_cameras, load_checkpoint, load_splat_ply, read_image, save_cameras,
                 save_checkpoint, write_image)

__all__ = [
    "CameraFormatError", "ContractViolation", "PlyFormatError", "TrainingError",
    "Camera", "ImageRGB", "ScaleMode", "SceneModel", "TexturedGaussian",
    "FrameBuffer", "RenderOptions", "render",
    "GradBuffer", "LossReport", "backward", "loss", "psnr", "ssim",
    "TrainConfig", "evaluate", "train",
    "load_cameras", "load_checkpoint", "load_splat_ply", "read_image", "save_cameras",
    "save_checkpoint", "write_image",
]
