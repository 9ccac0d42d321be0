import numpy as np
import pytest

from texgs.scene import Camera, SceneModel, num_sh_coeffs


def random_scene(rng, n=5, color_degree=2, opacity_degree=2, spread=0.6, scale=(0.15, 0.45),
                 scale_mode="sqrt", opacity_bias=1.0):
    bc, bo = num_sh_coeffs(color_degree), num_sh_coeffs(opacity_degree)
    return SceneModel(
        positions=rng.normal(0.0, spread, size=(n, 3)),
        rotations=rng.normal(size=(n, 4)),
        log_scales=np.log(rng.uniform(*scale, size=(n, 3))),
        color_sh=rng.normal(size=(n, 3, bc)),
        opacity_sh=rng.normal(size=(n, bo)) + opacity_bias,
        color_degree=color_degree,
        opacity_degree=opacity_degree,
        scale_mode=scale_mode,
    )


def front_camera(size=16, distance=4.0, focal=None):
    focal = 1.2 * size if focal is None else focal
    return Camera.look_at([0.0, 0.0, -distance], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0],
                          size, size, focal)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_scene(rng):
    return random_scene(rng)


@pytest.fixture
def camera():
    return front_camera()
