"""Persistent I/O: splat PLY input, checkpoint PLY, camera JSON and PNG images."""

from __future__ import annotations

import json
import os
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import CameraFormatError, ContractViolation, PlyFormatError
from .scene import Camera, ImageRGB, ScaleMode, SceneModel, num_sh_coeffs
from .sh import SH_C0, logit

PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
COLOR_CLAMP = 1e-4
CHECKPOINT_TAG = "texgs"


def read_ply(path: "str | os.PathLike") -> tuple[np.ndarray, list[str]]:
    """Read the vertex element of a binary little-endian PLY.

    Returns a structured array and the header comments.
    """
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise PlyFormatError(f"{path}: missing 'ply' magic line")
        comments: list[str] = []
        elements: list[tuple[str, int, list[tuple[str, str]]]] = []
        fmt = None
        while True:
            raw = fh.readline()
            if not raw:
                raise PlyFormatError(f"{path}: header ends without end_header")
            line = raw.decode("ascii", errors="replace").strip()
            if line == "end_header":
                break
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "format":
                fmt = parts[1] if len(parts) > 1 else None
            elif parts[0] == "comment":
                comments.append(line[len("comment"):].strip())
            elif parts[0] == "obj_info":
                continue
            elif parts[0] == "element":
                if len(parts) != 3 or not parts[2].isdigit():
                    raise PlyFormatError(f"{path}: malformed element line {line!r}")
                elements.append((parts[1], int(parts[2]), []))
            elif parts[0] == "property":
                if not elements:
                    raise PlyFormatError(f"{path}: property before any element")
                if len(parts) != 3:
                    raise PlyFormatError(f"{path}: unsupported property line {line!r}")
                if parts[1] not in PLY_TYPES:
                    raise PlyFormatError(f"{path}: unknown property type {parts[1]!r}")
                elements[-1][2].append((parts[2], "<" + PLY_TYPES[parts[1]]))
            else:
                raise PlyFormatError(f"{path}: unexpected header line {line!r}")
        if fmt != "binary_little_endian":
            raise PlyFormatError(f"{path}: format must be binary_little_endian, got {fmt!r}")

        for name, count, props in elements:
            dtype = np.dtype(props)
            if name == "vertex":
                buf = fh.read(dtype.itemsize * count)
                if len(buf) != dtype.itemsize * count:
                    raise PlyFormatError(f"{path}: file truncated in vertex data")
                return np.frombuffer(buf, dtype=dtype, count=count), comments
            fh.seek(dtype.itemsize * count, os.SEEK_CUR)
    raise PlyFormatError(f"{path}: no vertex element")


def write_ply(path: "str | os.PathLike", data: np.ndarray, comments: list[str] = ()) -> None:
    type_names = {"f4": "float", "f8": "double", "u1": "uchar", "i4": "int"}
    lines = ["ply", "format binary_little_endian 1.0"]
    lines += [f"comment {c}" for c in comments]
    lines.append(f"element vertex {len(data)}")
    for name in data.dtype.names:
        lines.append(f"property {type_names[data.dtype[name].str[1:]]} {name}")
    lines.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(data).tobytes())


def _columns(data: np.ndarray, names: list[str], path) -> np.ndarray:
    missing = [n for n in names if n not in data.dtype.names]
    if missing:
        raise PlyFormatError(f"{path}: missing required property {missing[0]!r}")
    out = np.stack([data[n].astype(np.float64) for n in names], axis=-1) if names else \
        np.zeros((len(data), 0))
    bad = ~np.isfinite(out)
    if bad.any():
        v, j = np.argwhere(bad)[0]
        raise PlyFormatError(f"{path}: non-finite value in property {names[j]!r} at vertex {v}")
    return out


def load_splat_ply(path, color_degree: int = 3, opacity_degree: int = 3,
                   scale_mode: "ScaleMode | str" = ScaleMode.SQRT) -> SceneModel:
    """Load a standard 3DGS splat PLY as a textured scene with constant appearance.

    Only the base color and opacity are used; ``f_rest`` and normals are read
    and discarded.  DC logits are chosen so the activated appearance matches
    the source splat.
    """
    data, _ = read_ply(path)
    pos = _columns(data, ["x", "y", "z"], path)
    f_dc = _columns(data, ["f_dc_0", "f_dc_1", "f_dc_2"], path)
    opacity = _columns(data, ["opacity"], path)[:, 0]
    log_scale = _columns(data, ["scale_0", "scale_1", "scale_2"], path)
    rot = _columns(data, ["rot_0", "rot_1", "rot_2", "rot_3"], path)
    zero_q = np.nonzero(np.linalg.norm(rot, axis=1) == 0)[0]
    if len(zero_q):
        raise PlyFormatError(f"{path}: zero quaternion in property 'rot_0' at vertex {zero_q[0]}")

    n = len(data)
    base = np.clip(f_dc * SH_C0 + 0.5, COLOR_CLAMP, 1.0 - COLOR_CLAMP)
    color = np.zeros((n, 3, num_sh_coeffs(color_degree)))
    color[:, :, 0] = logit(base) / SH_C0
    opac = np.zeros((n, num_sh_coeffs(opacity_degree)))
    opac[:, 0] = opacity / SH_C0
    return SceneModel(pos, rot, log_scale, color, opac, color_degree, opacity_degree, scale_mode)


def save_splat_ply(scene: SceneModel, path) -> None:
    """Write a standard 3DGS layout PLY (float32) from the DC terms of ``scene``."""
    from .sh import sigmoid

    n = len(scene)
    names = (["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
             + [f"f_rest_{i}" for i in range(45)]
             + ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"])
    data = np.zeros(n, dtype=[(k, "<f4") for k in names])
    for i, k in enumerate("xyz"):
        data[k] = scene.positions[:, i]
    base = sigmoid(scene.color_sh[:, :, 0] * SH_C0)
    for c in range(3):
        data[f"f_dc_{c}"] = (base[:, c] - 0.5) / SH_C0
    data["opacity"] = scene.opacity_sh[:, 0] * SH_C0
    for i in range(3):
        data[f"scale_{i}"] = scene.log_scales[:, i]
    for i in range(4):
        data[f"rot_{i}"] = scene.rotations[:, i]
    write_ply(path, data)


def _checkpoint_names(color_degree: int, opacity_degree: int) -> list[str]:
    rest = 3 * (num_sh_coeffs(color_degree) - 1)
    return (["x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
             "tex_dc_0", "tex_dc_1", "tex_dc_2"]
            + [f"tex_rest_{i}" for i in range(rest)]
            + [f"opac_{i}" for i in range(num_sh_coeffs(opacity_degree))])


def save_checkpoint(scene: SceneModel, path) -> None:
    """Write ``scene`` as a double-precision PLY that reloads bit-exactly."""
    names = _checkpoint_names(scene.color_degree, scene.opacity_degree)
    n = len(scene)
    b = num_sh_coeffs(scene.color_degree)
    cols = np.concatenate([
        scene.positions,
        scene.log_scales,
        scene.rotations,
        scene.color_sh[:, :, 0],
        scene.color_sh[:, :, 1:].reshape(n, 3 * (b - 1)),
        scene.opacity_sh,
    ], axis=1)
    data = np.zeros(n, dtype=[(k, "<f8") for k in names])
    for i, k in enumerate(names):
        data[k] = cols[:, i]
    comment = (f"{CHECKPOINT_TAG} color_degree={scene.color_degree} "
               f"opacity_degree={scene.opacity_degree} scale_mode={scene.scale_mode.value}")
    write_ply(path, data, [comment])


def load_checkpoint(path) -> SceneModel:
    data, comments = read_ply(path)
    meta = None
    for c in comments:
        m = re.match(rf"{CHECKPOINT_TAG} color_degree=(\d) opacity_degree=(\d) scale_mode=(\w+)", c)
        if m:
            meta = m
    if meta is None:
        raise PlyFormatError(f"{path}: not a checkpoint (missing '{CHECKPOINT_TAG}' comment)")
    lc, lo, mode = int(meta.group(1)), int(meta.group(2)), meta.group(3)
    cols = _columns(data, _checkpoint_names(lc, lo), path)
    n = len(data)
    b = num_sh_coeffs(lc)
    color = np.empty((n, 3, b))
    color[:, :, 0] = cols[:, 10:13]
    color[:, :, 1:] = cols[:, 13:13 + 3 * (b - 1)].reshape(n, 3, b - 1)
    try:
        return SceneModel(cols[:, 0:3], cols[:, 6:10], cols[:, 3:6], color,
                          cols[:, 13 + 3 * (b - 1):], lc, lo, mode, normalize=False)
    except ContractViolation as exc:
        raise PlyFormatError(f"{path}: {exc}") from None


CAMERA_FIELDS = ("width", "height", "fx", "fy", "cx", "cy", "rotation", "translation")
ORTHO_DRIFT = 1e-3


def _nearest_rotation(M: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(M)
    return U @ Vt


def load_cameras(path) -> list[Camera]:
    """Read a JSON array of world-to-camera pinhole cameras."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CameraFormatError(f"{path}: {exc}") from None
    if not isinstance(doc, list):
        raise CameraFormatError(f"{path}: expected a JSON array of cameras")
    cams = []
    for i, entry in enumerate(doc):
        missing = [k for k in CAMERA_FIELDS if k not in entry]
        if missing:
            raise CameraFormatError(f"{path}: camera {i} missing field {missing[0]!r}")
        R = np.asarray(entry["rotation"], dtype=np.float64)
        t = np.asarray(entry["translation"], dtype=np.float64)
        if R.size != 9 or t.size != 3:
            raise CameraFormatError(f"{path}: camera {i} needs 9 rotation and 3 translation values")
        R = R.reshape(3, 3)
        if np.linalg.det(R) < 0:
            raise CameraFormatError(f"{path}: camera {i} rotation is a reflection")
        if np.max(np.abs(R @ R.T - np.eye(3))) > ORTHO_DRIFT:
            raise CameraFormatError(f"{path}: camera {i} rotation is not orthonormal")
        try:
            cams.append(Camera(entry["width"], entry["height"], float(entry["fx"]),
                               float(entry["fy"]), float(entry["cx"]), float(entry["cy"]),
                               _nearest_rotation(R), t))
        except (ContractViolation, TypeError, ValueError) as exc:
            raise CameraFormatError(f"{path}: camera {i}: {exc}") from None
    return cams


def save_cameras(cams: list[Camera], path) -> None:
    doc = [
        {
            "width": c.width, "height": c.height,
            "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
            "rotation": c.rotation.ravel().tolist(),
            "translation": c.translation.tolist(),
        }
        for c in cams
    ]
    Path(path).write_text(json.dumps(doc, indent=1))


def read_image(path) -> ImageRGB:
    """Decode an 8-bit RGB PNG to floats in [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise ContractViolation(f"{path}: unsupported image format {im.format}")
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except OSError as exc:
        raise ContractViolation(f"{path}: {exc}") from None
    return ImageRGB(arr / 255.0)


def to_bytes(img) -> np.ndarray:
    a = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(a * 255.0 + 0.5).astype(np.uint8)


def write_image(img, path) -> None:
    Image.fromarray(to_bytes(img)).save(path, format="PNG")
