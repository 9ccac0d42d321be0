"""Tile-binned forward renderer for textured Gaussians.

Rendering is split in two stages.  :func:`prepare_view` does everything that
depends only on geometry and the camera: projection, culling, tile binning,
per-tile depth ordering, footprint evaluation and the ray/ellipsoid lookup of
the texture direction for every (pixel, splat) pair.  :func:`shade` then
evaluates the SH textures and alpha-composites.  Training keeps geometry
frozen, so it prepares each view once and only re-shades.

Per pixel, a splat participates when the pixel center lies inside its 3-sigma
screen ellipse.  Tiles only partition the work, so the image does not depend on
the tile size or on the number of worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .geometry import covariance_from, intersect_local, pixel_directions, project_points
from .scene import Camera, ImageRGB, SceneModel, num_sh_coeffs
from .sh import sh_basis, sigmoid

EXTENT_SIGMA = 3.0


@dataclass
class RenderOptions:
    tile_size: int = 16
    t_stop: float = 1e-4
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    record_contributions: bool = False
    max_contributions: int = 64
    per_tile_n: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        self.background = tuple(float(c) for c in self.background)


class SplatRecord(NamedTuple):
    index: int
    conic: np.ndarray
    center: np.ndarray
    depth: float
    rotation: np.ndarray
    semi_axes: np.ndarray


@dataclass
class ProjectedSplats:
    """Visible splats for one camera, sorted front to back.

    ``conic`` holds the upper triangle (a, b, c) of the inverse screen
    covariance; ``extent`` the half-widths of the 3-sigma bounding box.
    """

    index: np.ndarray
    center: np.ndarray
    conic: np.ndarray
    depth: np.ndarray
    extent: np.ndarray
    rotation: np.ndarray
    semi_axes: np.ndarray
    local_origin: np.ndarray

    def __len__(self) -> int:
        return len(self.index)

    def __getitem__(self, i: int) -> SplatRecord:
        a, b, c = self.conic[i]
        return SplatRecord(int(self.index[i]), np.array([[a, b], [b, c]]), self.center[i],
                           float(self.depth[i]), self.rotation[i], self.semi_axes[i])


def cull_and_project(scene: SceneModel, cam: Camera) -> ProjectedSplats:
    """Project every Gaussian, drop those behind the camera or off screen."""
    rot = scene.rotation_matrices()
    cov3 = covariance_from(scene.rotations, scene.scales)
    cov2, depth, center, visible = project_points(scene.positions, cov3, cam)

    det = cov2[:, 0, 0] * cov2[:, 1, 1] - cov2[:, 0, 1] ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        conic = np.stack([cov2[:, 1, 1] / det, -cov2[:, 0, 1] / det, cov2[:, 0, 0] / det], axis=-1)
        extent = EXTENT_SIGMA * np.sqrt(np.stack([cov2[:, 0, 0], cov2[:, 1, 1]], axis=-1))
    ok = visible & (det > 0) & np.all(np.isfinite(conic), axis=1)

    lo = np.ceil(center - extent - 0.5)
    hi = np.floor(center + extent - 0.5)
    ok &= (hi[:, 0] >= 0) & (lo[:, 0] <= cam.width - 1)
    ok &= (hi[:, 1] >= 0) & (lo[:, 1] <= cam.height - 1)

    idx = np.nonzero(ok)[0]
    idx = idx[np.lexsort((idx, depth[idx]))]
    R = rot[idx]
    o = np.einsum("ki,kij->kj", cam.center[None, :] - scene.positions[idx], R)
    return ProjectedSplats(
        index=idx,
        center=center[idx],
        conic=conic[idx],
        depth=depth[idx],
        extent=extent[idx],
        rotation=R,
        semi_axes=scene.semi_axes()[idx],
        local_origin=o,
    )


@dataclass
class ViewGeometry:
    """Geometry-only rasterization of one view: every (pixel, splat) pair.

    ``slot`` is a pair's depth rank at its pixel.  Pairs are stored slot-major
    inside each work chunk (a run of whole tiles), so every compositing step
    touches a contiguous range; ``chunk_bounds[c]`` lists the slot boundaries of
    chunk ``c`` as absolute pair offsets.
    """

    width: int
    height: int
    n_gaussians: int
    basis_degree: int
    pixel: np.ndarray
    slot: np.ndarray
    gaussian: np.ndarray
    footprint: np.ndarray
    n: np.ndarray
    hit: np.ndarray
    basis: np.ndarray
    chunk_bounds: list
    splats: ProjectedSplats
    _matrices: dict = field(default_factory=dict, repr=False)

    @property
    def n_pairs(self) -> int:
        return len(self.pixel)

    def coefficient_matrix(self, degree: int) -> sp.csr_matrix:
        """Sparse (pairs x gaussians*B) map from stacked coefficients to SH sums."""
        if degree > self.basis_degree:
            raise ValueError(f"view was prepared for SH degree <= {self.basis_degree}")
        if degree not in self._matrices:
            b = num_sh_coeffs(degree)
            m = self.n_pairs
            cols = (self.gaussian[:, None] * b + np.arange(b)[None, :]).ravel()
            self._matrices[degree] = sp.csr_matrix(
                (self.basis[:, :b].ravel(), cols, np.arange(0, m * b + 1, b)),
                shape=(m, self.n_gaussians * b),
            )
        return self._matrices[degree]


def _tile_pairs(tile, splats, tile_splats, cam, tile_size, per_tile_n, degree):
    tx, ty = tile
    x0, y0 = tx * tile_size, ty * tile_size
    xs = np.arange(x0, min(x0 + tile_size, cam.width))
    ys = np.arange(y0, min(y0 + tile_size, cam.height))
    pys, pxs = np.meshgrid(ys, xs, indexing="ij")
    pxs, pys = pxs.ravel(), pys.ravel()

    cen = splats.center[tile_splats]
    con = splats.conic[tile_splats]
    dx = (pxs[:, None] + 0.5) - cen[None, :, 0]
    dy = (pys[:, None] + 0.5) - cen[None, :, 1]
    maha = con[None, :, 0] * dx * dx + 2.0 * con[None, :, 1] * dx * dy + con[None, :, 2] * dy * dy
    inside = maha <= EXTENT_SIGMA ** 2
    pi, si = np.nonzero(inside)
    slot = (np.cumsum(inside, axis=1) - 1)[pi, si]
    rec = tile_splats[si]

    if per_tile_n:
        cxp = 0.5 * (xs[0] + xs[-1])
        cyp = 0.5 * (ys[0] + ys[-1])
        dirs = np.broadcast_to(pixel_directions(cam, cxp, cyp), (len(pi), 3))
    else:
        dirs = pixel_directions(cam, pxs[pi], pys[pi])
    d_local = np.einsum("ki,kij->kj", dirs, splats.rotation[rec])
    d_local /= np.linalg.norm(d_local, axis=1, keepdims=True)
    inter = intersect_local(splats.local_origin[rec], d_local, splats.semi_axes[rec])
    return (
        pys[pi] * cam.width + pxs[pi],
        slot,
        splats.index[rec],
        np.exp(-0.5 * maha[pi, si]),
        inter.n,
        inter.hit,
        sh_basis(degree, inter.n),
    )


def prepare_view(scene: SceneModel, cam: Camera, opts: RenderOptions | None = None) -> ViewGeometry:
    """Rasterize geometry for one camera (no appearance)."""
    opts = opts or RenderOptions()
    ts = opts.tile_size
    degree = max(scene.color_degree, scene.opacity_degree)
    splats = cull_and_project(scene, cam)
    ntx = -(-cam.width // ts)
    nty = -(-cam.height // ts)

    # Bin splats into the tiles their 3-sigma box touches, keeping depth order.
    lo = np.ceil(splats.center - splats.extent - 0.5)
    hi = np.floor(splats.center + splats.extent - 0.5)
    lo = np.clip(lo, 0, [cam.width - 1, cam.height - 1]).astype(np.int64) // ts
    hi = np.clip(hi, 0, [cam.width - 1, cam.height - 1]).astype(np.int64) // ts
    per_tile: dict[int, list[int]] = {}
    for k in range(len(splats)):
        for ty in range(lo[k, 1], hi[k, 1] + 1):
            for tx in range(lo[k, 0], hi[k, 0] + 1):
                per_tile.setdefault(ty * ntx + tx, []).append(k)

    tiles = [(t % ntx, t // ntx) for t in range(ntx * nty)]
    jobs = [(tiles[t], np.asarray(per_tile[t], dtype=np.int64)) for t in range(len(tiles))
            if t in per_tile]

    def run(job):
        return _tile_pairs(job[0], splats, job[1], cam, ts, opts.per_tile_n, degree)

    if opts.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(opts.workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]

    if parts:
        cols = [np.concatenate([p[i] for p in parts]) for i in range(7)]
    else:
        cols = [np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64),
                np.zeros(0), np.zeros((0, 3)), np.zeros(0, bool),
                np.zeros((0, num_sh_coeffs(degree)))]

    # Group tiles into one chunk per worker, then order pairs slot-major per chunk.
    n_jobs = len(jobs)
    n_chunks = max(1, min(opts.workers, n_jobs))
    job_chunk = np.minimum(np.arange(n_jobs) * n_chunks // max(n_jobs, 1), n_chunks - 1)
    pair_chunk = np.repeat(job_chunk, [len(p[0]) for p in parts]).astype(np.int64)
    slot = cols[1]
    order = np.lexsort((slot, pair_chunk))
    cols = [c[order] for c in cols]
    pair_chunk = pair_chunk[order]
    chunk_bounds = []
    for c in range(n_chunks):
        lo_, hi_ = np.searchsorted(pair_chunk, [c, c + 1])
        nslots = int(cols[1][lo_:hi_].max()) + 1 if hi_ > lo_ else 0
        chunk_bounds.append(lo_ + np.searchsorted(cols[1][lo_:hi_], np.arange(nslots + 1)))
    return ViewGeometry(cam.width, cam.height, len(scene), degree, *cols,
                        chunk_bounds=chunk_bounds, splats=splats)


class Contribution(NamedTuple):
    gaussian: int
    basis: np.ndarray
    color: np.ndarray
    opacity: float
    footprint: float
    weight: float


@dataclass
class Contributions:
    """Per-pair shading records, aligned with the producing :class:`ViewGeometry`.

    ``alpha`` is opacity times footprint for pairs that were composited and 0
    for pairs skipped by early termination; ``transmittance`` is the value seen
    before the splat (0 when skipped).  ``recorded`` marks the pairs kept in the
    per-pixel lists, which hold at most ``max_contributions`` entries.
    """

    color: np.ndarray
    opacity: np.ndarray
    alpha: np.ndarray
    weight: np.ndarray
    transmittance: np.ndarray
    recorded: np.ndarray

    def __len__(self) -> int:
        return int(np.count_nonzero(self.recorded))


@dataclass
class FrameBuffer:
    image: ImageRGB
    transmittance: np.ndarray
    overflow: np.ndarray
    background: np.ndarray
    view: ViewGeometry
    contributions: Contributions | None = None

    @property
    def width(self) -> int:
        return self.view.width

    @property
    def height(self) -> int:
        return self.view.height

    def contribution_counts(self) -> np.ndarray:
        c = self._require()
        counts = np.bincount(self.view.pixel[c.recorded], minlength=self.width * self.height)
        return counts.reshape(self.height, self.width)

    def contributions_at(self, px: int, py: int) -> list[Contribution]:
        """Front-to-back contribution list of one pixel."""
        c = self._require()
        v = self.view
        sel = np.nonzero((v.pixel == py * self.width + px) & c.recorded)[0]
        sel = sel[np.argsort(v.slot[sel], kind="stable")]
        return [
            Contribution(int(v.gaussian[i]), v.basis[i], c.color[i], float(c.opacity[i]),
                         float(v.footprint[i]), float(c.weight[i]))
            for i in sel
        ]

    def _require(self) -> Contributions:
        if self.contributions is None:
            raise ValueError("render was run without record_contributions")
        return self.contributions


def _composite_chunk(bounds, pixel, alpha, color, t_stop, T, C, alpha_eff, weight, t_before):
    for s0, s1 in zip(bounds[:-1], bounds[1:]):
        p = pixel[s0:s1]
        Tp = T[p]
        live = Tp >= t_stop
        a = np.where(live, alpha[s0:s1], 0.0)
        w = Tp * a
        C[p] += w[:, None] * color[s0:s1]
        T[p] = Tp * (1.0 - a)
        alpha_eff[s0:s1] = a
        weight[s0:s1] = w
        t_before[s0:s1] = np.where(live, Tp, 0.0)


def shade(view: ViewGeometry, scene: SceneModel, opts: RenderOptions | None = None) -> FrameBuffer:
    """Evaluate textures on a prepared view and alpha-composite front to back."""
    opts = opts or RenderOptions()
    if view.n_gaussians != len(scene):
        raise ValueError("view was prepared for a different scene")
    stacked = scene.color_sh.transpose(0, 2, 1).reshape(-1, 3)
    color = sigmoid(view.coefficient_matrix(scene.color_degree) @ stacked)
    opacity = sigmoid(view.coefficient_matrix(scene.opacity_degree) @ scene.opacity_sh.ravel())
    alpha = opacity * view.footprint

    npix = view.width * view.height
    T = np.ones(npix)
    C = np.zeros((npix, 3))
    alpha_eff = np.zeros(view.n_pairs)
    weight = np.zeros(view.n_pairs)
    t_before = np.zeros(view.n_pairs)
    args = (view.pixel, alpha, color, opts.t_stop, T, C, alpha_eff, weight, t_before)
    if len(view.chunk_bounds) > 1:
        with ThreadPoolExecutor(len(view.chunk_bounds)) as pool:
            list(pool.map(lambda bounds: _composite_chunk(bounds, *args), view.chunk_bounds))
    else:
        for bounds in view.chunk_bounds:
            _composite_chunk(bounds, *args)

    bg = np.asarray(opts.background, dtype=np.float64)
    C += T[:, None] * bg[None, :]
    if not np.all(np.isfinite(C)):
        raise AssertionError("non-finite value in color accumulator")

    active = t_before > 0.0
    over = active & (view.slot >= opts.max_contributions)
    overflow = np.bincount(view.pixel[over], minlength=npix)
    contributions = None
    if opts.record_contributions:
        contributions = Contributions(color, opacity, alpha_eff, weight, t_before, active & ~over)
    shape = (view.height, view.width)
    return FrameBuffer(
        image=ImageRGB(C.reshape(shape + (3,))),
        transmittance=T.reshape(shape),
        overflow=overflow.reshape(shape),
        background=bg,
        view=view,
        contributions=contributions,
    )


def render(scene: SceneModel, cam: Camera, opts: RenderOptions | None = None, **kwargs) -> FrameBuffer:
    """Render ``scene`` from ``cam``.  Keyword arguments override ``opts`` fields."""
    if opts is None:
        opts = RenderOptions(**kwargs)
    elif kwargs:
        opts = RenderOptions(**{**opts.__dict__, **kwargs})
    return shade(prepare_view(scene, cam, opts), scene, opts)


def render_depth_and_weight_stats(scene: SceneModel, cam: Camera,
                                  opts: RenderOptions | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel number of contributing splats and their mean |w|."""
    fb = render(scene, cam, opts or RenderOptions(), record_contributions=True,
                max_contributions=np.iinfo(np.int64).max)
    c, v = fb.contributions, fb.view
    npix = cam.width * cam.height
    counts = np.bincount(v.pixel[c.recorded], minlength=npix)
    wsum = np.bincount(v.pixel[c.recorded], weights=np.abs(c.weight[c.recorded]), minlength=npix)
    mean_w = np.divide(wsum, counts, out=np.zeros(npix), where=counts > 0)
    shape = (cam.height, cam.width)
    return counts.reshape(shape), mean_w.reshape(shape)
