"""Scan geometries, Siddon ray tracing and sparse design assembly.

Pixels are stored row-major with row 0 at the top of the image, so pixel
``j = row * width + col`` covers ``x in [x_lo, x_hi)`` and ``y in [y_lo, y_hi)``
with ``x_lo = -extent + col * pixel_size`` and ``y_lo = extent - (row + 1) * pixel_size``.
The half-open convention attributes a boundary-aligned ray to exactly one
pixel row or column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, InvalidArgumentError, ModelViolationError

NORMALIZATIONS = ("column-stochastic", "raw", "scaled")
MIN_LENGTH = 1e-14
DENSE_CAP = 2000


@dataclass(frozen=True)
class Grid:
    width: int
    height: int
    extent: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidArgumentError("grid dimensions must be >= 1")
        if not self.extent > 0:
            raise InvalidArgumentError("extent must be positive")

    @property
    def p(self) -> int:
        return self.width * self.height

    @property
    def pixel_size(self) -> float:
        return 2.0 * self.extent / self.width

    @property
    def pixel_height(self) -> float:
        # equals pixel_size on square grids
        return 2.0 * self.extent / self.height

    def centers(self):
        """Pixel-center coordinates (x, y), each of length p, row-major."""
        xs = -self.extent + (np.arange(self.width) + 0.5) * self.pixel_size
        ys = self.extent - (np.arange(self.height) + 0.5) * self.pixel_height
        X, Y = np.meshgrid(xs, ys)
        return X.ravel(), Y.ravel()

    def to_image(self, values) -> np.ndarray:
        return np.asarray(values).reshape(self.height, self.width)


@dataclass(frozen=True)
class RaySet:
    origins: np.ndarray  # (d, 2)
    directions: np.ndarray  # (d, 2), unit norm
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        o = np.asarray(self.origins, dtype=float).reshape(-1, 2)
        u = np.asarray(self.directions, dtype=float).reshape(-1, 2)
        if o.shape != u.shape or len(o) == 0:
            raise InvalidArgumentError("need at least one ray with matching origin/direction")
        if np.any(np.abs(np.hypot(u[:, 0], u[:, 1]) - 1.0) > 1e-12):
            raise InvalidArgumentError("ray directions must have unit norm")
        object.__setattr__(self, "origins", o)
        object.__setattr__(self, "directions", u)

    @property
    def d(self) -> int:
        return len(self.origins)

    def __len__(self):
        return self.d

    def __getitem__(self, i):
        return self.origins[i], self.directions[i]

    def subset(self, index) -> "RaySet":
        index = np.asarray(index)
        return RaySet(self.origins[index], self.directions[index], self.kind, dict(self.params))

    @classmethod
    def from_points(cls, starts, ends, kind="custom") -> "RaySet":
        s = np.asarray(starts, dtype=float).reshape(-1, 2)
        e = np.asarray(ends, dtype=float).reshape(-1, 2)
        v = e - s
        n = np.hypot(v[:, 0], v[:, 1])
        if np.any(n == 0):
            raise InvalidArgumentError("degenerate ray with coincident end points")
        return cls(s, v / n[:, None], kind)


def build_parallel_geometry(n_angles: int, n_offsets: int, grid: Grid) -> RaySet:
    """Parallel-beam lines: angles k*pi/n_angles, offsets at cell centers across the extent."""
    if n_angles < 1 or n_offsets < 1:
        raise InvalidArgumentError("n_angles and n_offsets must be >= 1")
    theta = np.arange(n_angles) * np.pi / n_angles
    E = grid.extent
    s = -E + (np.arange(n_offsets) + 0.5) * (2 * E / n_offsets)
    u = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    # exact unit vectors at the axis angles keep axis-aligned rays exact
    u[np.isclose(u, 0.0, atol=1e-15)] = 0.0
    u /= np.hypot(u[:, 0], u[:, 1])[:, None]
    normal = np.stack([-u[:, 1], u[:, 0]], axis=1)
    origins = (normal[:, None, :] * s[None, :, None]).reshape(-1, 2)
    dirs = np.repeat(u, n_offsets, axis=0)
    return RaySet(origins, dirs, "parallel", {"n_angles": n_angles, "n_offsets": n_offsets})


def ring_radius(grid: Grid) -> float:
    return grid.extent * math.sqrt(2.0) * 1.01


def build_ring_geometry(n_detectors: int, grid: Grid) -> RaySet:
    """All chords between detector pairs (k < l) on a circle circumscribing the grid."""
    if n_detectors < 3:
        raise InvalidArgumentError("a detector ring needs at least 3 detectors")
    R = ring_radius(grid)
    phi = 2 * np.pi * np.arange(n_detectors) / n_detectors
    pts = R * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    k, l = np.triu_indices(n_detectors, k=1)
    rs = RaySet.from_points(pts[k], pts[l], "ring")
    object.__setattr__(rs, "params", {"n_detectors": n_detectors})
    return rs


def _clip_interval(o, u, lo, hi):
    """Parameter interval where o + s*u lies in [lo, hi) along one axis."""
    if u == 0.0:
        if lo <= o < hi:
            return -math.inf, math.inf
        return math.inf, -math.inf
    a = (lo - o) / u
    b = (hi - o) / u
    return (a, b) if a < b else (b, a)


AXIS_EPS = 1e-15


def _snap(direction):
    """Direction components below 1e-15 are treated as exactly zero (axis-aligned)."""
    u = np.array(direction, dtype=float)
    u[np.abs(u) < AXIS_EPS] = 0.0
    return u


def chord_interval(origin, direction, grid: Grid):
    """Parameter range [s0, s1] of the line inside the half-open grid box, or None."""
    direction = _snap(direction)
    E = grid.extent
    ax0, ax1 = _clip_interval(origin[0], direction[0], -E, E)
    ay0, ay1 = _clip_interval(origin[1], direction[1], -E, E)
    s0, s1 = max(ax0, ay0), min(ax1, ay1)
    if not s1 > s0:
        return None
    return s0, s1


def siddon_trace(origin, direction, grid: Grid):
    """Intersections of the line ``origin + s*direction`` with the pixels.

    Returns ``(pixels, lengths)`` arrays ordered along the ray.  The line is
    treated as infinite in both directions; only its part inside the grid box
    contributes.
    """
    o = np.asarray(origin, dtype=float)
    u = _snap(direction)
    iv = chord_interval(o, u, grid)
    if iv is None:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    s0, s1 = iv
    E = grid.extent
    cuts = [np.array([s0, s1])]
    if u[0] != 0.0:
        xs = -E + np.arange(grid.width + 1) * grid.pixel_size
        cuts.append((xs - o[0]) / u[0])
    if u[1] != 0.0:
        ys = -E + np.arange(grid.height + 1) * grid.pixel_height
        cuts.append((ys - o[1]) / u[1])
    s = np.concatenate(cuts)
    s = np.unique(s[(s >= s0) & (s <= s1)])
    lengths = np.diff(s)
    mid = 0.5 * (s[:-1] + s[1:])
    mx = o[0] + mid * u[0]
    my = o[1] + mid * u[1]
    col = np.floor((mx + E) / grid.pixel_size).astype(np.int64)
    row_from_bottom = np.floor((my + E) / grid.pixel_height).astype(np.int64)
    row = grid.height - 1 - row_from_bottom
    keep = (lengths >= MIN_LENGTH) & (col >= 0) & (col < grid.width) & (row >= 0) & (row < grid.height)
    pix = row[keep] * grid.width + col[keep]
    return pix, lengths[keep]


def chord_length(origin, direction, grid: Grid) -> float:
    iv = chord_interval(np.asarray(origin, float), np.asarray(direction, float), grid)
    return 0.0 if iv is None else iv[1] - iv[0]


@dataclass(frozen=True, eq=False)
class SparseDesign:
    """Nonnegative d x p design held as CSR, with a cached CSR transpose."""

    matrix: sp.csr_matrix
    normalization: str = "raw"
    grid: Optional[Grid] = None
    rays: Optional[RaySet] = None
    col_sums: np.ndarray = field(init=False, repr=False)
    _t: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=float)
        m.eliminate_zeros()
        m.sort_indices()
        if m.nnz and m.data.min() < 0:
            raise InvalidArgumentError("design entries must be nonnegative")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "col_sums", np.asarray(m.sum(axis=0)).ravel())
        object.__setattr__(self, "_t", m.T.tocsr())
        if self.grid is not None and self.grid.p != m.shape[1]:
            raise InvalidArgumentError("grid size does not match design columns")

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def p(self) -> int:
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def forward(self, lam) -> np.ndarray:
        return self.matrix @ np.asarray(lam, dtype=float)

    def back(self, y) -> np.ndarray:
        return self._t @ np.asarray(y, dtype=float)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def check_detectable(self):
        """Raise if some pixel is invisible or some LOR sees no pixel."""
        zero_cols = np.flatnonzero(self.col_sums <= 0)
        if zero_cols.size:
            raise ModelViolationError(f"pixel {zero_cols[0]} is not detectable (zero design column)")
        row_nnz = np.diff(self.matrix.indptr)
        empty = np.flatnonzero(row_nnz == 0)
        if empty.size:
            raise ModelViolationError(f"LOR {empty[0]} intersects no pixel (empty design row)")

    def __getstate__(self):
        return {"matrix": self.matrix, "normalization": self.normalization,
                "grid": self.grid, "rays": self.rays}

    def __setstate__(self, state):
        for k, v in state.items():
            object.__setattr__(self, k, v)
        self.__post_init__()


def trace_all(rays: RaySet, grid: Grid):
    """COO triplets for every ray, in ray order."""
    rows, cols, vals = [], [], []
    for i in range(rays.d):
        pix, ln = siddon_trace(rays.origins[i], rays.directions[i], grid)
        rows.append(np.full(pix.size, i, dtype=np.int64))
        cols.append(pix)
        vals.append(ln)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def normalize(matrix: sp.spmatrix, normalization: str) -> sp.csr_matrix:
    m = sp.csr_matrix(matrix, dtype=float)
    if normalization == "raw":
        return m
    colsum = np.asarray(m.sum(axis=0)).ravel()
    if normalization == "column-stochastic":
        inv = np.zeros_like(colsum)
        inv[colsum > 0] = 1.0 / colsum[colsum > 0]
        return (m @ sp.diags(inv)).tocsr()
    if normalization == "scaled":
        return (m / colsum.max()).tocsr()
    raise InvalidArgumentError(f"unknown normalization {normalization!r}; expected one of {NORMALIZATIONS}")


def assemble_design(rays: RaySet, grid: Grid, normalization: str = "column-stochastic",
                    drop_empty_rays: bool = False) -> SparseDesign:
    """Trace every ray and build the design.

    With ``drop_empty_rays`` the rays missing the grid are removed instead of
    raising; the surviving ray set is stored on the design.
    """
    if normalization not in NORMALIZATIONS:
        raise InvalidArgumentError(f"unknown normalization {normalization!r}; expected one of {NORMALIZATIONS}")
    r, c, v = trace_all(rays, grid)
    m = sp.csr_matrix((v, (r, c)), shape=(rays.d, grid.p))
    if drop_empty_rays:
        keep = np.flatnonzero(np.diff(m.indptr) > 0)
        if keep.size < rays.d:
            m = m[keep]
            rays = rays.subset(keep)
    raw = SparseDesign(m, "raw", grid, rays)
    raw.check_detectable()
    return SparseDesign(normalize(m, normalization), normalization, grid, rays)


def design_from_dense(a, normalization="raw", grid=None) -> SparseDesign:
    return SparseDesign(sp.csr_matrix(normalize(sp.csr_matrix(np.asarray(a, float)), normalization)),
                        normalization, grid)


def design_condition_number(a) -> float:
    """Ratio of extreme singular values, ``inf`` when numerically singular."""
    a = a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise InvalidArgumentError("expected a matrix")
    if a.shape[1] > DENSE_CAP:
        raise CapacityError(f"{a.shape[1]} columns exceed the dense cap of {DENSE_CAP}")
    if a.shape[0] < a.shape[1]:
        return math.inf
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0 or s[-1] < 1e-12 * s[0]:
        return math.inf
    return float(s[0] / s[-1])


def stack_rays(parts: Sequence[RaySet]) -> RaySet:
    return RaySet(np.concatenate([r.origins for r in parts]),
                  np.concatenate([r.directions for r in parts]))
