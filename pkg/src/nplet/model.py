"""Phantoms, Poisson simulation, index sets and the scalar objectives.

Images are plain float arrays of length p (row-major over the grid);
sinograms carry their exposure alongside the values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import INFEASIBLE, DimensionMismatchError, InvalidArgumentError
from .geometry import Grid, SparseDesign
from .rng import STAGE_SIMULATE, stream

LOG2 = math.log(2.0)
DIAG_WEIGHT = math.sqrt(2.0) / 2.0


@dataclass(frozen=True)
class Sinogram:
    values: np.ndarray
    t: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise InvalidArgumentError("sinogram values must be finite and nonnegative")
        if not self.t > 0:
            raise InvalidArgumentError("exposure t must be positive")
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return self.values.size

    @property
    def is_counts(self) -> bool:
        return bool(np.all(self.values == np.floor(self.values)))


@dataclass(frozen=True)
class PenaltyParams:
    zeta: float = 0.05
    nu: float = 0.15
    edge_weight: float = 1.0
    diag_weight: float = DIAG_WEIGHT

    def __post_init__(self):
        if not self.zeta > 0:
            raise InvalidArgumentError("zeta must be positive")
        if not 0.0 <= self.nu <= 1.0:
            raise InvalidArgumentError("nu must lie in [0, 1]")
        if self.edge_weight < 0 or self.diag_weight < 0:
            raise InvalidArgumentError("neighbor weights must be nonnegative")


@dataclass(frozen=True)
class IndexSets:
    i0: np.ndarray
    i1: np.ndarray


def make_disk_phantom(grid: Grid, inner_value=2.0, outer_value=1.0, r_in=0.25, r_out=None,
                      center=(0.0, 0.0)) -> np.ndarray:
    """Disk of ``inner_value`` inside an annulus of ``outer_value``.

    When ``r_out`` reaches the extent the outer value fills the whole image,
    corners included, which is the background-filled variant.
    """
    if r_out is None:
        r_out = grid.extent
    if inner_value < 0 or outer_value < 0:
        raise InvalidArgumentError("phantom values must be nonnegative")
    if not 0 <= r_in < r_out <= grid.extent:
        raise InvalidArgumentError("need 0 <= r_in < r_out <= extent")
    x, y = grid.centers()
    r = np.hypot(x - center[0], y - center[1])
    img = np.zeros(grid.p)
    if r_out >= grid.extent:
        img[:] = outer_value
    else:
        img[r < r_out] = outer_value
    img[r < r_in] = inner_value
    return img


def simulate_sinogram(truth, design: SparseDesign, t: float, seed: int) -> Sinogram:
    """Y_i ~ Po(t * a_i^T lambda), one Philox stream for the whole sinogram."""
    if not t > 0:
        raise InvalidArgumentError("exposure t must be positive")
    lam = _check_image(truth, design)
    mean = t * design.forward(lam)
    rng = stream(seed, STAGE_SIMULATE)
    return Sinogram(rng.poisson(mean).astype(float), t)


def index_sets(intensities, tol=None) -> IndexSets:
    v = intensities.values if isinstance(intensities, Sinogram) else np.asarray(intensities, float)
    if tol is None:
        tol = 0.0 if np.all(v == np.floor(v)) else 1e-12 * (v.max() if v.size else 0.0)
    if tol < 0:
        raise InvalidArgumentError("tol must be nonnegative")
    zero = v <= tol
    return IndexSets(np.flatnonzero(zero), np.flatnonzero(~zero))


def _check_image(lam, design: SparseDesign) -> np.ndarray:
    lam = np.asarray(lam, dtype=float).ravel()
    if lam.size != design.p:
        raise DimensionMismatchError(f"image has {lam.size} pixels, design has {design.p}")
    return lam


def _values(data, design: SparseDesign) -> np.ndarray:
    y = data.values if isinstance(data, Sinogram) else np.asarray(data, dtype=float).ravel()
    if y.size != design.d:
        raise DimensionMismatchError(f"sinogram has {y.size} LORs, design has {design.d}")
    return y


def poisson_nll_from_projection(y, proj, t=1.0) -> float:
    """Sum of -y log(t*proj) + t*proj with 0 log 0 = 0; INFEASIBLE on log(0) with y > 0."""
    pos = y > 0
    if np.any(proj[pos] <= 0):
        return INFEASIBLE
    return float(np.sum(t * proj) - np.dot(y[pos], np.log(t * proj[pos])))


def neg_log_likelihood(lam, data, design: SparseDesign, t=None) -> float:
    lam = _check_image(lam, design)
    y = _values(data, design)
    if t is None:
        t = data.t if isinstance(data, Sinogram) else 1.0
    return poisson_nll_from_projection(y, design.forward(lam), t)


def log_cosh(x):
    """Overflow-free log cosh; small arguments use log1p(2 sinh^2(x/2)) to keep relative accuracy."""
    ax = np.abs(np.asarray(x, dtype=float))
    big = ax + np.log1p(np.exp(-2.0 * ax)) - LOG2
    sh = np.sinh(0.5 * np.minimum(ax, 1.0))
    return np.where(ax < 1.0, np.log1p(2.0 * sh * sh), big)


def psi(u, params: PenaltyParams):
    """Pairwise potential (1-nu) zeta log cosh(u/zeta) + nu u^2 / 2."""
    z, nu = params.zeta, params.nu
    return (1.0 - nu) * z * log_cosh(u / z) + 0.5 * nu * u * u


def penalty_curvature(u, params: PenaltyParams):
    """omega(u) = psi'(u)/u with the continuous limit at u = 0."""
    u = np.asarray(u, dtype=float)
    z, nu = params.zeta, params.nu
    au = np.abs(u)
    small = au < 1e-8 * z
    safe = np.where(small, 1.0, au)
    # tanh(x)/x ~ 1 - x^2/3 near 0
    val = np.where(small, (1.0 - nu) / z * (1.0 - (au / z) ** 2 / 3.0),
                   (1.0 - nu) * np.tanh(safe / z) / safe)
    out = val + nu
    return out if out.ndim else float(out)


# the four "forward" neighbor offsets (drow, dcol); each unordered pair once
_OFFSETS = ((0, 1, "edge"), (1, 0, "edge"), (1, 1, "diag"), (1, -1, "diag"))


def neighbor_pairs(shape):
    """Yield (slice_a, slice_b, kind) with image[a] and image[b] neighbors."""
    h, w = shape
    for dr, dc, kind in _OFFSETS:
        ra = slice(0, h - dr)
        rb = slice(dr, h)
        if dc >= 0:
            ca, cb = slice(0, w - dc), slice(dc, w)
        else:
            ca, cb = slice(-dc, w), slice(0, w + dc)
        yield (ra, ca), (rb, cb), kind


def _as_2d(lam, shape):
    lam = np.asarray(lam, dtype=float)
    if shape is None:
        if lam.ndim == 2:
            return lam
        n = int(round(math.sqrt(lam.size)))
        if n * n != lam.size:
            raise DimensionMismatchError("cannot infer a square grid; pass shape=(height, width)")
        shape = (n, n)
    return lam.reshape(shape)


def penalty_value(lam, params: PenaltyParams, shape=None) -> float:
    """Double sum over ordered 8-neighbor pairs of w * psi(difference).

    Each unordered pair contributes twice, once from each end.
    ``shape`` is (height, width); square images may omit it.
    """
    img = _as_2d(lam, shape)
    total = 0.0
    for a, b, kind in neighbor_pairs(img.shape):
        w = params.edge_weight if kind == "edge" else params.diag_weight
        if w == 0:
            continue
        total += 2.0 * w * float(np.sum(psi(img[a] - img[b], params)))
    return total


def penalized_objective(lam, data, design: SparseDesign, t=None, beta=0.0,
                        params: PenaltyParams = None, shape=None) -> float:
    if beta < 0:
        raise InvalidArgumentError("beta must be nonnegative")
    val = neg_log_likelihood(lam, data, design, t)
    if beta == 0 or params is None:
        return val
    if shape is None and design.grid is not None:
        shape = (design.grid.height, design.grid.width)
    return val + beta * penalty_value(lam, params, shape)


def kl_objective(lam, target, design: SparseDesign) -> float:
    """L(lambda | Lambda*, A, 1): the misspecified KL criterion."""
    y = _values(target, design)
    return neg_log_likelihood(lam, y, design, 1.0)


def normalize_total(img, total) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    s = img.sum()
    if s <= 0:
        raise InvalidArgumentError("cannot normalize an all-zero image")
    return img * (total / s)
