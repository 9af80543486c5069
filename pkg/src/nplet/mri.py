"""Segmentation-based prior model: reduced design, WLB mixing draws and the
support (mask) diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateDataError, DimensionMismatchError, InvalidSegmentationError
from .geometry import DENSE_CAP, RaySet, SparseDesign, design_condition_number
from .model import Sinogram, index_sets
from .recon import SolverConfig, solve
from .rng import STAGE_WEIGHTS, STAGE_WLB, gamma_integer_shape, stream

DEFAULT_COND_CAP = 1e6
MIXING_SOLVER = SolverConfig(max_iters=5000, rel_tol=1e-13)


@dataclass(frozen=True)
class Segmentation:
    """r label maps over the p pixels; label -1 means outside every segment."""

    labels: tuple
    counts: tuple

    def __init__(self, labels: Sequence, counts: Optional[Sequence[int]] = None):
        maps = tuple(np.asarray(l, dtype=np.int64).ravel().copy() for l in labels)
        if not maps:
            raise InvalidSegmentationError("need at least one label image")
        p = maps[0].size
        if any(m.size != p for m in maps):
            raise DimensionMismatchError("label images differ in size")
        if counts is None:
            counts = [int(m.max()) + 1 if m.size else 0 for m in maps]
        counts = tuple(int(c) for c in counts)
        if len(counts) != len(maps):
            raise InvalidSegmentationError("one segment count per label image is required")
        for k, (m, c) in enumerate(zip(maps, counts)):
            if np.any(m < -1) or np.any(m >= c):
                raise InvalidSegmentationError(f"image {k}: labels must lie in -1..{c - 1}")
        for m in maps:
            m.setflags(write=False)
        object.__setattr__(self, "labels", maps)
        object.__setattr__(self, "counts", counts)

    @property
    def r(self) -> int:
        return len(self.labels)

    @property
    def p(self) -> int:
        return self.labels[0].size

    @property
    def p_m(self) -> int:
        return sum(self.counts)

    def indicator(self) -> sp.csr_matrix:
        """p x p_M matrix S with S[j, col(k, s)] = 1 when pixel j has label s in image k."""
        blocks = []
        for m, c in zip(self.labels, self.counts):
            inside = np.flatnonzero(m >= 0)
            blocks.append(sp.csr_matrix((np.ones(inside.size), (inside, m[inside])), shape=(m.size, c)))
        return sp.hstack(blocks).tocsr()

    def expand(self, lam_m) -> np.ndarray:
        """Sum over images of the piecewise-constant images defined by lam_M."""
        return self.indicator() @ np.asarray(lam_m, dtype=float)

    def with_mask(self, keep) -> "Segmentation":
        """Drop pixels outside ``keep`` from every segment and delete empty segments."""
        keep = np.asarray(keep, dtype=bool).ravel()
        maps, counts = [], []
        for m in self.labels:
            m2 = np.where(keep, m, -1)
            used = np.unique(m2[m2 >= 0])
            remap = np.full(max(int(m.max()) + 1, 1), -1, dtype=np.int64)
            remap[used] = np.arange(used.size)
            maps.append(np.where(m2 >= 0, remap[np.maximum(m2, 0)], -1))
            counts.append(int(used.size))
        return Segmentation(maps, counts)

    def __eq__(self, other):
        return (isinstance(other, Segmentation) and self.counts == other.counts
                and all(np.array_equal(a, b) for a, b in zip(self.labels, other.labels)))

    def __hash__(self):
        return hash((self.counts, tuple(m.tobytes() for m in self.labels)))


@dataclass(frozen=True, eq=False)
class MixingDesign:
    matrix: np.ndarray  # dense d x p_M
    segmentation: Optional[Segmentation] = None
    cond_cap: float = DEFAULT_COND_CAP
    col_sums: np.ndarray = field(init=False, repr=False)
    condition_number: float = field(init=False)
    design: SparseDesign = field(init=False, repr=False)

    def __post_init__(self):
        a = np.ascontiguousarray(self.matrix, dtype=float)
        if a.ndim != 2 or np.any(a < 0):
            raise InvalidSegmentationError("mixing design must be a nonnegative matrix")
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "col_sums", a.sum(axis=0))
        cond = design_condition_number(a) if a.shape[1] <= DENSE_CAP else np.inf
        object.__setattr__(self, "condition_number", cond)
        # the MLEM engine works on the sparse wrapper; dense storage is kept for the user
        object.__setattr__(self, "design", SparseDesign(sp.csr_matrix(a)))

    @property
    def well_conditioned(self) -> bool:
        return bool(np.isfinite(self.condition_number) and self.condition_number < self.cond_cap)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def p_m(self) -> int:
        return self.matrix.shape[1]

    def forward(self, lam_m) -> np.ndarray:
        return self.matrix @ np.asarray(lam_m, dtype=float)


@dataclass(frozen=True)
class MixingDraw:
    lambda_m: np.ndarray
    mixing: MixingDesign = field(repr=False)
    weights: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def Lambda_m(self) -> np.ndarray:
        return self.mixing.forward(self.lambda_m)


def reduce_design(design: SparseDesign, seg: Segmentation, cond_cap: float = DEFAULT_COND_CAP) -> MixingDesign:
    """A_M = A S: column (k, s) sums the design columns of segment s in image k."""
    if seg.p != design.p:
        raise DimensionMismatchError(f"segmentation has {seg.p} pixels, design has {design.p}")
    for k, (m, c) in enumerate(zip(seg.labels, seg.counts)):
        sizes = np.bincount(m[m >= 0], minlength=c)
        empty = np.flatnonzero(sizes == 0)
        if empty.size:
            raise InvalidSegmentationError(f"segment (k={k}, s={empty[0]}) is empty")
    a_m = (design.matrix @ seg.indicator()).toarray()
    return MixingDesign(a_m, seg, cond_cap)


def _mixing_solve(target, mixing: MixingDesign, solver: SolverConfig, start=None):
    return solve(target, mixing.design, solver, start)


def wlb_weights(counts, t, seed, b=0) -> np.ndarray:
    """Lambda~_i ~ Gamma(Y_i, 1/t) for the WLB step."""
    y = np.asarray(counts, dtype=float)
    if np.any(y != np.floor(y)):
        raise InvalidSegmentationError("WLB needs integer counts")
    return gamma_integer_shape(y, stream(seed, b, STAGE_WLB)) / t


def wlb_sample(data: Sinogram, mixing: MixingDesign, seed: int, solver: SolverConfig = MIXING_SOLVER,
               b: int = 0, deterministic: bool = False) -> MixingDraw:
    """Gamma-weight the counts, then MLEM on the dense reduced design.

    ``deterministic`` replaces the gamma draws by their means Y_i / t.
    """
    if data.d != mixing.d:
        raise DimensionMismatchError("sinogram and mixing design disagree on d")
    if deterministic:
        w = data.values / data.t
    else:
        w = wlb_weights(data.values, data.t, seed, b)
    if not np.any(w > 0):
        return MixingDraw(np.zeros(mixing.p_m), mixing, w)
    rep = _mixing_solve(w, mixing, solver)
    return MixingDraw(rep.result, mixing, w)


def weight_representation_sample(data: Sinogram, mixing: Optional[MixingDesign], seed: int,
                                 solver: SolverConfig = MIXING_SOLVER, b: int = 0) -> MixingDraw:
    """List-mode weighting: each recorded event gets an Exp(1) weight, LOR totals scaled by 1/t.

    Deliberately written event by event (no gamma sampler), so it can serve as
    an oracle for the WLB weights.
    """
    y = np.asarray(data.values)
    if np.any(y != np.floor(y)):
        raise InvalidSegmentationError("weight representation needs integer counts")
    n = y.astype(np.int64)
    rng = stream(seed, b, STAGE_WEIGHTS)
    events = np.repeat(np.arange(n.size), n)
    w_events = rng.standard_exponential(events.size)
    w = np.bincount(events, weights=w_events, minlength=n.size) / data.t
    if mixing is None:
        return MixingDraw(np.zeros(0), None, w)
    if not np.any(w > 0):
        return MixingDraw(np.zeros(mixing.p_m), mixing, w)
    return MixingDraw(_mixing_solve(w, mixing, solver).result, mixing, w)


@dataclass
class NonexpansivenessReport:
    holds: bool
    violating: np.ndarray
    lambda_m: np.ndarray
    Lambda_m: np.ndarray


def nonexpansiveness_check(truth, mixing: MixingDesign, tol: Optional[float] = None,
                           solver: SolverConfig = MIXING_SOLVER, start=None) -> NonexpansivenessReport:
    """Compare I_0 of the truth with I_0 of its KL projection onto the prior model."""
    lam_true = truth.values if isinstance(truth, Sinogram) else np.asarray(truth, dtype=float)
    if lam_true.size != mixing.d:
        raise DimensionMismatchError("intensity vector and mixing design disagree on d")
    if tol is None:
        tol = 1e-8 * max(lam_true.max(), 1e-300)
    sets = index_sets(lam_true, 0.0)
    if not np.any(lam_true > 0):
        lm = np.zeros(mixing.p_m)
        return NonexpansivenessReport(True, np.zeros(0, dtype=np.int64), lm, mixing.forward(lm))
    lm = _mixing_solve(lam_true, mixing, solver, start).result
    proj = mixing.forward(lm)
    bad = sets.i0[proj[sets.i0] > tol]
    return NonexpansivenessReport(bad.size == 0, bad, lm, proj)


def mask_preprocess(design: SparseDesign, seg: Segmentation, data: Sinogram,
                    rays: Optional[RaySet] = None, grid=None) -> Segmentation:
    """Restrict every segment to the estimated discrete convex hull of the support.

    For each zero-count ray the side facing the data is the one holding more
    back-projected counts among pixels that no zero ray touches.  A pixel is
    kept when its center lies strictly on the data side of every zero ray and
    the ray does not cross it.
    """
    rays = rays if rays is not None else design.rays
    grid = grid if grid is not None else design.grid
    if rays is None or grid is None:
        raise InvalidSegmentationError("mask preprocessing needs the ray geometry of the design")
    y = data.values
    if y.size != design.d:
        raise DimensionMismatchError("sinogram and design disagree on d")
    sets = index_sets(y, 0.0)
    if sets.i1.size == 0:
        raise DegenerateDataError("all LORs are zero; the support hull is empty")
    if sets.i0.size == 0:
        return seg
    a0 = design.matrix[sets.i0]
    touched = np.zeros(design.p, dtype=bool)
    touched[a0.indices] = True
    mass = design.back(y) * (~touched)
    cx, cy = grid.centers()
    keep = ~touched
    for i in sets.i0:
        o, u = rays.origins[i], rays.directions[i]
        side = u[0] * (cy - o[1]) - u[1] * (cx - o[0])
        plus = mass[side > 0].sum()
        minus = mass[side < 0].sum()
        sign = 1.0 if plus >= minus else -1.0
        keep &= sign * side > 0
    if not np.any(keep):
        raise DegenerateDataError("the estimated support hull contains no pixel")
    return seg.with_mask(keep)
