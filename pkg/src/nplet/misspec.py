"""The 2x2 identifiability counterexample and the positive identifiability check.

Six rays on a 2x2 grid of unit pixels give an injective, column-stochastic
design.  With data only on the top row, every (c, 1 - c, 0, 0) with
c in [0, 1] minimizes the KL criterion, so the misspecified target is a
segment rather than a point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import InvalidArgumentError
from .geometry import Grid, RaySet, SparseDesign, assemble_design, design_from_dense
from .model import kl_objective
from .mri import MixingDesign, nonexpansiveness_check
from .recon import SolverConfig, solve
from .rng import STAGE_START, stream

SQRT2 = math.sqrt(2.0)
RAW_MATRIX = np.array([
    [1, 1, 0, 0],
    [0, 0, 1, 1],
    [1, 0, 1, 0],
    [0, 1, 0, 1],
    [0, SQRT2, SQRT2, 0],
    [SQRT2, 0, 0, SQRT2],
], dtype=float)
TARGET = np.array([1.0, 0, 0, 0, 0, 0])
MIN_VALUE = math.log(2.0 + SQRT2) + 1.0
SOLVER = SolverConfig(max_iters=10000, rel_tol=1e-12)


@dataclass(frozen=True)
class CounterexampleProblem:
    raw: np.ndarray
    design: SparseDesign
    target: np.ndarray

    @property
    def det_gram(self) -> float:
        return float(np.linalg.det(self.raw.T @ self.raw))


def counterexample_rays() -> RaySet:
    """The six rays on the 2x2 grid with extent 1 (pixels of side 1)."""
    starts = [(-2, 0.5), (-2, -0.5), (-0.5, -2), (0.5, -2), (-2, -2), (2, -2)]
    ends = [(2, 0.5), (2, -0.5), (-0.5, 2), (0.5, 2), (2, 2), (-2, 2)]
    return RaySet.from_points(starts, ends, "counterexample")


def counterexample_problem(from_geometry: bool = False) -> CounterexampleProblem:
    if from_geometry:
        g = Grid(2, 2, 1.0)
        raw = assemble_design(counterexample_rays(), g, "raw").dense()
        design = assemble_design(counterexample_rays(), g, "column-stochastic")
    else:
        raw = RAW_MATRIX.copy()
        design = design_from_dense(raw, "column-stochastic", Grid(2, 2, 1.0))
    return CounterexampleProblem(raw, design, TARGET.copy())


def counterexample_objective(lam, prob: Optional[CounterexampleProblem] = None) -> float:
    prob = prob or counterexample_problem()
    return kl_objective(lam, prob.target, prob.design)


def counterexample_solve(start, solver: SolverConfig = SOLVER, prob: Optional[CounterexampleProblem] = None):
    """MLEM (GEM with beta = 0) on the counterexample from ``start``."""
    prob = prob or counterexample_problem()
    start = np.asarray(start, dtype=float)
    if start.shape != (4,) or np.any(start < 0) or start[0] + start[1] <= 0:
        raise InvalidArgumentError("start must be a nonnegative 4-vector with lambda1 + lambda2 > 0")
    return solve(prob.target, prob.design, solver, start).result


def random_starts(n: int, seed: int = 0) -> np.ndarray:
    return stream(seed, STAGE_START).uniform(0.01, 2.0, size=(n, 4))


@dataclass
class GridOracle:
    min_value: float
    minimizer: np.ndarray
    near_minimizers: np.ndarray
    step: float


def counterexample_grid_oracle(resolution: int, upper: float = 2.0, keep: int = 200) -> GridOracle:
    """Brute-force minimum of the KL criterion over a uniform grid on [0, upper]^4."""
    if resolution < 10:
        raise InvalidArgumentError("resolution must be >= 10")
    a = RAW_MATRIX / RAW_MATRIX.sum(axis=0)
    axis = np.linspace(0.0, upper, resolution)
    l2, l3, l4 = np.meshgrid(axis, axis, axis, indexing="ij")
    rest = np.stack([l2.ravel(), l3.ravel(), l4.ravel()], axis=1)
    best = math.inf
    arg = None
    near: List[np.ndarray] = []
    vals_all = []
    for v1 in axis:
        lam = np.column_stack([np.full(len(rest), v1), rest])
        proj0 = lam @ a[0]
        with np.errstate(divide="ignore"):
            vals = -np.log(proj0) + lam.sum(axis=1)  # sum_i (A lam)_i = sum_j lam_j
        k = int(np.argmin(vals))
        if vals[k] < best:
            best, arg = float(vals[k]), lam[k].copy()
        order = np.argsort(vals)[:keep]
        near.append(lam[order])
        vals_all.append(vals[order])
    vals_all = np.concatenate(vals_all)
    near = np.concatenate(near)
    order = np.argsort(vals_all)[:keep]
    return GridOracle(best, arg, near[order], upper / (resolution - 1))


@dataclass
class IdentifiabilityReport:
    identifiable: bool
    injective: bool
    nonexpansive: bool
    minimizers: np.ndarray
    spread: float
    min_curvature: float
    violating: np.ndarray


def identifiability_positive_check(mixing: MixingDesign, truth, n_starts: int = 20, n_dirs: int = 50,
                                   seed: int = 0, agree_tol: float = 1e-6,
                                   solver: SolverConfig = SolverConfig(max_iters=1000, rel_tol=0.0)):
    """Multi-start KL projections onto the prior model plus a curvature probe.

    The default solver runs a fixed iteration count: objective-based stopping
    resolves the minimizer only to about sqrt(machine eps), too coarse for a
    1e-6 agreement test.

    A failure is reported, not raised: the counterexample is expected to fail.
    """
    lam_true = np.asarray(getattr(truth, "values", truth), dtype=float)
    injective = bool(np.isfinite(mixing.condition_number))
    ne = nonexpansiveness_check(lam_true, mixing)
    rng = stream(seed, STAGE_START, 1)
    sols = []
    for _ in range(n_starts):
        start = rng.uniform(0.05, 2.0, size=mixing.p_m) * max(lam_true.sum() / mixing.col_sums.sum(), 1e-12)
        sols.append(solve(lam_true, mixing.design, solver, start).result)
    sols = np.array(sols)
    spread = float(np.max(np.ptp(sols, axis=0)))
    center = sols.mean(axis=0)
    # curvature of L(. | Lambda*, A_M, 1) along random directions at the solution
    proj = mixing.forward(center)
    live = lam_true > 0
    curv = math.inf
    for _ in range(n_dirs):
        v = rng.standard_normal(mixing.p_m)
        # keep the direction feasible at active bounds
        v[center <= 1e-12] = np.abs(v[center <= 1e-12])
        v /= np.linalg.norm(v)
        av = mixing.forward(v)
        with np.errstate(divide="ignore", invalid="ignore"):
            c = float(np.sum(lam_true[live] * av[live] ** 2 / proj[live] ** 2))
        curv = min(curv, c)
    ok = injective and ne.holds and spread <= agree_tol and curv > 0
    return IdentifiabilityReport(ok, injective, ne.holds, sols, spread, curv, ne.violating)


def counterexample_mixing() -> MixingDesign:
    return MixingDesign(counterexample_problem().design.dense())
