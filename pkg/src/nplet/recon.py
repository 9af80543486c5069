"""MLEM and penalized GEM reconstruction by optimization transfer.

The GEM update minimizes, pixel by pixel, the sum of the EM surrogate of the
Poisson term and a separable quadratic majorizer of the log-cosh penalty.  The
quadratic majorizer combines Huber's curvature bound psi(u) <= psi(u0) +
omega(u0)(u^2 - u0^2)/2 with De Pierro's split of (x_j - x_k)^2, which gives the
closed-form positive root used in ``gem_step``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import _kernels
from .errors import DegenerateSupportError, InvalidArgumentError, NumericError
from .geometry import SparseDesign
from .model import (PenaltyParams, _check_image, _values, neighbor_pairs,
                    penalty_curvature, penalty_value, poisson_nll_from_projection, psi)

CLAMP = 1e-300


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 500
    rel_tol: float = 1e-9
    beta: float = 0.0
    penalty: Optional[PenaltyParams] = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidArgumentError("max_iters must be >= 1")
        if self.rel_tol < 0:
            raise InvalidArgumentError("rel_tol must be >= 0")
        if self.beta < 0:
            raise InvalidArgumentError("beta must be >= 0")
        if self.beta > 0 and self.penalty is None:
            raise InvalidArgumentError("beta > 0 needs penalty parameters")

    @property
    def penalized(self) -> bool:
        return self.beta > 0 and self.penalty is not None


@dataclass
class SolveReport:
    result: np.ndarray
    iterations: int
    objective_trace: List[float] = field(default_factory=list)
    converged: bool = False

    @property
    def objective_final(self) -> float:
        return self.objective_trace[-1]


def _shape(design: SparseDesign, p: int):
    if design.grid is not None:
        return design.grid.height, design.grid.width
    n = int(round(np.sqrt(p)))
    if n * n != p:
        raise InvalidArgumentError("penalized solves need a design with an attached grid")
    return n, n


def _ratio(y, proj):
    """y / proj with 0 where y == 0; raises when y > 0 sees zero intensity."""
    out, bad = _kernels.em_ratio(y, proj)
    if bad >= 0:
        raise DegenerateSupportError(f"LOR {bad} has data but zero forward projection")
    return out


def _mlem_from_projection(lam, y, proj, design: SparseDesign):
    return _gem_update(lam, y, proj, design, 0.0)


def mlem_step(current, data, design: SparseDesign) -> np.ndarray:
    """One Shepp-Vardi EM update on L(lambda | data, A, 1)."""
    lam = _check_image(current, design)
    y = _values(data, design)
    lam = np.where(lam < CLAMP, 0.0, lam)
    return _mlem_from_projection(lam, y, design.forward(lam), design)


def neighbor_sums(lam, params: PenaltyParams, shape):
    """S1_j = sum_k w omega(l_j - l_k) and S2_j = sum_k w omega (l_j + l_k) over 8-neighbors."""
    img = np.asarray(lam, dtype=float).reshape(shape)
    s1 = np.zeros(shape)
    s2 = np.zeros(shape)
    for a, b, kind in neighbor_pairs(shape):
        w = params.edge_weight if kind == "edge" else params.diag_weight
        if w == 0:
            continue
        xa, xb = img[a], img[b]
        wo = w * penalty_curvature(xa - xb, params)
        ws = wo * (xa + xb)
        s1[a] += wo
        s1[b] += wo
        s2[a] += ws
        s2[b] += ws
    return s1.ravel(), s2.ravel()


def _penalty_state(lam, params: PenaltyParams, shape):
    """(penalty value, S1, S2) at lam from the compiled kernel."""
    img = np.ascontiguousarray(np.asarray(lam, dtype=float).reshape(shape))
    return _kernels.penalty_terms(img, params.zeta, params.nu, params.edge_weight, params.diag_weight)


def _gem_update(lam, y, proj, design: SparseDesign, beta, s1=None, s2=None):
    """EM step followed, when beta > 0, by the positive root of the per-pixel surrogate quadratic.

    With p_j = 4 S1_j, lambda_phi = S2_j / (2 S1_j) and c = beta p_j / sum_i a_ij the root is
    written as 2x/(sqrt(b^2+4cx)+b) for b >= 0 and (sqrt(b^2+4cx)-b)/(2c) otherwise, b = 1 - c lambda_phi.
    """
    back = design.back(_ratio(y, proj))
    if beta == 0 or s1 is None:
        beta = 0.0
        s1 = s2 = np.zeros(0)
    out, finite = _kernels.gem_update(lam, back, design.col_sums, s1, s2, float(beta), CLAMP)
    if not finite:
        raise NumericError("non-finite GEM update (check beta, penalty and data scale)")
    return out


def gem_step(current, data, design: SparseDesign, config: SolverConfig) -> np.ndarray:
    """One closed-form GEM update; identical to ``mlem_step`` when beta = 0."""
    lam = _check_image(current, design)
    y = _values(data, design)
    lam = np.where(lam < CLAMP, 0.0, lam)
    if not config.penalized:
        return _mlem_from_projection(lam, y, design.forward(lam), design)
    _, s1, s2 = _penalty_state(lam, config.penalty, _shape(design, lam.size))
    return _gem_update(lam, y, design.forward(lam), design, config.beta, s1, s2)


def objective(lam, data, design: SparseDesign, config: SolverConfig) -> float:
    """L_p(lambda | data, A, 1, beta)."""
    y = _values(data, design)
    lam = _check_image(lam, design)
    val = poisson_nll_from_projection(y, design.forward(lam), 1.0)
    if config.penalized:
        val += config.beta * penalty_value(lam, config.penalty, _shape(design, lam.size))
    return val


def default_start(data, design: SparseDesign) -> np.ndarray:
    y = _values(data, design)
    return np.full(design.p, y.sum() / design.col_sums.sum())


def solve(data, design: SparseDesign, config: SolverConfig = SolverConfig(), start=None) -> SolveReport:
    """Iterate GEM until the relative objective change drops below rel_tol."""
    y = _values(data, design)
    lam = default_start(y, design) if start is None else _check_image(start, design).copy()
    if np.any(lam < 0):
        raise InvalidArgumentError("start image must be nonnegative")
    lam[lam < CLAMP] = 0.0
    shape = _shape(design, lam.size) if config.penalized else None
    beta = config.beta if config.penalized else 0.0

    def state(x):
        proj = design.forward(x)
        val = poisson_nll_from_projection(y, proj, 1.0)
        if not beta:
            return proj, val, None, None
        pv, s1, s2 = _penalty_state(x, config.penalty, shape)
        return proj, val + beta * pv, s1, s2

    proj, val, s1, s2 = state(lam)
    trace = [val]
    converged = False
    it = 0
    while it < config.max_iters:
        lam = _gem_update(lam, y, proj, design, beta, s1, s2)
        it += 1
        proj, val, s1, s2 = state(lam)
        trace.append(val)
        prev = trace[-2]
        if np.isfinite(val) and abs(val - prev) / (1.0 + abs(val)) < config.rel_tol:
            converged = True
            break
    return SolveReport(lam, it, trace, converged)


def lambda_opt(truth, design: SparseDesign, beta_min: float, penalty: PenaltyParams,
               max_iters: int = 500, rel_tol: float = 1e-9, start=None) -> SolveReport:
    """Penalty-selected target: argmin L_p(lambda | A lambda*, A, 1, beta_min)."""
    if not beta_min > 0:
        raise InvalidArgumentError("beta_min must be positive")
    target = design.forward(_check_image(truth, design))
    cfg = SolverConfig(max_iters=max_iters, rel_tol=rel_tol, beta=beta_min, penalty=penalty)
    return solve(target, design, cfg, start)


# ---------------------------------------------------------------------------
# Surrogates, kept separate from the update so the tests can check the update
# against an independently written majorizer.

def surrogate_likelihood(lam, lam_r, data, design: SparseDesign) -> float:
    """EM surrogate Q_L(lam; lam_r) including its constant; equals L at lam_r.

    Q_L = sum_ij c_ij f_i(lam_j Lr_i / lam_r_j) with c_ij = a_ij lam_r_j / Lr_i and
    f_i(x) = x - y_i log x.  Requires lam_j > 0 wherever lam_r_j > 0.
    """
    y = _values(data, design)
    lam = _check_image(lam, design)
    lam_r = _check_image(lam_r, design)
    coo = design.matrix.tocoo()
    proj_r = design.forward(lam_r)
    i, j, a = coo.row, coo.col, coo.data
    live = lam_r[j] > 0
    i, j, a = i[live], j[live], a[live]
    c = a * lam_r[j] / proj_r[i]
    x = lam[j] * proj_r[i] / lam_r[j]
    yl = y[i]
    terms = c * x
    pos = yl > 0
    if np.any(x[pos] <= 0):
        return np.inf
    terms[pos] -= c[pos] * yl[pos] * np.log(x[pos])
    # pixels frozen at zero in lam_r contribute only their linear term
    dead = lam_r == 0
    lin = float(np.dot(design.col_sums[dead], lam[dead]))
    return float(terms.sum()) + lin


def surrogate_penalty(lam, lam_r, params: PenaltyParams, shape) -> float:
    """Pairwise quadratic majorizer of the penalty, exact at lam_r."""
    x = np.asarray(lam, dtype=float).reshape(shape)
    xr = np.asarray(lam_r, dtype=float).reshape(shape)
    total = 0.0
    for a, b, kind in neighbor_pairs(shape):
        w = params.edge_weight if kind == "edge" else params.diag_weight
        u0 = xr[a] - xr[b]
        om = penalty_curvature(u0, params)
        half = 0.5 * (xr[a] + xr[b])
        split = 2.0 * (x[a] - half) ** 2 + 2.0 * (x[b] - half) ** 2
        # ordered pairs (j,k) and (k,j) give identical terms
        total += 2.0 * w * float(np.sum(psi(u0, params) + 0.5 * om * (split - u0 * u0)))
    return total
