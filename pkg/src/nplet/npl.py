"""Binned nonparametric posterior learning (NPL) for emission tomography.

Each draw b:
  1. WLB draw of the segment activities on the reduced design A_M,
  2. gamma perturbation of the counts mixed with theta = rho t pseudo-counts
     from A_M lambda_M,
  3. penalized reconstruction with coefficient beta^t / t.
Every random stage of draw b reads its own counter-based stream keyed by
(seed, b, stage), so archives do not depend on scheduling.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import InvalidArgumentError, NplError
from .geometry import SparseDesign
from .model import PenaltyParams, Sinogram
from .mri import MIXING_SOLVER, MixingDesign, MixingDraw, wlb_sample
from .recon import SolverConfig, solve
from .rng import STAGE_PERTURB, gamma_general_shape, stream


@dataclass(frozen=True)
class NplConfig:
    rho: float = 0.0
    B: int = 100
    beta: float = 0.0  # beta^t; the solver uses beta^t / t
    penalty: Optional[PenaltyParams] = PenaltyParams()
    solver: SolverConfig = SolverConfig()
    mixing_solver: SolverConfig = MIXING_SOLVER
    seed: int = 0
    deterministic: bool = False  # replace gamma draws by their means (oracle mode)

    def __post_init__(self):
        if self.rho < 0:
            raise InvalidArgumentError("rho must be >= 0")
        if self.B < 1:
            raise InvalidArgumentError("B must be >= 1")
        if self.beta < 0:
            raise InvalidArgumentError("beta must be >= 0")
        if self.beta > 0 and self.penalty is None:
            raise InvalidArgumentError("beta > 0 needs penalty parameters")
        if self.seed < 0:
            raise InvalidArgumentError("seed must be non-negative")


@dataclass
class DrawReport:
    index: int
    iterations: int = 0
    converged: bool = False
    failed: bool = False
    message: str = ""
    objective: float = float("nan")


@dataclass
class SampleArchive:
    draws: np.ndarray  # (B, p); rows of failed draws are NaN
    config: NplConfig
    t: float
    reports: List[DrawReport] = field(default_factory=list)
    kind: str = "npl"

    @property
    def B(self) -> int:
        return self.draws.shape[0]

    @property
    def ok(self) -> np.ndarray:
        return np.array([not r.failed for r in self.reports], dtype=bool)

    def successful(self) -> np.ndarray:
        return self.draws[self.ok]

    def draw_keys(self):
        return [(self.config.seed, r.index) for r in self.reports]


def perturb_intensities(data: Sinogram, mixing_draw, rho: float, t: Optional[float] = None,
                        seed: int = 0, b: int = 0, deterministic: bool = False) -> Sinogram:
    """Lambda~_b,i ~ Gamma(Y_i + theta Lambda~_M,i, 1/(theta + t)), theta = rho t."""
    if rho < 0:
        raise InvalidArgumentError("rho must be >= 0")
    t = data.t if t is None else t
    if not t > 0:
        raise InvalidArgumentError("t must be positive")
    theta = rho * t
    shape = np.asarray(data.values, dtype=float)
    if theta > 0:
        pseudo = mixing_draw.Lambda_m if isinstance(mixing_draw, MixingDraw) else np.asarray(mixing_draw, float)
        shape = shape + theta * pseudo
    scale = 1.0 / (theta + t)
    if deterministic:
        return Sinogram(shape * scale, 1.0)
    g = gamma_general_shape(shape, stream(seed, b, STAGE_PERTURB))
    return Sinogram(g * scale, 1.0)


def _solver_for(config: NplConfig, t: float) -> SolverConfig:
    beta = config.beta / t
    if beta > 0:
        return dataclasses.replace(config.solver, beta=beta, penalty=config.penalty)
    return dataclasses.replace(config.solver, beta=0.0)


def npl_draw_report(data: Sinogram, design: SparseDesign, mixing: Optional[MixingDesign],
                    config: NplConfig, b: int):
    """One NPL draw and its solver report."""
    t = data.t
    if config.rho > 0:
        if mixing is None:
            raise InvalidArgumentError("rho > 0 needs a mixing design")
        md = wlb_sample(data, mixing, config.seed, config.mixing_solver, b=b,
                        deterministic=config.deterministic)
    else:
        md = None
    pert = perturb_intensities(data, md, config.rho, t, config.seed, b, config.deterministic)
    return solve(pert, design, _solver_for(config, t))


def npl_draw(data: Sinogram, design: SparseDesign, mixing: Optional[MixingDesign],
             config: NplConfig, b: int) -> np.ndarray:
    return npl_draw_report(data, design, mixing, config, b).result


def _run_chunk(args):
    data, design, mixing, config, indices = args
    out = []
    for b in indices:
        try:
            rep = npl_draw_report(data, design, mixing, config, b)
            out.append((b, rep.result, DrawReport(b, rep.iterations, rep.converged, False, "",
                                                  rep.objective_final)))
        except (NplError, ArithmeticError, ValueError) as exc:
            out.append((b, None, DrawReport(b, 0, False, True, f"{type(exc).__name__}: {exc}")))
    return out


def npl_sample(data: Sinogram, design: SparseDesign, mixing: Optional[MixingDesign],
               config: NplConfig, workers: int = 1, progress=None) -> SampleArchive:
    """B independent draws; a failed draw is flagged and its row left as NaN."""
    if workers < 1:
        raise InvalidArgumentError("workers must be >= 1")
    indices = list(range(config.B))
    draws = np.full((config.B, design.p), np.nan)
    reports: List[Optional[DrawReport]] = [None] * config.B

    def store(chunk):
        for b, img, rep in chunk:
            if img is not None:
                draws[b] = img
            reports[b] = rep
            if progress is not None:
                progress(b)

    if workers == 1:
        for b in indices:
            store(_run_chunk((data, design, mixing, config, [b])))
    else:
        n_chunks = min(config.B, 4 * workers)
        chunks = [indices[k::n_chunks] for k in range(n_chunks)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for res in ex.map(_run_chunk, [(data, design, mixing, config, c) for c in chunks]):
                store(res)
    return SampleArchive(draws, config, data.t, reports)
