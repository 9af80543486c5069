"""Data-augmentation Gibbs sampler for the Poisson model and its mixing diagnostics.

The latent counts n_ij split each Y_i over the pixels on LOR i.  Given them,
the pixels are conditionally independent gammas.  The lag-1 autocorrelation of
the chain along direction h tends to the fraction of missing information
gamma(h) = 1 - h' F_aug^-1 h / h' F_obs^+ h, which is close to 1 for the
high-frequency modes of a tomographic design.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .errors import (DegenerateSupportError, InvalidArgumentError, PreconditionError,
                     UndefinedDirectionError)
from .geometry import SparseDesign
from .model import Sinogram, _check_image, _values
from .rng import STAGE_GIBBS, stream

INFINITE_REQUIREMENT = math.inf


@dataclass(frozen=True)
class GibbsConfig:
    alpha: float = 1.0
    beta: float = 1.0
    burn_in: int = 1000
    n_samples: int = 2000
    t: Optional[float] = None  # defaults to the exposure of the data
    seed: int = 0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise InvalidArgumentError("gamma prior parameters must be positive")
        if self.burn_in < 0 or self.n_samples < 1:
            raise InvalidArgumentError("need burn_in >= 0 and n_samples >= 1")
        if self.t is not None and not self.t >= 0:
            raise InvalidArgumentError("t must be >= 0")


@dataclass
class Chain:
    samples: np.ndarray  # (n_samples, p)
    config: GibbsConfig
    acceptance: float = 1.0
    kind: str = "gibbs"


class _RowLayout:
    """CSR rows padded to a common width for vectorized sequential binomials."""

    def __init__(self, design: SparseDesign):
        m = design.matrix
        nnz_row = np.diff(m.indptr)
        k = int(nnz_row.max()) if nnz_row.size else 0
        pos = np.arange(m.nnz) - np.repeat(m.indptr[:-1], nnz_row)
        rows = np.repeat(np.arange(m.shape[0]), nnz_row)
        self.cols = np.zeros((m.shape[0], k), dtype=np.int64)
        self.vals = np.zeros((m.shape[0], k))
        self.cols[rows, pos] = m.indices
        self.vals[rows, pos] = m.data
        self.rows, self.pos = rows, pos
        self.width = k


def _layout(design: SparseDesign) -> _RowLayout:
    lay = getattr(design, "_gibbs_layout", None)
    if lay is None:
        lay = _RowLayout(design)
        object.__setattr__(design, "_gibbs_layout", lay)
    return lay


def _latent_padded(lam, y, lay: _RowLayout, rng):
    w = lay.vals * lam[lay.cols]
    # suffix sums: the last nonzero cell of a row gets probability exactly 1
    suffix = np.cumsum(w[:, ::-1], axis=1)[:, ::-1]
    total = suffix[:, 0] if lay.width else np.zeros(y.size)
    if np.any((y > 0) & (total <= 0)):
        bad = np.flatnonzero((y > 0) & (total <= 0))[0]
        raise DegenerateSupportError(f"LOR {bad} has counts but zero intensity")
    remaining = y.astype(np.int64)
    n = np.zeros(w.shape, dtype=np.int64)
    for k in range(lay.width):
        pk = np.divide(w[:, k], suffix[:, k], out=np.zeros(y.size), where=suffix[:, k] > 0)
        np.clip(pk, 0.0, 1.0, out=pk)
        nk = rng.binomial(remaining, pk)
        n[:, k] = nk
        remaining -= nk
    return n


def gibbs_latent_step(lam, data, design: SparseDesign, rng) -> np.ndarray:
    """n_i ~ Multinomial(Y_i, a_ij lam_j / a_i'lam), returned in CSR data order."""
    lam = _check_image(lam, design)
    y = _values(data, design)
    if np.any(y != np.floor(y)):
        raise InvalidArgumentError("Gibbs latent step needs integer counts")
    lay = _layout(design)
    n = _latent_padded(lam, y, lay, rng)
    return n[lay.rows, lay.pos]


def gibbs_lambda_step(latents, design: SparseDesign, config: GibbsConfig, rng, t=None) -> np.ndarray:
    """lam_j ~ Gamma(sum_i n_ij + alpha, 1/(t A_j + beta))."""
    t = config.t if t is None else t
    if t is None:
        raise InvalidArgumentError("exposure t is required")
    nj = np.bincount(design.matrix.indices, weights=np.asarray(latents, dtype=float), minlength=design.p)
    return _lambda_from_colsums(nj, design, config, rng, t)


def _lambda_from_colsums(nj, design, config, rng, t):
    shape = nj + config.alpha
    scale = 1.0 / (t * design.col_sums + config.beta)
    return rng.standard_gamma(shape) * scale


def run_chain(data: Sinogram, design: SparseDesign, config: GibbsConfig, start, progress=None) -> Chain:
    lam = _check_image(start, design).copy()
    if np.any(lam <= 0):
        raise PreconditionError("the chain must start from a strictly positive image")
    y = _values(data, design)
    if np.any(y != np.floor(y)):
        raise InvalidArgumentError("Gibbs sampler needs integer counts")
    t = data.t if config.t is None else config.t
    lay = _layout(design)
    rng = stream(config.seed, STAGE_GIBBS)
    out = np.empty((config.n_samples, design.p))
    total = config.burn_in + config.n_samples
    for it in range(total):
        n = _latent_padded(lam, y, lay, rng)
        nj = np.bincount(lay.cols.ravel(), weights=n.ravel().astype(float), minlength=design.p)
        lam = _lambda_from_colsums(nj, design, config, rng, t)
        if it >= config.burn_in:
            out[it - config.burn_in] = lam
        if progress is not None:
            progress(it)
    return Chain(out, config)


@dataclass
class FisherPair:
    f_obs: np.ndarray
    f_aug_diag: np.ndarray
    eigvals: np.ndarray  # descending
    eigvecs: np.ndarray  # columns h_m
    rank_tol: float = 1e-10

    @property
    def f_aug(self) -> np.ndarray:
        return np.diag(self.f_aug_diag)

    @property
    def rank(self) -> int:
        return int(np.sum(self.eigvals > self.rank_tol * self.eigvals[0]))

    def pinv_quadratic(self, h) -> float:
        s = self.eigvals
        keep = s > self.rank_tol * s[0]
        c = self.eigvecs[:, keep].T @ h
        return float(np.sum(c * c / s[keep]))


def fisher_matrices(truth, design: SparseDesign, rank_tol: float = 1e-10) -> FisherPair:
    """F_obs = A' D^-1 A over LORs with positive intensity, F_aug = diag(A_j / lam_j)."""
    lam = _check_image(truth, design)
    if np.any(lam <= 0):
        raise PreconditionError("Fisher matrices need a strictly positive truth")
    if design.p > 6000:
        raise InvalidArgumentError("dense Fisher matrices are limited to p <= 6000")
    proj = design.forward(lam)
    live = proj > 0
    a = design.matrix[np.flatnonzero(live)]
    scaled = a.multiply(1.0 / np.sqrt(proj[live])[:, None]).tocsr()
    f_obs = (scaled.T @ scaled).toarray()
    f_obs = 0.5 * (f_obs + f_obs.T)
    s, v = np.linalg.eigh(f_obs)
    order = np.argsort(s)[::-1]
    s, v = s[order], v[:, order]
    s = np.maximum(s, 0.0)
    return FisherPair(f_obs, design.col_sums / lam, s, v, rank_tol)


def asymptotic_fraction(h, pair: FisherPair, kernel_tol: float = 1e-6) -> float:
    """gamma(h) = 1 - h' F_aug^-1 h / h' F_obs^+ h."""
    h = np.asarray(h, dtype=float)
    nrm = np.linalg.norm(h)
    if nrm == 0:
        raise InvalidArgumentError("direction must be nonzero")
    s = pair.eigvals
    keep = s > pair.rank_tol * s[0]
    c = pair.eigvecs.T @ h
    if np.linalg.norm(c[~keep]) > kernel_tol * nrm:
        raise UndefinedDirectionError("direction has a component in the kernel of F_obs")
    num = float(np.sum(h * h / pair.f_aug_diag))
    den = float(np.sum(c[keep] ** 2 / s[keep]))
    return 1.0 - num / den


def eigenmode_fractions(pair: FisherPair, m_max: Optional[int] = None) -> np.ndarray:
    """gamma(h_m) = 1 - s_m h_m' F_aug^-1 h_m for the leading modes, clipped to [0, 1]."""
    m = pair.rank if m_max is None else min(m_max, len(pair.eigvals))
    v = pair.eigvecs[:, :m]
    q = np.sum(v * v / pair.f_aug_diag[:, None], axis=0)
    return np.clip(1.0 - pair.eigvals[:m] * q, 0.0, 1.0)


def lag1_correlation(x) -> float:
    x = np.asarray(x, dtype=float)
    # rounding noise on a constant series is not variance
    if np.ptp(x) <= 1e-12 * np.max(np.abs(x)):
        return math.nan
    a, b = x[:-1], x[1:]
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
    if den == 0 or not np.isfinite(den):
        return math.nan
    return float(np.dot(a, b) / den)


def eigenmode_correlations(chain, pair: FisherPair, m_max: int) -> np.ndarray:
    """Lag-1 correlations of h_m' lam_k along the chain; NaN for constant series."""
    samples = chain.samples if isinstance(chain, Chain) else np.asarray(chain, dtype=float)
    if samples.shape[0] < 100:
        raise InvalidArgumentError("need at least 100 stored samples")
    m = min(m_max, pair.eigvecs.shape[1])
    proj = samples @ pair.eigvecs[:, :m]
    return np.array([lag1_correlation(proj[:, k]) for k in range(m)])


def green_sample_size(gamma: float):
    """ceil(100 (1 + gamma) / (1 - gamma)); infinite sentinel for gamma >= 1."""
    if gamma < 0:
        raise InvalidArgumentError("gamma must be >= 0")
    if gamma >= 1:
        return INFINITE_REQUIREMENT
    # round before ceil so 0.5 -> 300 exactly despite binary fractions
    return int(math.ceil(round(100.0 * (1.0 + gamma) / (1.0 - gamma), 9)))


def increasing_trend(values) -> bool:
    """Trend check for a noisy curve: positive Spearman correlation with the index
    and a last-quarter mean above the first-quarter mean (NaNs dropped)."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size < 8:
        raise InvalidArgumentError("need at least 8 finite values for a trend check")
    q = v.size // 4
    rho = stats.spearmanr(np.arange(v.size), v)[0]
    return bool(rho > 0 and v[-q:].mean() > v[:q].mean())
