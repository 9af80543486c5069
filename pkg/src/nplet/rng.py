"""Counter-based random streams.

Every random quantity in the package is drawn from a Philox generator keyed by
``(seed, *key)``.  Streams for different keys never overlap, so draw ``b`` of
a sampler produces the same numbers whether it runs first, last, alone or in a
worker process.
"""

import numpy as np

from .errors import InvalidArgumentError

# stage identifiers used as the last key component
STAGE_SIMULATE = 0
STAGE_WLB = 1
STAGE_PERTURB = 2
STAGE_GIBBS = 3
STAGE_WEIGHTS = 4
STAGE_START = 5
STAGE_PHANTOM = 6


def stream(seed: int, *key: int) -> np.random.Generator:
    if seed < 0:
        raise InvalidArgumentError("seed must be a non-negative integer")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def gamma_integer_shape(shape, rng: np.random.Generator, small_max: int = 32) -> np.ndarray:
    """Standard Γ(k, 1) draws for integer shapes k >= 0.

    Shapes up to ``small_max`` are sums of unit exponentials (exact, and the
    same representation as list-mode weighting); larger shapes go to numpy's
    Marsaglia-Tsang sampler.  Shape 0 gives exactly 0.
    """
    k = np.asarray(shape)
    if np.any(k < 0) or np.any(k != np.floor(k)):
        raise InvalidArgumentError("integer gamma shapes must be non-negative integers")
    k = k.astype(np.int64)
    out = np.zeros(k.shape, dtype=float)
    flat = k.ravel()
    res = out.ravel()
    small = (flat > 0) & (flat <= small_max)
    if np.any(small):
        ks = flat[small]
        e = rng.standard_exponential(int(ks.sum()))
        starts = np.concatenate(([0], np.cumsum(ks)[:-1]))
        res[small] = np.add.reduceat(e, starts)
    big = flat > small_max
    if np.any(big):
        res[big] = rng.standard_gamma(flat[big].astype(float))
    return res.reshape(k.shape)


def gamma_general_shape(shape, rng: np.random.Generator) -> np.ndarray:
    """Standard Γ(a, 1) draws for real a >= 0, with Γ(0, 1) the point mass at 0."""
    a = np.asarray(shape, dtype=float)
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise InvalidArgumentError("gamma shapes must be finite and non-negative")
    out = np.zeros(a.shape, dtype=float)
    pos = a > 0
    if np.any(pos):
        out[pos] = rng.standard_gamma(a[pos])
    return out
