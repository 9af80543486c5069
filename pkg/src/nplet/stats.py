"""Posterior summaries: pixelwise moments, credible bands, coverage and profiles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InsufficientDataError, InvalidArgumentError

COVERED, ABOVE, BELOW, OUTSIDE = 0, 1, 2, -1
STATUS_NAMES = {COVERED: "covered", ABOVE: "above", BELOW: "below", OUTSIDE: "outside"}


@dataclass
class Summary:
    mean: np.ndarray
    std: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    n_draws: int


@dataclass
class CoverageMap:
    status: np.ndarray  # per pixel, OUTSIDE off the mask
    mask: np.ndarray
    fraction: float


def _draw_matrix(archive) -> np.ndarray:
    if hasattr(archive, "successful"):
        return archive.successful()
    if hasattr(archive, "samples"):
        return np.asarray(archive.samples, dtype=float)
    x = np.asarray(archive, dtype=float)
    return x[~np.any(np.isnan(x), axis=1)] if x.ndim == 2 else x


def summarize(archive, level: float = 0.95) -> Summary:
    """Sample mean/std and the type-7 (linear) quantile band at ``level``."""
    if not 0 < level < 1:
        raise InvalidArgumentError("level must lie in (0, 1)")
    x = _draw_matrix(archive)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientDataError("summaries need at least two successful draws")
    lo, hi = np.quantile(x, [(1 - level) / 2, (1 + level) / 2], axis=0, method="linear")
    # shifted moments: exact for identical draws, so a collapsed band still holds its mean
    dev = x - x[0]
    return Summary(x[0] + dev.mean(axis=0), dev.std(axis=0, ddof=1), lo, hi, level, x.shape[0])


def default_mask(target, rel: float = 1e-6) -> np.ndarray:
    target = np.asarray(target, dtype=float)
    return target > rel * target.max()


def coverage(summary: Summary, target, mask=None) -> CoverageMap:
    target = np.asarray(target, dtype=float).ravel()
    if target.size != summary.mean.size:
        raise DimensionMismatchError("target and summary differ in size")
    mask = default_mask(target) if mask is None else np.asarray(mask, dtype=bool).ravel()
    if mask.size != target.size:
        raise DimensionMismatchError("mask and target differ in size")
    status = np.full(target.size, OUTSIDE, dtype=np.int8)
    status[mask] = COVERED
    status[mask & (target > summary.upper)] = ABOVE
    status[mask & (target < summary.lower)] = BELOW
    n = int(mask.sum())
    frac = float(np.sum(status == COVERED) / n) if n else float("nan")
    return CoverageMap(status, mask, frac)


def profile(image, row: int, width: int = None):
    """Pixel values along ``row``; a Summary gives (lower, mean, upper)."""
    def take(img):
        img = np.asarray(img, dtype=float).ravel()
        w = width if width is not None else int(round(np.sqrt(img.size)))
        h = img.size // w
        if w * h != img.size:
            raise DimensionMismatchError("cannot infer grid width; pass width")
        if not 0 <= row < h:
            raise InvalidArgumentError(f"row {row} outside 0..{h - 1}")
        return img.reshape(h, w)[row].copy()

    if isinstance(image, Summary):
        return take(image.lower), take(image.mean), take(image.upper)
    return take(image)


def npl_vs_map_distance(mean, map_image) -> float:
    """||mean - map||_2 / ||map||_2."""
    a = np.asarray(mean, dtype=float).ravel()
    b = np.asarray(map_image, dtype=float).ravel()
    if a.size != b.size:
        raise DimensionMismatchError("images differ in size")
    nb = np.linalg.norm(b)
    if nb == 0:
        raise InvalidArgumentError("reference image has zero norm")
    return float(np.linalg.norm(a - b) / nb)


def support_variance(summary: Summary, mask) -> float:
    return float(np.mean(summary.std[np.asarray(mask, bool)] ** 2))
