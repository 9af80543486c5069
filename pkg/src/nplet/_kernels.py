"""Compiled inner loops.  The numpy code in model/recon is the reference."""

import math

import numba
import numpy as np

_LOG2 = math.log(2.0)


@numba.njit(cache=True)
def _pair(u, zeta, nu):
    au = abs(u)
    x = au / zeta
    # one exp serves both log cosh and tanh; below 2^-57 it cannot change either
    e = math.exp(-2.0 * x) if x < 20.0 else 0.0
    if x < 1.0:
        sh = math.sinh(0.5 * x)
        lc = math.log1p(2.0 * sh * sh)
    else:
        lc = x + math.log1p(e) - _LOG2
    val = (1.0 - nu) * zeta * lc + 0.5 * nu * u * u
    if au < 1e-8 * zeta:
        om = (1.0 - nu) / zeta * (1.0 - x * x / 3.0) + nu
    elif x < 0.5:
        om = (1.0 - nu) * math.tanh(x) / au + nu
    else:
        om = (1.0 - nu) * ((1.0 - e) / (1.0 + e)) / au + nu
    return val, om


@numba.njit(cache=True)
def penalty_terms(img, zeta, nu, w_edge, w_diag):
    """Penalty value (double-counted pairs) and the neighbor sums S1, S2."""
    h, w = img.shape
    s1 = np.zeros((h, w))
    s2 = np.zeros((h, w))
    total = 0.0
    for r in range(h):
        for c in range(w):
            a = img[r, c]
            # forward neighbors: right, down, down-right, down-left
            for k in range(4):
                if k == 0:
                    rr, cc, wt = r, c + 1, w_edge
                elif k == 1:
                    rr, cc, wt = r + 1, c, w_edge
                elif k == 2:
                    rr, cc, wt = r + 1, c + 1, w_diag
                else:
                    rr, cc, wt = r + 1, c - 1, w_diag
                if rr >= h or cc < 0 or cc >= w or wt == 0.0:
                    continue
                b = img[rr, cc]
                val, om = _pair(a - b, zeta, nu)
                total += 2.0 * wt * val
                wo = wt * om
                ws = wo * (a + b)
                s1[r, c] += wo
                s1[rr, cc] += wo
                s2[r, c] += ws
                s2[rr, cc] += ws
    return total, s1.ravel(), s2.ravel()


@numba.njit(cache=True)
def em_ratio(y, proj):
    """y / proj with 0 where y == 0; also returns the first LOR with y > 0 and proj <= 0 (or -1)."""
    out = np.zeros(y.size)
    for i in range(y.size):
        if y[i] > 0:
            if proj[i] <= 0:
                return out, i
            out[i] = y[i] / proj[i]
    return out, -1


@numba.njit(cache=True)
def gem_update(lam, back, cs, s1, s2, beta, clamp):
    """Closed-form GEM pixel update; beta = 0 gives the plain EM step.  Returns (image, all finite)."""
    n = lam.size
    out = np.zeros(n)
    finite = True
    for j in range(n):
        if lam[j] < clamp or not cs[j] > 0:
            continue
        x = lam[j] * back[j] / cs[j]
        if x < clamp:
            x = 0.0
        if beta != 0.0:
            lam_phi = s2[j] / (2.0 * s1[j]) if s1[j] > 0 else 0.0
            c = beta * 4.0 * s1[j] / cs[j]
            b = 1.0 - c * lam_phi
            disc = math.sqrt(b * b + 4.0 * c * x)
            if b >= 0:
                # 2x/(sqrt(b^2+4cx)+b) avoids cancellation and is exactly x at c = 0
                den = disc + b
                x = 2.0 * x / den if den > 0 else 0.0
            else:
                x = (disc - b) / (2.0 * c)
            if not math.isfinite(x):
                finite = False
            elif x < clamp:
                x = 0.0
        out[j] = x
    return out, finite
