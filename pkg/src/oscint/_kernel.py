"""Exponential-sum kernel for phases that are polynomial in w.

Along each lattice row the phase is a polynomial of degree D in the row index,
so e^{2 pi i phase} can be advanced by D complex multiplications per term
(forward-difference recurrence).  The recurrence is restarted from exactly
evaluated phases every BLOCK terms, which keeps rounding drift near 1e-13.
"""
import os

import numba
import numpy as np

numba.config.THREADING_LAYER = "workqueue"

BLOCK = 128
_TWO_PI = 2.0 * np.pi


def set_threads(n=None):
    if n is None:
        env = os.environ.get("OSCINT_THREADS")
        n = int(env) if env else None
    if n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


@numba.njit(cache=True, fastmath=False)
def _cis_frac(t):
    f = t - np.floor(t)
    a = _TWO_PI * f
    return np.cos(a), np.sin(a)


@numba.njit(parallel=True, cache=True, fastmath=False)
def expsum(coef, e0, rowmono, w0, h, wr, wi, kstart, kend, deg):
    """out[p] = sum_{r,k} (wr + i wi)[r,k] exp(2 pi i Phi_p(r,k)).

    Phi_p(r, k) = sum_m coef[p, m] * rowmono[r, m] * (w0 + k h)^e0[m]   (in turns)
    """
    P = coef.shape[0]
    M = coef.shape[1]
    R = rowmono.shape[0]
    out_r = np.zeros(P)
    out_i = np.zeros(P)
    D = deg
    for p in numba.prange(P):
        q = np.zeros(D + 1)
        fv = np.zeros(D + 1)
        er = np.zeros(D + 1)
        ei = np.zeros(D + 1)
        sr = 0.0
        si = 0.0
        for r in range(R):
            ks = kstart[r]
            ke = kend[r]
            if ke <= ks:
                continue
            for j in range(D + 1):
                q[j] = 0.0
            for m in range(M):
                q[e0[m]] += coef[p, m] * rowmono[r, m]
            k0 = ks
            while k0 < ke:
                # exact phases at k0 .. k0+D, then forward differences in place
                for i in range(D + 1):
                    u = w0 + (k0 + i) * h
                    acc = q[D]
                    for j in range(D - 1, -1, -1):
                        acc = acc * u + q[j]
                    fv[i] = acc
                for j in range(1, D + 1):
                    for i in range(D, j - 1, -1):
                        fv[i] = fv[i] - fv[i - 1]
                for j in range(D + 1):
                    c, s = _cis_frac(fv[j])
                    er[j] = c
                    ei[j] = s
                k1 = min(ke, k0 + BLOCK)
                for k in range(k0, k1):
                    a = wr[r, k]
                    b = wi[r, k]
                    sr += a * er[0] - b * ei[0]
                    si += a * ei[0] + b * er[0]
                    for j in range(D):
                        t = er[j] * er[j + 1] - ei[j] * ei[j + 1]
                        ei[j] = er[j] * ei[j + 1] + ei[j] * er[j + 1]
                        er[j] = t
                k0 = k1
        out_r[p] = sr
        out_i[p] = si
    return out_r + 1j * out_i
