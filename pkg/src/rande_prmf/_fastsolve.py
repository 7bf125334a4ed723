"""Compiled Dormand-Prince solver for the competition system.

Same scheme as :func:`rande_prmf.numerics.integrate_adaptive` (max-norm error,
PI control, continuous extension) specialised to the method-of-lines system
``c_i' = D_i c_i'' + rho_i c_i (1 - sum_j a_j c_j)`` with zero-flux ends. It
exists because the pointwise inverse problem evaluates this system thousands
of times.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .numerics import _A, _B, _C, _E, _P, _ALPHA, _BETA, _FAC_MAX, _FAC_MIN, _SAFETY

_A_MAT = np.zeros((6, 6))
for _s, _row in enumerate(_A):
    _A_MAT[_s, : len(_row)] = _row


@njit(cache=True, nogil=True)
def _rhs(D, rho, comp, inv_dx2, c, out):
    M, n = c.shape
    for x in range(n):
        u = 0.0
        for i in range(M):
            u += comp[i] * c[i, x]
        g = 1.0 - u
        for i in range(M):
            if x == 0:
                lap = 2.0 * (c[i, 1] - c[i, 0])
            elif x == n - 1:
                lap = 2.0 * (c[i, n - 2] - c[i, n - 1])
            else:
                lap = c[i, x - 1] - 2.0 * c[i, x] + c[i, x + 1]
            out[i, x] = D[i] * lap * inv_dx2 + rho[i] * c[i, x] * g


@njit(cache=True, nogil=True)
def solve_coupled_compiled(D, rho, comp, c0, inv_dx2, times, rtol, atol, max_steps,
                           A, B, C, E, P, alpha, beta, fac_min, fac_max, safety):
    M = D.shape[0]
    n = c0.shape[0]
    nt = times.shape[0]
    out = np.empty((nt, M, n))
    y = np.empty((M, n))
    for i in range(M):
        y[i] = c0
    out[0] = y
    if nt == 1:
        return out, 0, times[0]
    K = np.empty((7, M, n))
    tmp = np.empty((M, n))
    y_new = np.empty((M, n))
    t = times[0]
    t_end = times[nt - 1]
    span = t_end - t
    _rhs(D, rho, comp, inv_dx2, y, K[0])
    f = K[0].copy()

    # initial step
    d0 = 0.0
    d1 = 0.0
    for i in range(M):
        for x in range(n):
            sc = atol + rtol * abs(y[i, x])
            d0 = max(d0, abs(y[i, x]) / sc)
            d1 = max(d1, abs(f[i, x]) / sc)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, span)
    for i in range(M):
        for x in range(n):
            tmp[i, x] = y[i, x] + h0 * f[i, x]
    _rhs(D, rho, comp, inv_dx2, tmp, K[1])
    d2 = 0.0
    for i in range(M):
        for x in range(n):
            sc = atol + rtol * abs(y[i, x])
            d2 = max(d2, abs(K[1, i, x] - f[i, x]) / sc)
    d2 /= h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    h = min(100 * h0, h1, span)

    h_min = 1e-12 * span
    err_old = 1e-4
    rejected = False
    nxt = 1
    for _ in range(max_steps):
        h = min(h, t_end - t)
        if h < h_min:
            return out, 1, t
        K[0] = f
        for s in range(1, 6):
            for i in range(M):
                for x in range(n):
                    acc = 0.0
                    for j in range(s):
                        acc += A[s, j] * K[j, i, x]
                    tmp[i, x] = y[i, x] + h * acc
            _rhs(D, rho, comp, inv_dx2, tmp, K[s])
        for i in range(M):
            for x in range(n):
                acc = 0.0
                for j in range(6):
                    acc += B[j] * K[j, i, x]
                y_new[i, x] = y[i, x] + h * acc
        _rhs(D, rho, comp, inv_dx2, y_new, K[6])
        err = 0.0
        for i in range(M):
            for x in range(n):
                acc = 0.0
                for j in range(7):
                    acc += E[j] * K[j, i, x]
                sc = atol + rtol * max(abs(y[i, x]), abs(y_new[i, x]))
                err = max(err, abs(h * acc) / sc)
        if not np.isfinite(err):
            h *= fac_min
            rejected = True
            continue
        if err <= 1.0:
            t_new = t + h
            if t_end - t_new < 1e-13 * span:
                t_new = t_end
            while nxt < nt and times[nxt] <= t_new:
                if times[nxt] == t_new:
                    out[nxt] = y_new
                else:
                    theta = (times[nxt] - t) / h
                    th = np.empty(4)
                    th[0] = theta
                    for k in range(1, 4):
                        th[k] = th[k - 1] * theta
                    coef = P @ th
                    for i in range(M):
                        for x in range(n):
                            acc = 0.0
                            for j in range(7):
                                acc += coef[j] * K[j, i, x]
                            out[nxt, i, x] = y[i, x] + h * acc
                nxt += 1
            t = t_new
            y[:] = y_new
            f[:] = K[6]
            if t >= t_end:
                return out, 0, t
            fac = max(err, 1e-10) ** alpha / err_old ** beta
            fac = min(1 / fac_min, max(1 / fac_max, fac / safety))
            if rejected:
                fac = max(fac, 1.0)
            h = h / fac
            err_old = max(err, 1e-4)
            rejected = False
        else:
            h = h / min(1 / fac_min, err ** alpha / safety)
            rejected = True
    return out, 2, t


def solve_coupled_fast(D, rho, comp, c0, dx, times, rtol=1e-6, atol=1e-9, max_steps=1_000_000):
    """Returns ``(values, status, t_last)``; status 0 ok, 1 underflow, 2 step limit."""
    return solve_coupled_compiled(
        np.ascontiguousarray(D, dtype=float), np.ascontiguousarray(rho, dtype=float),
        np.ascontiguousarray(comp, dtype=float), np.ascontiguousarray(c0, dtype=float),
        1.0 / dx**2, np.ascontiguousarray(times, dtype=float), rtol, atol, max_steps,
        _A_MAT, _B, _C, _E, _P, _ALPHA, _BETA, _FAC_MIN, _FAC_MAX, _SAFETY)
