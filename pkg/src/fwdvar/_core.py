"""Compiled row sweeps for the built-in kernel families.

Every routine walks rows ``r = 0..n-1`` (time ``t_r``) left to right and,
within a row, the alive maturity columns ``l >= start[r]`` in increasing
order, so results are deterministic.  Kernel overflow (|k| above the
limit, or non-finite) is signalled by a NaN return value.
"""

import math

import numpy as np
from numba import njit

from .kernels import CORE_EXPONENTIAL, KERNEL_VALUE_LIMIT


@njit(cache=True, nogil=True)
def contrast_from_rows(S, incr_sq, eps, d):
    """Sum over rows of ``log(S/d + eps) + (|x|^2 + eps d) / (S + eps d)``."""
    eps_d = eps * d
    total = 0.0
    for r in range(S.shape[0]):
        total += math.log(S[r] / d + eps) + (incr_sq[r] + eps_d) / (S[r] + eps_d)
    return total


@njit(cache=True, nogil=True)
def sq_rows_packed(dI, start, offsets, K):
    """Per-row ``|sigma_hat|^2`` from kernel values packed row by row over alive cells."""
    n, d = dI.shape[0], dI.shape[1]
    S = np.zeros(n)
    for r in range(n):
        acc = 0.0
        ss = 0.0
        o = offsets[r] - start[r]
        for l in range(start[r], d):
            acc += K[o + l] * dI[r, l]
            ss += acc * acc
        S[r] = ss
    return S


@njit(cache=True, nogil=True)
def sigma_sq_rows(dI, start, t, T, code, scale, rate, shift):
    """Per-row ``|sigma_hat|^2``; ``ok`` is False on kernel overflow."""
    n, d = dI.shape[0], dI.shape[1]
    S = np.zeros(n)
    if code == CORE_EXPONENTIAL:
        eT = np.empty(d)
        for l in range(d):
            eT[l] = math.exp(-rate * T[l])
    for r in range(n):
        tr = t[r]
        acc = 0.0
        ss = 0.0
        if code == CORE_EXPONENTIAL:
            f = scale * math.exp(rate * tr)
            if start[r] < d:
                if not (abs(f * eT[start[r]]) <= KERNEL_VALUE_LIMIT and abs(f * eT[d - 1]) <= KERNEL_VALUE_LIMIT):
                    return S, False
            for l in range(start[r], d):
                acc += f * eT[l] * dI[r, l]
                ss += acc * acc
        else:
            for l in range(start[r], d):
                k = scale * math.exp(rate * math.log(T[l] - tr + shift))
                if not abs(k) <= KERNEL_VALUE_LIMIT:
                    return S, False
                acc += k * dI[r, l]
                ss += acc * acc
        S[r] = ss
    return S, True


@njit(cache=True, nogil=True)
def sigma_stats(dI, start, t, T, code, scale, rate, shift, shape_sign):
    """Per-row ``|sigma_hat|^2`` and ``e_hat = [d_a sigma_hat . sigma_hat / d]_a`` for q = 2.

    Returns ``(S, E, ok)`` with ``S`` of shape ``(n,)`` and ``E`` of shape ``(n, 2)``.
    """
    n, d = dI.shape[0], dI.shape[1]
    S = np.zeros(n)
    E = np.zeros((n, 2))
    for r in range(n):
        tr = t[r]
        acc = 0.0
        acc_eta = 0.0
        acc_shape = 0.0
        ss = 0.0
        e_eta = 0.0
        e_shape = 0.0
        for l in range(start[r], d):
            lag = T[l] - tr
            if code == CORE_EXPONENTIAL:
                base = math.exp(-rate * lag)
                g_shape = -scale * lag * base
            else:
                lg = math.log(lag + shift)
                base = math.exp(rate * lg)
                g_shape = shape_sign * scale * base * lg
            k = scale * base
            if not (abs(k) <= KERNEL_VALUE_LIMIT and abs(g_shape) < np.inf):
                return S, E, False
            x = dI[r, l]
            acc += k * x
            acc_eta += base * x
            acc_shape += g_shape * x
            ss += acc * acc
            e_eta += acc_eta * acc
            e_shape += acc_shape * acc
        S[r] = ss
        E[r, 0] = e_eta / d
        E[r, 1] = e_shape / d
    return S, E, True
