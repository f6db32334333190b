"""Compiled inner loops for the lagged mean recursions."""

import numba
import numpy as np


@numba.njit(cache=True)
def ar_filter(nu, a_stack, lags, start):
    """In place: nu[t] += sum_j a_stack[j] @ nu[t - lags[j]] for t >= start."""
    T, p = nu.shape
    for t in range(start, T):
        for j in range(lags.size):
            lag = lags[j]
            for i in range(p):
                acc = 0.0
                for k in range(p):
                    acc += a_stack[j, i, k] * nu[t - lag, k]
                nu[t, i] += acc
    return nu


@numba.njit(cache=True)
def ar_sensitivities(jac, a_stack, lags, start):
    """In place: jac[t] += sum_j a_stack[j] @ jac[t - lags[j]] for t >= start."""
    T, p, n = jac.shape
    for t in range(start, T):
        for j in range(lags.size):
            lag = lags[j]
            for i in range(p):
                for k in range(p):
                    a = a_stack[j, i, k]
                    if a != 0.0:
                        for c in range(n):
                            jac[t, i, c] += a * jac[t - lag, k, c]
    return jac


def stack(mats, p):
    if len(mats) == 0:
        return np.zeros((0, p, p))
    return np.ascontiguousarray(np.stack(mats))
