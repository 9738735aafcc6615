"""Compiled GARCH recursions.

All kernels take parameters as ``omega`` (scalar or per-site), ``alpha``
(q,) and ``beta`` (p,). Pre-sample squared observations and variances are
set to ``init``; its derivative with respect to the parameter vector is
``dinit``.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def garch_filter(z2, omega, alpha, beta, init):
    T = z2.shape[0]
    q = alpha.shape[0]
    p = beta.shape[0]
    s2 = np.empty(T)
    for t in range(T):
        v = omega
        for i in range(1, q + 1):
            v += alpha[i - 1] * (z2[t - i] if t - i >= 0 else init)
        for j in range(1, p + 1):
            v += beta[j - 1] * (s2[t - j] if t - j >= 0 else init)
        s2[t] = v
    return s2


@njit(cache=True, nogil=True)
def garch_filter_grad(z2, omega, alpha, beta, init, dinit):
    """Conditional variances and their gradient by forward recursion."""
    T = z2.shape[0]
    q = alpha.shape[0]
    p = beta.shape[0]
    n = 1 + q + p
    s2 = np.empty(T)
    ds2 = np.zeros((T, n))
    for t in range(T):
        v = omega
        ds2[t, 0] = 1.0
        for i in range(1, q + 1):
            a = alpha[i - 1]
            if t - i >= 0:
                v += a * z2[t - i]
                ds2[t, i] += z2[t - i]
            else:
                v += a * init
                ds2[t, i] += init
                for k in range(n):
                    ds2[t, k] += a * dinit[k]
        for j in range(1, p + 1):
            b = beta[j - 1]
            col = q + j
            if t - j >= 0:
                v += b * s2[t - j]
                ds2[t, col] += s2[t - j]
                for k in range(n):
                    ds2[t, k] += b * ds2[t - j, k]
            else:
                v += b * init
                ds2[t, col] += init
                for k in range(n):
                    ds2[t, k] += b * dinit[k]
        s2[t] = v
    return s2, ds2


@njit(cache=True, nogil=True)
def weighted_qml(z2, w, omega, alpha, beta, init, dinit, start, scale):
    """Kernel-weighted Gaussian quasi-likelihood and its gradient.

    ``z2`` has shape (m, T); only sites with nonzero weight should be passed.
    The per-observation term is ``0.5 * (log s2 + z2 / s2)`` summed over
    ``t >= start`` and multiplied by ``w[u] * scale``.
    """
    m, T = z2.shape
    q = alpha.shape[0]
    p = beta.shape[0]
    n = 1 + q + p
    value = 0.0
    grad = np.zeros(n)
    for u in range(m):
        s2, ds2 = garch_filter_grad(z2[u], omega, alpha, beta, init[u], dinit[u])
        wu = w[u] * scale
        acc = 0.0
        for t in range(start, T):
            s = s2[t]
            acc += np.log(s) + z2[u, t] / s
            c = 0.5 * wu * (1.0 / s - z2[u, t] / (s * s))
            for k in range(n):
                grad[k] += c * ds2[t, k]
        value += 0.5 * wu * acc
    return value, grad


@njit(cache=True, nogil=True)
def weighted_qml_value(z2, w, omega, alpha, beta, init, start, scale):
    m, T = z2.shape
    value = 0.0
    for u in range(m):
        s2 = garch_filter(z2[u], omega, alpha, beta, init[u])
        acc = 0.0
        for t in range(start, T):
            acc += np.log(s2[t]) + z2[u, t] / s2[t]
        value += 0.5 * w[u] * scale * acc
    return value


@njit(cache=True, nogil=True)
def simulate_panel(omega, alpha, beta, eta):
    """Per-site GARCH simulation started at the unconditional variance.

    ``omega`` (m,), ``alpha`` (m, q), ``beta`` (m, p), ``eta`` (T, m).
    """
    T, m = eta.shape
    q = alpha.shape[1]
    p = beta.shape[1]
    z = np.empty((T, m))
    s2 = np.empty((T, m))
    for u in range(m):
        tot = 0.0
        for i in range(q):
            tot += alpha[u, i]
        for j in range(p):
            tot += beta[u, j]
        c = omega[u] / (1.0 - tot)
        for t in range(T):
            v = omega[u]
            for i in range(1, q + 1):
                if t - i >= 0:
                    v += alpha[u, i - 1] * z[t - i, u] * z[t - i, u]
                else:
                    v += alpha[u, i - 1] * c
            for j in range(1, p + 1):
                v += beta[u, j - 1] * (s2[t - j, u] if t - j >= 0 else c)
            s2[t, u] = v
            z[t, u] = np.sqrt(v) * eta[t, u]
    return z, s2


@njit(cache=True, nogil=True)
def arma_square_path(omega, delta, beta, zeta, y0):
    """Squared process from its ARMA form driven by ``zeta``.

    ``y_t = omega + sum_i delta_i y_{t-i} - sum_j beta_j zeta_{t-j} + zeta_t``
    with pre-sample ``y = y0`` and ``zeta = 0``.
    """
    T = zeta.shape[0]
    r = delta.shape[0]
    p = beta.shape[0]
    y = np.empty(T)
    for t in range(T):
        v = omega + zeta[t]
        for i in range(1, r + 1):
            v += delta[i - 1] * (y[t - i] if t - i >= 0 else y0)
        for j in range(1, p + 1):
            if t - j >= 0:
                v -= beta[j - 1] * zeta[t - j]
        y[t] = v
    return y
