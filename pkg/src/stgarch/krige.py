"""
Volatility kriging at unobserved locations.

The squared process has the ARMA form

    Z_t^2 = omega + sum_i delta_i Z_{t-i}^2 - sum_j beta_j zeta_{t-j} + zeta_t,

with ``zeta_t = Z_t^2 - sigma_t^2``. Kriging the cross-section of ``zeta``
at each time and feeding it through this recursion gives the predictor of
``Z_t^2`` at the target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from stgarch import _recursions as rec
from stgarch.core import CovarianceModel, Location, ParameterPoint, as_locations, unconditional_variance
from stgarch.covfit import ResidualPanel
from stgarch.simulate import build_covariance_matrix

__all__ = [
    "KrigingSystem",
    "MACoefficients",
    "Prediction",
    "SingularSystemError",
    "kriging_weights",
    "ma_coefficients",
    "predict_squared_process",
    "predict_unconditional",
    "predictor_covariance",
    "predictor_covariance_matrix",
]

EPS_VAR = 1e-10
_K_CAP = 10_000
_TRUNC_TOL = 1e-12


class SingularSystemError(np.linalg.LinAlgError):
    def __init__(self, message, condition_number):
        super().__init__(message)
        self.condition_number = condition_number


@dataclass(frozen=True, eq=False)
class MACoefficients:
    """MA weights of ``Z^2 - C`` on current and past ``zeta``.

    ``decay = (constant, rate)`` bounds ``|psi_k| <= constant * rate**k``.
    """

    point: ParameterPoint
    psi: np.ndarray
    delta: np.ndarray
    truncation: int
    decay: tuple[float, float]


def _spectral_radius(delta: np.ndarray) -> float:
    r = delta.size
    if not np.any(delta):
        return 0.0
    comp = np.zeros((r, r))
    comp[0] = delta
    comp[1:, :-1] = np.eye(r - 1)
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def _psi(delta: np.ndarray, beta: np.ndarray, K: int) -> np.ndarray:
    r, p = delta.size, beta.size
    psi = np.zeros(K + 1)
    psi[0] = 1.0
    for k in range(1, K + 1):
        v = -beta[k - 1] if k <= p else 0.0
        for i in range(1, min(k, r) + 1):
            v += delta[i - 1] * psi[k - i]
        psi[k] = v
    return psi


def _decay_constant(psi: np.ndarray, lam: float) -> float:
    if lam == 0.0:
        return float(np.max(np.abs(psi)))
    k = np.arange(psi.size)
    with np.errstate(over="ignore", divide="ignore"):
        ratio = np.abs(psi) / lam**k
    return float(np.max(ratio[np.isfinite(ratio)]))


def ma_coefficients(point: ParameterPoint, K: int | None = None) -> MACoefficients:
    """MA(infinity) weights ``psi_k`` of the squared process.

    ``psi_0 = 1`` and ``psi_k = sum_{i <= min(k, r)} delta_i psi_{k-i} - beta_k``.
    Without an explicit ``K`` the series is truncated at the smallest K
    with ``constant * rate**K < 1e-12`` (capped at 10_000); ``rate`` is the
    spectral radius of the AR companion matrix, which equals ``sum(delta)``
    for r = 1.
    """
    delta = point.delta
    if not delta.sum() < 1.0:
        raise ValueError(f"non-stationary point: sum(delta) = {delta.sum()} >= 1")
    beta = np.asarray(point.beta)
    lam = _spectral_radius(delta)
    if K is None:
        probe = 64 + 8 * delta.size
        c = _decay_constant(_psi(delta, beta, probe), lam)
        if lam == 0.0:
            K = max(point.order.p, 1)
        else:
            need = math.log(_TRUNC_TOL / max(c, 1e-300)) / math.log(lam)
            K = int(min(_K_CAP, max(1, math.ceil(need))))
    psi = _psi(delta, beta, K)
    return MACoefficients(point, psi, delta, K, (_decay_constant(psi, lam), lam))


@dataclass(eq=False)
class KrigingSystem:
    target: Location
    sites: np.ndarray
    R: np.ndarray
    r: np.ndarray
    gamma: np.ndarray
    condition_number: float

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.R @ self.gamma - self.r))

    @property
    def variance(self) -> float:
        """``gamma' R gamma``, the variance of the kriged innovation."""
        return float(self.gamma @ self.R @ self.gamma)


def kriging_weights(
    sites,
    target,
    model: CovarianceModel,
    site_scale=None,
    target_scale: float | None = None,
    squared: bool = False,
) -> KrigingSystem:
    """Simple-kriging weights ``gamma = R^{-1} r`` for one target.

    Parameters
    ----------
    sites : array_like, shape (m, 2)
    target : array_like, shape (2,)
    model : CovarianceModel
        Covariance of the kriged field. With ``squared=True`` it is read as
        the covariance of ``eta`` and mapped to that of ``zeta`` through
        ``2 * c(h)**2`` times the per-site scales.
    site_scale, target_scale : optional
        Per-site variance levels used by the ``squared`` mapping.
    """
    s = as_locations(sites)
    t = as_locations(target)
    R = build_covariance_matrix(s, model)
    r = build_covariance_matrix(s, model, targets=t)[:, 0]
    if squared:
        R = 2.0 * R**2
        r = 2.0 * r**2
        if site_scale is not None:
            sc = np.asarray(site_scale, dtype=float)
            ts = float(target_scale) if target_scale is not None else 1.0
            R = R * np.outer(sc, sc)
            r = r * sc * ts
    cond = float(np.linalg.cond(R))
    try:
        fac = cho_factor(R, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"kriging matrix is singular (condition number {cond:.3g})", cond) from exc
    gamma = cho_solve(fac, r)
    if not np.all(np.isfinite(gamma)) or cond > 1e15:
        raise SingularSystemError(f"kriging matrix is singular (condition number {cond:.3g})", cond)
    return KrigingSystem(Location(float(t[0, 0]), float(t[0, 1])), s, R, r, gamma, cond)


@dataclass(eq=False)
class Prediction:
    """Kriged squared process at a target on the residual time grid.

    ``squared`` is the predictor of ``Z_t^2``; ``variance`` removes the
    contemporaneous kriged innovation, i.e. it predicts ``sigma_t^2``;
    ``volatility = sqrt(max(squared, eps))``.
    """

    squared: np.ndarray
    variance: np.ndarray
    volatility: np.ndarray
    kriged_zeta: np.ndarray
    n_floored: int


def predict_squared_process(
    target,
    point_at_target: ParameterPoint,
    zeta: ResidualPanel,
    system: KrigingSystem,
    init: str = "zero",
) -> Prediction:
    """Recursive kriging predictor of the squared process at ``target``.

    ``init="zero"`` starts the recursion from zero; ``"unconditional"``
    starts it from the target's long-run variance.
    """
    if zeta.m != system.gamma.size:
        raise ValueError(f"residual panel has {zeta.m} sites but the system has {system.gamma.size}")
    if not np.allclose(as_locations(target)[0], system.target):
        raise ValueError("target does not match the kriging system")
    zbar = np.ascontiguousarray(zeta.zeta @ system.gamma)
    if init == "zero":
        y0 = 0.0
    elif init == "unconditional":
        y0 = unconditional_variance(point_at_target)
    else:
        raise ValueError(f"unknown predictor init {init!r}")
    y = rec.arma_square_path(
        point_at_target.omega,
        np.ascontiguousarray(point_at_target.delta),
        np.ascontiguousarray(point_at_target.beta),
        zbar,
        y0,
    )
    floored = y < EPS_VAR
    var = np.maximum(y - zbar, EPS_VAR)
    return Prediction(
        squared=y,
        variance=var,
        volatility=np.sqrt(np.maximum(y, EPS_VAR)),
        kriged_zeta=zbar,
        n_floored=int(floored.sum()),
    )


def predictor_covariance(ma: MACoefficients, system: KrigingSystem, t: int, t2: int, p: int | None = None) -> float:
    """Covariance of the kriging predictor at times ``t`` and ``t2``.

    Times are 1-based on the original index and must be at least ``p + 1``;
    only MA terms hitting the same innovation time contribute.
    """
    p = ma.point.order.p if p is None else p
    if min(t, t2) < p + 1:
        raise ValueError(f"times must be >= p + 1 = {p + 1}")
    if t > t2:
        t, t2 = t2, t
    d = t2 - t
    kmax = min(t - p - 1, ma.truncation - d)
    if kmax < 0:
        return 0.0
    psi = ma.psi
    s = float(np.dot(psi[: kmax + 1], psi[d : d + kmax + 1]))
    return s * system.variance


def predictor_covariance_matrix(ma: MACoefficients, system: KrigingSystem, times) -> np.ndarray:
    times = list(times)
    n = len(times)
    out = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            out[i, j] = out[j, i] = predictor_covariance(ma, system, times[i], times[j])
    return out


def predict_unconditional(point_at_target: ParameterPoint) -> float:
    """Long-run variance at the target."""
    return unconditional_variance(point_at_target)
