"""
Local kernel-weighted quasi-maximum-likelihood estimation of GARCH parameters.

The estimate at a target location minimises the Gaussian quasi-likelihood of
every site's series under a single candidate parameter point, each site
weighted by a product kernel centred at the target.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import Delaunay, QhullError

from stgarch import _recursions as rec
from stgarch.core import (
    ConstraintConfig,
    GarchOrder,
    Location,
    Panel,
    ParameterPoint,
    as_locations,
    unconditional_variance,
)

__all__ = [
    "FitFailure",
    "KernelSpec",
    "LocalFit",
    "OptimizerConfig",
    "SingularInformationError",
    "default_bandwidth",
    "filter_gradient",
    "fit_local",
    "fit_surface",
    "kernel_weight",
    "kernel_weights",
    "local_fit_stderr",
    "local_neg_loglik",
    "volatility_filter",
]

VarianceInit = Union[str, float]

_U_BOUND = 30.0


class SingularInformationError(np.linalg.LinAlgError):
    def __init__(self, message, condition_number):
        super().__init__(message)
        self.condition_number = condition_number


# ---------------------------------------------------------------------------
# kernels


def _k_uniform(u):
    return 0.5 * (np.abs(u) <= 1.0)


def _k_epanechnikov(u):
    return 0.75 * np.clip(1.0 - u * u, 0.0, None)


def _k_gaussian(u):
    return np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)


_KERNELS = {
    "uniform": (_k_uniform, 1.0 / 3.0),
    "epanechnikov": (_k_epanechnikov, 0.2),
    "gaussian": (_k_gaussian, 1.0),
}


@dataclass(frozen=True)
class KernelSpec:
    """Product kernel ``W_b(s) = b**-2 K(x / b) K(y / b)``."""

    family: str = "uniform"
    bandwidth: float = 0.3

    def __post_init__(self):
        if self.family not in _KERNELS:
            raise ValueError(f"unknown kernel {self.family!r}; expected one of {sorted(_KERNELS)}")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

    def univariate(self, u) -> np.ndarray:
        return _KERNELS[self.family][0](np.asarray(u, dtype=float))

    @property
    def second_moment(self) -> float:
        """``int ||s||^2 W(s) ds`` of the unscaled product kernel."""
        return 2.0 * _KERNELS[self.family][1]


def default_bandwidth(n_sites: int) -> float:
    return float(n_sites) ** -0.25


def kernel_weights(spec: KernelSpec, target, sites) -> np.ndarray:
    """Weights of every site for a target location, shape (m,)."""
    t = as_locations(target)[0]
    s = as_locations(sites)
    b = spec.bandwidth
    d = (t - s) / b
    return spec.univariate(d[:, 0]) * spec.univariate(d[:, 1]) / (b * b)


def kernel_weight(spec: KernelSpec, target, site) -> float:
    return float(kernel_weights(spec, target, site)[0])


# ---------------------------------------------------------------------------
# filter


def _init_value(point: ParameterPoint, series: np.ndarray, init: VarianceInit) -> float:
    if isinstance(init, str):
        if init == "unconditional":
            return unconditional_variance(point)
        if init == "sample":
            return float(np.mean(series**2))
        raise ValueError(f"unknown variance init {init!r}")
    init = float(init)
    if not init > 0:
        raise ValueError("fixed variance init must be positive")
    return init


def _unconditional_grad(omega: float, persistence: float, n: int) -> np.ndarray:
    g = np.full(n, omega / (1.0 - persistence) ** 2)
    g[0] = 1.0 / (1.0 - persistence)
    return g


def volatility_filter(point: ParameterPoint, series, init: VarianceInit = "unconditional") -> np.ndarray:
    """Conditional variances implied by ``point`` for an observed series.

    Pre-sample squared observations and variances are both set by ``init``:
    ``"unconditional"`` (the point's long-run variance, default),
    ``"sample"`` (mean square of the series) or a positive number.
    """
    z = np.asarray(series, dtype=float).ravel()
    z2 = np.ascontiguousarray(z * z)
    c = _init_value(point, z, init)
    return rec.garch_filter(z2, point.omega, np.asarray(point.alpha), np.asarray(point.beta), c)


def filter_gradient(point: ParameterPoint, series, init: VarianceInit = "unconditional"):
    """Conditional variances and their derivatives with respect to the parameters.

    Returns
    -------
    sigma2 : ndarray, shape (T,)
    grad : ndarray, shape (T, 1 + q + p)
    """
    z = np.asarray(series, dtype=float).ravel()
    z2 = np.ascontiguousarray(z * z)
    c = _init_value(point, z, init)
    n = point.order.n_params
    dc = _unconditional_grad(point.omega, point.persistence, n) if init == "unconditional" else np.zeros(n)
    return rec.garch_filter_grad(z2, point.omega, np.asarray(point.alpha), np.asarray(point.beta), c, dc)


# ---------------------------------------------------------------------------
# objective


class _LocalProblem:
    """Data of one local fit: the sites with positive weight and their squares."""

    def __init__(self, panel: Panel, target, spec: KernelSpec, order: GarchOrder, init: VarianceInit):
        w = kernel_weights(spec, target, panel.locations)
        mass = float(w.sum())
        if not mass > 0:
            raise ValueError(f"no site has positive kernel weight for target {tuple(as_locations(target)[0])}")
        self.active = np.flatnonzero(w > 0)
        self.w = np.ascontiguousarray(w[self.active])
        self.weights = w
        self.mass = mass
        vals = panel.values[:, self.active]
        self.z = np.ascontiguousarray(vals.T)
        self.z2 = np.ascontiguousarray(self.z**2)
        self.order = order
        self.m = panel.m
        self.T = panel.T
        self.start = order.p
        self.t_eff = self.T - order.p - 1
        if self.t_eff < 1:
            raise ValueError(f"series too short: T={self.T} for p={order.p}")
        self.scale = 1.0 / (self.m * self.t_eff)
        self.init = init
        if not isinstance(init, str):
            if not float(init) > 0:
                raise ValueError("fixed variance init must be positive")
        elif init not in ("unconditional", "sample"):
            raise ValueError(f"unknown variance init {init!r}")
        self._sample_init = np.ascontiguousarray(self.z2.mean(axis=1))

    def _init_arrays(self, theta: np.ndarray):
        n = theta.size
        k = len(self.w)
        if self.init == "unconditional":
            pers = theta[1:].sum()
            c = theta[0] / (1.0 - pers)
            init = np.full(k, c)
            dinit = np.tile(_unconditional_grad(theta[0], pers, n), (k, 1))
        elif self.init == "sample":
            init = self._sample_init
            dinit = np.zeros((k, n))
        else:
            init = np.full(k, float(self.init))
            dinit = np.zeros((k, n))
        return init, dinit

    def split(self, theta):
        q = self.order.q
        return theta[0], np.ascontiguousarray(theta[1 : 1 + q]), np.ascontiguousarray(theta[1 + q :])

    def value_and_grad(self, theta: np.ndarray):
        omega, alpha, beta = self.split(theta)
        init, dinit = self._init_arrays(theta)
        return rec.weighted_qml(self.z2, self.w, omega, alpha, beta, init, dinit, self.start, self.scale)

    def value(self, theta: np.ndarray) -> float:
        omega, alpha, beta = self.split(theta)
        init, _ = self._init_arrays(theta)
        return rec.weighted_qml_value(self.z2, self.w, omega, alpha, beta, init, self.start, self.scale)


def local_neg_loglik(
    panel: Panel,
    target,
    point: ParameterPoint,
    spec: KernelSpec,
    order: GarchOrder | None = None,
    init: VarianceInit = "unconditional",
) -> float:
    """Kernel-weighted negative quasi-log-likelihood of ``point`` at ``target``.

    Normalised by ``m * T'`` with ``T' = T - p - 1``; the sum runs over
    ``t = p + 1, ..., T``.
    """
    order = point.order if order is None else order
    if point.order != order:
        raise ValueError("point order does not match the requested order")
    prob = _LocalProblem(panel, target, spec, order, init)
    return float(prob.value(point.as_vector()))


# ---------------------------------------------------------------------------
# reparameterization: log omega, logistic simplex for (alpha, beta)


def _to_theta(x: np.ndarray, budget: float) -> np.ndarray:
    logits = np.r_[x[1:], 0.0]
    logits = logits - logits.max()
    e = np.exp(logits)
    pi = e[:-1] / e.sum()
    return np.r_[math.exp(x[0]), budget * pi]


def _to_x(theta: np.ndarray, budget: float) -> np.ndarray:
    pi = np.clip(theta[1:] / budget, 1e-10, None)
    tot = pi.sum()
    if tot >= 1.0:
        pi = pi * (1.0 - 1e-6) / tot
    slack = 1.0 - pi.sum()
    u = np.clip(np.log(pi / slack), -_U_BOUND, _U_BOUND)
    return np.r_[math.log(theta[0]), u]


def _chain(x: np.ndarray, theta: np.ndarray, g_theta: np.ndarray, budget: float) -> np.ndarray:
    pi = theta[1:] / budget
    ga = g_theta[1:]
    gu = budget * (pi * ga - pi * np.dot(pi, ga))
    return np.r_[g_theta[0] * theta[0], gu]


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for the local fits.

    ``tol`` bounds the relative objective decrease at termination and
    ``gtol`` the finite-difference gradient norm in the unconstrained
    coordinates; both must hold for a fit to count as converged.
    """

    tol: float = 1e-9
    gtol: float = 1e-5
    n_starts: int = 3
    maxiter: int = 1000
    seed: int = 0
    constraints: ConstraintConfig = ConstraintConfig()
    init: VarianceInit = "unconditional"
    polish: int = 2
    compute_stderr: bool = True
    stderr_method: str = "plugin"


@dataclass(eq=False)
class LocalFit:
    """Result of one local fit.

    ``std_errors`` is aligned with ``estimate.as_vector()``; it is NaN when
    not computed.
    """

    target: Location
    estimate: ParameterPoint
    neg_loglik: float
    std_errors: np.ndarray
    effective_weight_mass: float
    converged: bool
    iterations: int
    n_sites: int = 0
    inside_hull: bool = True
    gradient_norm: float = float("nan")
    message: str = ""
    var_eta2: float = float("nan")

    @property
    def z_scores(self) -> np.ndarray:
        return self.estimate.as_vector() / self.std_errors


@dataclass(frozen=True)
class FitFailure:
    target: Location
    reason: str


def _start_points(order: GarchOrder, level: float, opt: OptimizerConfig) -> list[np.ndarray]:
    base = [(0.1, 0.8), (0.2, 0.5), (0.05, 0.3)]
    rng = np.random.default_rng(opt.seed)
    starts = []
    for k in range(opt.n_starts):
        if k < len(base):
            a, b = base[k]
        else:
            a, b = rng.uniform(0.02, 0.3), rng.uniform(0.1, 0.85)
            tot = a + b
            if tot > 0.95:
                a, b = a * 0.95 / tot, b * 0.95 / tot
        theta = np.r_[level * (1.0 - a - b), np.full(order.q, a / order.q), np.full(order.p, b / order.p)]
        starts.append(theta)
    return starts


def _fd_gradient_norm(f, x: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> float:
    g = np.empty_like(x)
    for k in range(x.size):
        h = 1e-6 * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (f(xp) - f(xm)) / (2 * h)
    # components pushing against an active bound do not count
    at_lo = (x <= lower + 1e-8) & (g > 0)
    at_hi = (x >= upper - 1e-8) & (g < 0)
    g[at_lo | at_hi] = 0.0
    return float(np.linalg.norm(g))


def _inside_hull(locations: np.ndarray, target: np.ndarray) -> bool:
    try:
        return bool(Delaunay(locations).find_simplex(target.reshape(1, 2))[0] >= 0)
    except (QhullError, ValueError):
        lo, hi = locations.min(axis=0), locations.max(axis=0)
        return bool(np.all(target >= lo) and np.all(target <= hi))


def fit_local(
    panel: Panel,
    target,
    spec: KernelSpec,
    order: GarchOrder = GarchOrder(),
    opt: OptimizerConfig | None = None,
) -> LocalFit:
    """Estimate the GARCH parameters at ``target`` by local weighted QMLE.

    The constrained problem is solved in unconstrained coordinates (log of
    omega, logistic simplex scaled to ``1 - margin`` for the loadings) with
    L-BFGS-B from ``opt.n_starts`` starting points; the best objective wins.
    """
    opt = OptimizerConfig() if opt is None else opt
    tgt = as_locations(target)[0]
    prob = _LocalProblem(panel, tgt, spec, order, opt.init)
    budget = opt.constraints.budget
    n = order.n_params
    lower = np.r_[math.log(opt.constraints.rho1), np.full(n - 1, -_U_BOUND)]
    upper = np.r_[math.log(opt.constraints.rho2), np.full(n - 1, _U_BOUND)]
    bounds = list(zip(lower, upper))

    def fun(x):
        theta = _to_theta(x, budget)
        v, g = prob.value_and_grad(theta)
        if not np.isfinite(v):
            return 1e300, np.zeros_like(x)
        return v, _chain(x, theta, g, budget)

    def fval(x):
        return prob.value(_to_theta(x, budget))

    level = float(np.average(prob.z2.mean(axis=1), weights=prob.w))
    level = min(max(level, 10 * opt.constraints.rho1), opt.constraints.rho2 / 10)
    options = dict(ftol=opt.tol, gtol=opt.gtol * 1e-2, maxiter=opt.maxiter, maxcor=20)

    best = None
    iterations = 0
    for theta0 in _start_points(order, level, opt):
        theta0[0] = min(max(theta0[0], opt.constraints.rho1), opt.constraints.rho2)
        x0 = np.clip(_to_x(theta0, budget), lower, upper)
        res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds, options=options)
        iterations += res.nit
        if best is None or res.fun < best.fun:
            best = res
    gnorm = _fd_gradient_norm(fval, best.x, lower, upper)
    for _ in range(opt.polish):
        if gnorm < opt.gtol:
            break
        res = minimize(fun, best.x, jac=True, method="L-BFGS-B", bounds=bounds, options=options)
        iterations += res.nit
        if res.fun <= best.fun:
            best = res
        gnorm = _fd_gradient_norm(fval, best.x, lower, upper)

    theta = _to_theta(best.x, budget)
    point = ParameterPoint.from_vector(theta, order)
    converged = bool(np.isfinite(best.fun) and gnorm < opt.gtol)
    fit = LocalFit(
        target=Location(float(tgt[0]), float(tgt[1])),
        estimate=point,
        neg_loglik=float(best.fun),
        std_errors=np.full(n, np.nan),
        effective_weight_mass=prob.mass,
        converged=converged,
        iterations=int(iterations),
        n_sites=int(prob.active.size),
        inside_hull=_inside_hull(panel.locations, tgt),
        gradient_norm=gnorm,
        message=str(best.message),
    )
    if converged and opt.compute_stderr:
        try:
            fit.std_errors, fit.var_eta2 = _stderr(prob, point, opt.stderr_method)
        except SingularInformationError as exc:
            fit.converged = False
            fit.message = f"{exc} (condition number {exc.condition_number:.3g})"
    return fit


# ---------------------------------------------------------------------------
# standard errors


def _stderr(prob: _LocalProblem, point: ParameterPoint, method: str = "plugin"):
    n = point.order.n_params
    theta = point.as_vector()
    init, dinit = prob._init_arrays(theta)
    alpha = np.asarray(point.alpha)
    beta = np.asarray(point.beta)
    start = prob.start
    info = np.zeros((n, n))
    wsum = 0.0
    eta2_all = []
    w_all = []
    scores = np.zeros((prob.T - start, n))
    for k in range(len(prob.w)):
        s2, ds2 = rec.garch_filter_grad(prob.z2[k], point.omega, alpha, beta, init[k], dinit[k])
        g = ds2[start:] / s2[start:, None]
        wk = prob.w[k]
        info += wk * g.T @ g
        wsum += wk * g.shape[0]
        e2 = prob.z2[k, start:] / s2[start:]
        eta2_all.append(e2)
        w_all.append(np.full(e2.size, wk))
        scores += wk * 0.5 * (1.0 - e2)[:, None] * g
    sigma = info / (2.0 * wsum)
    cond = np.linalg.cond(sigma)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularInformationError("singular local information matrix", cond)
    eta2 = np.concatenate(eta2_all)
    weights = np.concatenate(w_all)
    mean_e2 = np.average(eta2, weights=weights)
    var_eta2 = float(np.average((eta2 - mean_e2) ** 2, weights=weights))
    if method == "plugin":
        # per-time-point version of mu^2; h corrects for weights not averaging to one
        mu2 = float(np.sum(prob.w**2)) / (2.0 * prob.m**2)
        h = float(prob.w.sum()) / prob.m
        cov = mu2 * var_eta2 * np.linalg.inv(sigma) / (h * h * prob.t_eff)
    elif method == "robust":
        # sandwich with scores summed over sites per time point, so
        # cross-sectional dependence of the innovations is accounted for
        hess = 0.5 * info
        hinv = np.linalg.inv(hess)
        cov = hinv @ (scores.T @ scores) @ hinv
    else:
        raise ValueError(f"unknown stderr method {method!r}")
    return np.sqrt(np.clip(np.diag(cov), 0.0, None)), var_eta2


def local_fit_stderr(
    panel: Panel,
    fit: LocalFit,
    spec: KernelSpec,
    order: GarchOrder | None = None,
    init: VarianceInit = "unconditional",
    method: str = "plugin",
) -> np.ndarray:
    """Plug-in standard errors of a converged local fit.

    ``method="plugin"`` uses ``mu^2 Var(eta^2) Sigma^{-1} / T'`` with
    ``Sigma`` the weighted average of ``grad s2 grad s2' / (2 s2^2)``; this
    treats sites as independent. ``method="robust"`` uses a sandwich whose
    middle term sums scores across sites at each time point.

    Raises
    ------
    SingularInformationError
        If the information matrix is numerically singular.
    """
    if not fit.converged:
        raise ValueError("standard errors require a converged fit")
    order = fit.estimate.order if order is None else order
    prob = _LocalProblem(panel, fit.target, spec, order, init)
    se, _ = _stderr(prob, fit.estimate, method)
    return se


def fit_surface(
    panel: Panel,
    targets,
    spec: KernelSpec,
    order: GarchOrder = GarchOrder(),
    opt: OptimizerConfig | None = None,
    n_jobs: int = 1,
) -> dict[Location, Union[LocalFit, FitFailure]]:
    """Independent local fits at every target.

    Errors are caught per target and returned as :class:`FitFailure`
    entries; the batch itself never raises for a single bad target.
    """
    tg = as_locations(targets) if len(targets) else np.empty((0, 2))
    keys = [Location(float(x), float(y)) for x, y in tg]

    def one(key):
        try:
            return fit_local(panel, key, spec, order, opt)
        except (ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
            return FitFailure(key, str(exc))

    if n_jobs > 1 and len(keys) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(one, keys))
    else:
        results = [one(k) for k in keys]
    return dict(zip(keys, results))
