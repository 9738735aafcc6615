"""
Residual extraction and maximum-likelihood fitting of the innovation covariance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.spatial.distance import pdist, squareform

from stgarch.core import CovarianceModel, Panel, ParameterPoint
from stgarch.estimate import LocalFit, VarianceInit, volatility_filter
from stgarch.simulate import build_covariance_matrix

__all__ = [
    "CovarianceFit",
    "ResidualPanel",
    "Variogram",
    "empirical_variogram",
    "extract_residuals",
    "fit_covariance_mle",
]

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class ResidualPanel:
    """Standardized residuals and centred squared innovations on aligned times.

    ``eta = Z / sigma`` and ``zeta = sigma2 * (eta**2 - 1)``; the first
    ``offset`` observations of every site are dropped as filter warm-up.
    """

    eta: np.ndarray
    zeta: np.ndarray
    sigma2: np.ndarray
    values: np.ndarray
    locations: np.ndarray
    offset: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.eta.shape[0]

    @property
    def m(self) -> int:
        return self.eta.shape[1]

    def field(self, name: str) -> np.ndarray:
        if name == "eta":
            return self.eta
        if name == "zeta":
            return self.zeta
        raise ValueError(f"field must be 'eta' or 'zeta', got {name!r}")

    def back_transform(self) -> np.ndarray:
        """Recover ``eta`` from ``zeta``: ``sign(Z) * sqrt(zeta / sigma2 + 1)``."""
        return np.sign(self.values) * np.sqrt(np.clip(self.zeta / self.sigma2 + 1.0, 0.0, None))

    def subset(self, columns) -> "ResidualPanel":
        idx = np.asarray(columns, dtype=int)
        return ResidualPanel(
            self.eta[:, idx],
            self.zeta[:, idx],
            self.sigma2[:, idx],
            self.values[:, idx],
            self.locations[idx],
            self.offset,
        )


FitLike = Union[LocalFit, ParameterPoint]


def extract_residuals(
    panel: Panel,
    fits: Union[Sequence[FitLike], Mapping],
    init: VarianceInit = "unconditional",
    require_converged: bool = True,
) -> ResidualPanel:
    """Filter every site with its own fitted parameters.

    Parameters
    ----------
    panel : Panel
    fits : sequence or mapping
        One :class:`LocalFit` (or a bare :class:`ParameterPoint`, e.g. the
        true parameters) per panel location, either aligned with
        ``panel.locations`` or keyed by ``(x, y)`` tuples.
    init : str or float
        Pre-sample policy passed to :func:`volatility_filter`.
    require_converged : bool
        Reject non-converged local fits.
    """
    if isinstance(fits, Mapping):
        ordered = []
        for x, y in panel.locations:
            key = (float(x), float(y))
            if key not in fits:
                raise ValueError(f"no fit for location {key}")
            ordered.append(fits[key])
        fits = ordered
    fits = list(fits)
    if len(fits) != panel.m:
        raise ValueError(f"need one fit per location: {len(fits)} fits for {panel.m} sites")

    points = []
    for u, f in enumerate(fits):
        if isinstance(f, ParameterPoint):
            points.append(f)
        elif isinstance(f, LocalFit):
            if require_converged and not f.converged:
                raise ValueError(f"fit for site {u} did not converge")
            points.append(f.estimate)
        else:
            raise ValueError(f"site {u}: expected a LocalFit or ParameterPoint, got {type(f).__name__}")

    offset = max(pt.order.p for pt in points)
    s2 = np.column_stack([volatility_filter(pt, panel.values[:, u], init) for u, pt in enumerate(points)])
    s2 = s2[offset:]
    z = panel.values[offset:]
    eta = z / np.sqrt(s2)
    zeta = z * z - s2
    res = ResidualPanel(eta, zeta, s2, z, panel.locations.copy(), offset)
    v = eta.var(axis=0)
    for u in np.flatnonzero((v < 0.5) | (v > 2.0)):
        msg = f"site {u}: residual variance {v[u]:.3g} outside [0.5, 2]"
        res.warnings.append(msg)
        logger.warning(msg)
    return res


@dataclass(frozen=True)
class Variogram:
    distance: np.ndarray
    semivariance: np.ndarray
    pairs: np.ndarray


def empirical_variogram(res: ResidualPanel, field: str = "eta", bins=None) -> Variogram:
    """Classical (Matheron) semivariogram of a residual field, averaged over time.

    ``bins`` are distance-bin edges; by default 12 equal-width bins up to
    the maximum pair distance. Empty bins are omitted.
    """
    x = res.field(field)
    if res.m < 2:
        raise ValueError("need at least two locations")
    h = pdist(res.locations)
    iu, ju = np.triu_indices(res.m, k=1)
    gam = 0.5 * np.mean((x[:, iu] - x[:, ju]) ** 2, axis=0)
    if bins is None:
        bins = np.linspace(0.0, h.max() * (1 + 1e-12), 13)
    bins = np.asarray(bins, dtype=float)
    idx = np.digitize(h, bins) - 1
    dist, semi, cnt = [], [], []
    for b in range(len(bins) - 1):
        sel = idx == b
        if sel.any():
            dist.append(h[sel].mean())
            semi.append(gam[sel].mean())
            cnt.append(int(sel.sum()))
    return Variogram(np.array(dist), np.array(semi), np.array(cnt, dtype=int))


@dataclass(eq=False)
class CovarianceFit:
    model: CovarianceModel
    std_errors: dict
    z_scores: dict
    neg_loglik: float
    converged: bool
    n_replicates: int
    message: str = ""


def _auto_init(res: ResidualPanel, field: str, family: str, smoothness: float) -> CovarianceModel:
    x = res.field(field)
    var = float(np.mean(x**2))
    vg = empirical_variogram(res, field)
    if len(vg.distance) >= 2:
        # linear extrapolation of the first two bins to zero distance
        d0, d1 = vg.distance[:2]
        g0, g1 = vg.semivariance[:2]
        nug = g0 - d0 * (g1 - g0) / (d1 - d0) if d1 > d0 else g0
    else:
        nug = vg.semivariance[0] if len(vg.distance) else 0.0
    nug = float(np.clip(nug, 0.0, 0.9 * var))
    hit = np.flatnonzero(vg.semivariance >= 0.63 * var)
    rng = float(vg.distance[hit[0]]) if hit.size else float(vg.distance.max())
    rng = max(rng, 1e-3 * float(vg.distance.max()))
    return CovarianceModel(
        family=family,
        sill=max(var - nug, 0.05 * var),
        range=rng,
        nugget=max(nug, 1e-4 * var),
        smoothness=smoothness,
    )


_NUGGET_FLOOR = 1e-10


def fit_covariance_mle(
    res: ResidualPanel,
    field: str = "eta",
    family: str = "exponential",
    init: CovarianceModel | str = "auto",
    smoothness: float = 0.5,
    maxiter: int = 500,
) -> CovarianceFit:
    """Gaussian maximum-likelihood fit of the residual field's covariance.

    Time points are independent replicates of a zero-mean m-variate normal
    vector. Sill, range and nugget are optimised on the log scale; the
    Matérn smoothness stays at its initial value. Standard errors come from
    the observed information (numerical Hessian) and z-scores are
    estimate / standard error.
    """
    x = res.field(field)
    n, m = x.shape
    if n < 10:
        raise ValueError(f"need at least 10 time points, got {n}")
    if m < 3:
        raise ValueError(f"need at least 3 locations, got {m}")
    if isinstance(init, str):
        if init != "auto":
            raise ValueError("init must be a CovarianceModel or 'auto'")
        init = _auto_init(res, field, family, smoothness)
    else:
        smoothness = init.smoothness
        family = init.family
    h = squareform(pdist(res.locations))
    scatter = x.T @ x
    eye = np.eye(m)
    model0 = CovarianceModel(family=family, smoothness=smoothness)

    def nll(logp):
        sill, rng, nug = np.exp(logp)
        cov = sill * model0.with_params(range=rng).correlation(h) + (nug + _NUGGET_FLOOR) * eye
        try:
            c, low = cho_factor(cov, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            return 1e300
        logdet = 2.0 * np.sum(np.log(np.diag(c)))
        tr = np.trace(cho_solve((c, low), scatter, check_finite=False))
        return 0.5 * (n * logdet + tr + n * m * np.log(2 * np.pi))

    p0 = np.log([init.sill, init.range, max(init.nugget, 1e-8)])
    dmax = float(h.max()) if m > 1 else 1.0
    scale = float(np.mean(x**2))
    bounds = [
        (np.log(1e-8 * scale), np.log(1e4 * scale)),
        (np.log(1e-4 * dmax), np.log(1e3 * dmax)),
        (np.log(1e-12 * scale + 1e-300), np.log(1e4 * scale)),
    ]
    p0 = np.clip(p0, [b[0] for b in bounds], [b[1] for b in bounds])
    best = minimize(nll, p0, method="L-BFGS-B", bounds=bounds, options=dict(maxiter=maxiter))
    # restart from the optimum once; L-BFGS-B with numerical gradients can stall
    again = minimize(nll, best.x, method="L-BFGS-B", bounds=bounds, options=dict(maxiter=maxiter))
    if again.fun <= best.fun:
        best = again
    sill, rng, nug = np.exp(best.x)
    model = CovarianceModel(family=family, sill=float(sill), range=float(rng), nugget=float(nug), smoothness=smoothness)
    cov = build_covariance_matrix(res.locations, model)
    if np.linalg.eigvalsh(cov).min() <= 0:
        raise np.linalg.LinAlgError("fitted covariance is not positive definite")

    names = ("sill", "range", "nugget")
    hess = _num_hessian(nll, best.x)
    se = dict.fromkeys(names, float("nan"))
    try:
        cov_log = np.linalg.inv(hess)
        d = np.diag(cov_log)
        vals = np.exp(best.x)
        for k, nm in enumerate(names):
            se[nm] = float(vals[k] * np.sqrt(d[k])) if d[k] > 0 else float("nan")
    except np.linalg.LinAlgError:
        pass
    est = dict(zip(names, (model.sill, model.range, model.nugget)))
    z = {nm: est[nm] / se[nm] if se[nm] and np.isfinite(se[nm]) else float("nan") for nm in names}
    return CovarianceFit(
        model=model,
        std_errors=se,
        z_scores=z,
        neg_loglik=float(best.fun),
        converged=bool(best.success),
        n_replicates=n,
        message=str(best.message),
    )


def _num_hessian(f, x, step=1e-4):
    n = x.size
    H = np.empty((n, n))
    f0 = f(x)
    for i in range(n):
        for j in range(i, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = step
            ej[j] = step
            if i == j:
                H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / step**2
            else:
                H[i, j] = H[j, i] = (
                    f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
                ) / (4 * step**2)
    return H
