"""
Estimator-style wrappers around the functional API.

``X`` is always a (T, m) matrix of returns, rows are time points and
columns are sites; site coordinates are passed separately to ``fit``.
"""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from stgarch._validation import check_choice, check_locations, check_panel, check_positive
from stgarch.core import ConstraintConfig, GarchOrder, Panel, unconditional_variance
from stgarch.covfit import ResidualPanel, extract_residuals, fit_covariance_mle
from stgarch.estimate import (
    FitFailure,
    KernelSpec,
    LocalFit,
    OptimizerConfig,
    default_bandwidth,
    fit_surface,
    volatility_filter,
)
from stgarch.krige import Prediction, kriging_weights, predict_squared_process
from stgarch.simulate import build_covariance_matrix

__all__ = ["LocalGARCH", "STGARCHKriger", "SpatialCovariance", "TargetPrediction"]

logger = logging.getLogger(__name__)


class LocalGARCH(BaseEstimator):
    """Local weighted QMLE of GARCH(p, q) parameter surfaces.

    ``fit`` stores the panel; parameters are then estimated wherever
    ``predict`` asks for them. ``bandwidth=None`` uses ``m ** -0.25``.
    """

    def __init__(
        self,
        p: int = 1,
        q: int = 1,
        kernel: str = "uniform",
        bandwidth: float | None = None,
        n_starts: int = 3,
        tol: float = 1e-9,
        gtol: float = 1e-5,
        maxiter: int = 1000,
        init="unconditional",
        stderr_method: str = "plugin",
        compute_stderr: bool = True,
        margin: float = 1e-3,
        seed: int = 0,
        n_jobs: int = 1,
    ):
        self.p = p
        self.q = q
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.n_starts = n_starts
        self.tol = tol
        self.gtol = gtol
        self.maxiter = maxiter
        self.init = init
        self.stderr_method = stderr_method
        self.compute_stderr = compute_stderr
        self.margin = margin
        self.seed = seed
        self.n_jobs = n_jobs

    def _configure(self, m: int):
        self.order_ = GarchOrder(int(self.p), int(self.q))
        b = default_bandwidth(m) if self.bandwidth is None else check_positive(self.bandwidth, "bandwidth")
        self.kernel_ = KernelSpec(self.kernel, b)
        self.optimizer_ = OptimizerConfig(
            tol=self.tol,
            gtol=self.gtol,
            n_starts=self.n_starts,
            maxiter=self.maxiter,
            seed=self.seed,
            constraints=ConstraintConfig(margin=self.margin),
            init=self.init,
            compute_stderr=self.compute_stderr,
            stderr_method=self.stderr_method,
        )

    def fit(self, X, locations, labels=None):
        values, loc = check_panel(X, locations)
        self._configure(loc.shape[0])
        self.panel_ = Panel(loc, values, labels=labels)
        self.n_sites_ = loc.shape[0]
        return self

    def fit_targets(self, targets) -> dict:
        """Full :class:`LocalFit` (or :class:`FitFailure`) per target."""
        check_is_fitted(self, "panel_")
        tg = check_locations(targets, "targets")
        return fit_surface(self.panel_, tg, self.kernel_, self.order_, self.optimizer_, self.n_jobs)

    def predict(self, targets) -> np.ndarray:
        """Estimated parameter vectors ``[omega, alpha..., beta...]`` per target.

        Rows of failed fits are NaN.
        """
        fits = self.fit_targets(targets)
        out = np.full((len(fits), self.order_.n_params), np.nan)
        for k, f in enumerate(fits.values()):
            if isinstance(f, LocalFit):
                out[k] = f.estimate.as_vector()
        return out

    def transform(self, X, points) -> np.ndarray:
        """Standardized residuals of ``X`` under per-column parameter points."""
        values = np.asarray(X, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(points):
            raise ValueError("need one parameter point per column of X")
        s2 = np.column_stack(
            [volatility_filter(pt, values[:, u], self.init) for u, pt in enumerate(points)]
        )
        return values / np.sqrt(s2)


class SpatialCovariance(BaseEstimator):
    """Gaussian MLE of an exponential or Matérn covariance from replicated fields.

    ``fit(X, locations)`` treats the rows of ``X`` as independent draws of
    the field at ``locations``.
    """

    def __init__(self, family: str = "exponential", smoothness: float = 0.5, maxiter: int = 500):
        self.family = family
        self.smoothness = smoothness
        self.maxiter = maxiter

    def fit(self, X, locations):
        values, loc = check_panel(X, locations, min_times=10)
        check_choice(self.family, {"exponential", "matern"}, "family")
        res = ResidualPanel(values, values, np.ones_like(values), values, loc)
        fit = fit_covariance_mle(res, "eta", self.family, "auto", self.smoothness, self.maxiter)
        self.model_ = fit.model
        self.std_errors_ = fit.std_errors
        self.z_scores_ = fit.z_scores
        self.neg_loglik_ = fit.neg_loglik
        self.converged_ = fit.converged
        return self

    def covariance(self, locations) -> np.ndarray:
        check_is_fitted(self, "model_")
        return build_covariance_matrix(check_locations(locations), self.model_)


class TargetPrediction:
    """Prediction at one target: local fit, kriging system and predicted paths."""

    __slots__ = ("target", "fit", "system", "prediction", "error")

    def __init__(self, target, fit=None, system=None, prediction: Prediction | None = None, error: str = ""):
        self.target = target
        self.fit = fit
        self.system = system
        self.prediction = prediction
        self.error = error

    @property
    def ok(self) -> bool:
        return self.prediction is not None


class STGARCHKriger(BaseEstimator):
    """Two-stage STGARCH estimation and volatility kriging.

    ``fit`` estimates local parameters at every observed site, filters the
    residuals and fits the innovation covariance. ``predict`` fits the local
    parameters at each target and runs the kriging predictor of the squared
    process on the residual time grid.

    Parameters
    ----------
    kriging_route : {"direct", "mapping"}
        ``"direct"`` fits a Gaussian covariance model to ``zeta`` itself;
        ``"mapping"`` derives it from the ``eta`` fit as
        ``2 c(h)**2`` scaled by the mean residual variances.
    predictor_init : {"zero", "unconditional"}
        Starting value of the predictor recursion.
    strict : bool
        Refuse to continue when a site fit did not converge. When False
        the last iterate is used and the site is listed in ``unconverged_``.
    """

    def __init__(
        self,
        p: int = 1,
        q: int = 1,
        kernel: str = "uniform",
        bandwidth: float | None = None,
        n_starts: int = 3,
        tol: float = 1e-9,
        gtol: float = 1e-5,
        maxiter: int = 1000,
        init="unconditional",
        margin: float = 1e-3,
        covariance_family: str = "exponential",
        smoothness: float = 0.5,
        kriging_route: str = "direct",
        fit_eta_covariance: bool = True,
        predictor_init: str = "zero",
        strict: bool = False,
        seed: int = 0,
        n_jobs: int = 1,
    ):
        self.p = p
        self.q = q
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.n_starts = n_starts
        self.tol = tol
        self.gtol = gtol
        self.maxiter = maxiter
        self.init = init
        self.margin = margin
        self.covariance_family = covariance_family
        self.smoothness = smoothness
        self.kriging_route = kriging_route
        self.fit_eta_covariance = fit_eta_covariance
        self.predictor_init = predictor_init
        self.strict = strict
        self.seed = seed
        self.n_jobs = n_jobs

    def _local(self) -> LocalGARCH:
        return LocalGARCH(
            p=self.p,
            q=self.q,
            kernel=self.kernel,
            bandwidth=self.bandwidth,
            n_starts=self.n_starts,
            tol=self.tol,
            gtol=self.gtol,
            maxiter=self.maxiter,
            init=self.init,
            compute_stderr=False,
            margin=self.margin,
            seed=self.seed,
            n_jobs=self.n_jobs,
        )

    def fit(self, X, locations, labels=None):
        check_choice(self.kriging_route, {"direct", "mapping"}, "kriging_route")
        check_choice(self.predictor_init, {"zero", "unconditional"}, "predictor_init")
        self.local_ = self._local().fit(X, locations, labels)
        panel = self.local_.panel_
        fits = self.local_.fit_targets(panel.locations)
        ordered = list(fits.values())
        failed = [k for k, f in enumerate(ordered) if isinstance(f, FitFailure)]
        if failed:
            raise ValueError(f"local fit failed at sites {failed}: {ordered[failed[0]].reason}")
        self.unconverged_ = [k for k, f in enumerate(ordered) if not f.converged]
        if self.unconverged_:
            if self.strict:
                raise ValueError(f"local fits did not converge at sites {self.unconverged_}")
            logger.warning("%d of %d site fits did not converge", len(self.unconverged_), panel.m)
        self.site_fits_ = ordered
        self.residuals_ = extract_residuals(panel, ordered, self.init, require_converged=False)
        fam, nu = self.covariance_family, self.smoothness
        self.eta_covariance_ = None
        if self.fit_eta_covariance or self.kriging_route == "mapping":
            self.eta_covariance_ = fit_covariance_mle(self.residuals_, "eta", fam, smoothness=nu)
        self.zeta_covariance_ = None
        if self.kriging_route == "direct":
            self.zeta_covariance_ = fit_covariance_mle(self.residuals_, "zeta", fam, smoothness=nu)
        return self

    @property
    def time_offset_(self) -> int:
        """Number of leading observations dropped from the residual grid."""
        return self.residuals_.offset

    def kriging_system(self, target, target_scale: float | None = None):
        check_is_fitted(self, "residuals_")
        sites = self.residuals_.locations
        if self.kriging_route == "direct":
            return kriging_weights(sites, target, self.zeta_covariance_.model)
        scale = self.residuals_.sigma2.mean(axis=0)
        return kriging_weights(
            sites, target, self.eta_covariance_.model, site_scale=scale, target_scale=target_scale, squared=True
        )

    def predict_targets(self, targets) -> list[TargetPrediction]:
        check_is_fitted(self, "residuals_")
        fits = self.local_.fit_targets(targets)
        out = []
        for key, f in fits.items():
            if isinstance(f, FitFailure):
                out.append(TargetPrediction(key, error=f.reason))
                continue
            try:
                system = self.kriging_system(key, unconditional_variance(f.estimate))
                pred = predict_squared_process(key, f.estimate, self.residuals_, system, self.predictor_init)
            except (ValueError, np.linalg.LinAlgError) as exc:
                out.append(TargetPrediction(key, fit=f, error=str(exc)))
                continue
            out.append(TargetPrediction(key, f, system, pred))
        return out

    def predict(self, targets) -> np.ndarray:
        """Predicted conditional volatility, shape (T - offset, n_targets).

        Columns of failed targets are NaN.
        """
        preds = self.predict_targets(targets)
        out = np.full((self.residuals_.T, len(preds)), np.nan)
        for k, tp in enumerate(preds):
            if tp.ok:
                out[:, k] = tp.prediction.volatility
        return out

    def predict_unconditional(self, targets) -> np.ndarray:
        """Long-run variance at each target from its local fit."""
        check_is_fitted(self, "residuals_")
        fits = self.local_.fit_targets(targets)
        out = np.full(len(fits), np.nan)
        for k, f in enumerate(fits.values()):
            if isinstance(f, LocalFit):
                out[k] = unconditional_variance(f.estimate)
        return out
