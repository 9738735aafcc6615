"""
Simulation of spatially correlated innovation fields and STGARCH panels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from stgarch import _recursions as rec
from stgarch.core import (
    ConstraintConfig,
    CovarianceModel,
    GarchOrder,
    Panel,
    ParameterSurface,
    as_locations,
    clamped_knots,
    validate_parameters,
)

__all__ = [
    "FieldSampler",
    "SurfaceConfig",
    "build_covariance_matrix",
    "random_bspline_surface",
    "sample_innovation_field",
    "simulate_stgarch",
]

_JITTER = 1e-10


def build_covariance_matrix(locations, model: CovarianceModel, targets=None) -> np.ndarray:
    """Covariance matrix of a field observed at ``locations``.

    With ``targets`` given, returns the (m, n) cross-covariance between
    ``locations`` and ``targets``; the nugget then only enters where a target
    coincides with a location.
    """
    a = as_locations(locations)
    if targets is None:
        h = cdist(a, a)
        if model.nugget == 0:
            off = h[~np.eye(len(a), dtype=bool)]
            if off.size and np.min(off) == 0:
                raise ValueError("duplicate locations with zero nugget give a singular covariance matrix")
        cov = model.sill * model.correlation(h)
        # exact symmetry regardless of rounding in cdist
        return 0.5 * (cov + cov.T) + model.nugget * np.eye(len(a))
    return model.covariance(cdist(a, as_locations(targets)))


def _cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(cov + _JITTER * np.eye(cov.shape[0]))


@dataclass(eq=False)
class FieldSampler:
    """Gaussian innovation field with unit marginal variance.

    The covariance model's sill and nugget are read as a split of the unit
    variance, so the sampled field always has ``Var(eta) = 1`` at each site.
    """

    locations: np.ndarray
    model: CovarianceModel
    seed: int = 0
    factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.locations = as_locations(self.locations)
        cov = build_covariance_matrix(self.locations, self.model) / self.model.total_variance
        self.factor = _cholesky(cov)

    @property
    def covariance(self) -> np.ndarray:
        return build_covariance_matrix(self.locations, self.model) / self.model.total_variance

    def sample(self, T: int) -> np.ndarray:
        return sample_innovation_field(self, T)


def sample_innovation_field(sampler: FieldSampler, T: int) -> np.ndarray:
    """Draw a T x m matrix of innovations, rows independent over time."""
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(sampler.seed)
    eps = rng.standard_normal((T, sampler.factor.shape[0]))
    return eps @ sampler.factor.T


def simulate_stgarch(
    surface: ParameterSurface,
    innovations: np.ndarray,
    locations,
    burn_in: int = 500,
    labels=None,
) -> Panel:
    """Run the GARCH recursion at every location with its local parameters.

    Each site starts at its unconditional variance; the first ``burn_in``
    rows are discarded.
    """
    loc = as_locations(locations)
    eta = np.ascontiguousarray(np.asarray(innovations, dtype=float))
    if eta.ndim != 2 or eta.shape[1] != loc.shape[0]:
        raise ValueError(f"innovations shape {eta.shape} does not match {loc.shape[0]} locations")
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    if burn_in >= eta.shape[0]:
        raise ValueError("burn_in must be shorter than the innovation series")
    order = surface.order
    params = surface.evaluate(loc)
    for u, pt in enumerate(surface.points(loc)):
        bad = validate_parameters(pt)
        if bad:
            raise ValueError(f"surface invalid at location {u}: {'; '.join(bad)}")
    omega = np.ascontiguousarray(params[:, 0])
    alpha = np.ascontiguousarray(params[:, 1 : 1 + order.q])
    beta = np.ascontiguousarray(params[:, 1 + order.q :])
    z, s2 = rec.simulate_panel(omega, alpha, beta, eta)
    return Panel(
        locations=loc,
        values=z[burn_in:],
        volatility=s2[burn_in:],
        innovations=eta[burn_in:],
        labels=labels,
    )


@dataclass(frozen=True)
class SurfaceConfig:
    """Coefficient ranges for randomized spline surfaces.

    Each spline coefficient of each parameter is drawn uniformly from its
    range. B-spline bases are nonnegative and sum to one, so every surface
    value stays inside the coefficient range; ``alpha`` and ``beta`` ranges
    apply to each lag separately.
    """

    omega: tuple[float, float] = (0.05, 0.25)
    alpha: tuple[float, float] = (0.02, 0.2)
    beta: tuple[float, float] = (0.35, 0.75)
    n_basis: int = 5
    degree: int = 3
    constraints: ConstraintConfig = ConstraintConfig()

    def check(self, order: GarchOrder) -> None:
        for name in ("omega", "alpha", "beta"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi):
                raise ValueError(f"{name} range must satisfy 0 <= lo <= hi, got {(lo, hi)}")
        c = self.constraints
        if self.omega[0] < c.rho1 or self.omega[1] > c.rho2:
            raise ValueError("omega range violates the rho1/rho2 bounds")
        worst = order.q * self.alpha[1] + order.p * self.beta[1]
        if worst > c.budget:
            raise ValueError(
                f"worst-case persistence {worst:g} exceeds the stationarity budget {c.budget:g}"
            )


def random_bspline_surface(order: GarchOrder, seed: int, config: SurfaceConfig | None = None) -> ParameterSurface:
    """Draw a random cubic tensor-spline parameter surface."""
    config = SurfaceConfig() if config is None else config
    config.check(order)
    rng = np.random.default_rng(seed)
    nb = config.n_basis
    ranges = [config.omega] + [config.alpha] * order.q + [config.beta] * order.p
    coef = np.stack([rng.uniform(lo, hi, size=(nb, nb)) for lo, hi in ranges])
    knots = clamped_knots(nb, config.degree)
    return ParameterSurface(order, coef, knots, knots.copy(), config.degree)
