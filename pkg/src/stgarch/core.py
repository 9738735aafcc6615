"""
Domain types shared by the simulation, estimation and kriging modules.

Locations live in the unit square by convention but any finite planar
coordinates are accepted. Parameter vectors are always ordered
``(omega, alpha[1..q], beta[1..p])``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.interpolate import BSpline
from scipy.special import gamma as gamma_fn
from scipy.special import kv

__all__ = [
    "ConstraintConfig",
    "CovarianceModel",
    "GarchOrder",
    "Location",
    "Panel",
    "ParameterPoint",
    "ParameterSurface",
    "as_locations",
    "unconditional_variance",
    "validate_parameters",
]


class Location(NamedTuple):
    x: float
    y: float


def as_locations(locations) -> np.ndarray:
    """Coerce a location, a sequence of locations or an array to shape (m, 2)."""
    arr = np.asarray(locations, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"locations must have shape (m, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("location coordinates must be finite")
    return arr


@dataclass(frozen=True)
class GarchOrder:
    """GARCH lag orders: ``p`` lags of the variance, ``q`` lags of the squares."""

    p: int = 1
    q: int = 1

    def __post_init__(self):
        if int(self.p) != self.p or int(self.q) != self.q:
            raise TypeError("p and q must be integers")
        if self.p < 1 or self.q < 1:
            raise ValueError(f"p and q must be >= 1, got p={self.p}, q={self.q}")

    @property
    def r(self) -> int:
        return max(self.p, self.q)

    @property
    def n_params(self) -> int:
        return 1 + self.p + self.q

    def param_names(self) -> list[str]:
        names = ["omega"]
        names += [f"alpha[{i + 1}]" for i in range(self.q)]
        names += [f"beta[{j + 1}]" for j in range(self.p)]
        return names


@dataclass(frozen=True)
class ConstraintConfig:
    """Bounds ``rho1 <= omega <= rho2`` and ``sum(alpha) + sum(beta) <= 1 - margin``."""

    rho1: float = 1e-6
    rho2: float = 1e6
    margin: float = 1e-3

    def __post_init__(self):
        if not (0 < self.rho1 <= self.rho2 < math.inf):
            raise ValueError("need 0 < rho1 <= rho2 < inf")
        if not (0 < self.margin < 1):
            raise ValueError("margin must lie in (0, 1)")

    @property
    def budget(self) -> float:
        return 1.0 - self.margin


@dataclass(frozen=True)
class ParameterPoint:
    """Local GARCH(p, q) law at one location."""

    omega: float
    alpha: tuple[float, ...]
    beta: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "omega", float(self.omega))
        object.__setattr__(self, "alpha", tuple(float(a) for a in np.atleast_1d(self.alpha)))
        object.__setattr__(self, "beta", tuple(float(b) for b in np.atleast_1d(self.beta)))
        if len(self.alpha) < 1 or len(self.beta) < 1:
            raise ValueError("alpha and beta need at least one entry each")

    @property
    def order(self) -> GarchOrder:
        return GarchOrder(p=len(self.beta), q=len(self.alpha))

    @property
    def persistence(self) -> float:
        return float(sum(self.alpha) + sum(self.beta))

    @property
    def delta(self) -> np.ndarray:
        """AR coefficients ``alpha_i + beta_i`` zero-padded to ``r = max(p, q)``."""
        r = self.order.r
        d = np.zeros(r)
        d[: len(self.alpha)] += self.alpha
        d[: len(self.beta)] += self.beta
        return d

    def as_vector(self) -> np.ndarray:
        return np.r_[self.omega, self.alpha, self.beta]

    @classmethod
    def from_vector(cls, vec, order: GarchOrder) -> "ParameterPoint":
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.size != order.n_params:
            raise ValueError(f"expected {order.n_params} parameters, got {vec.size}")
        return cls(vec[0], tuple(vec[1 : 1 + order.q]), tuple(vec[1 + order.q :]))


def validate_parameters(point: ParameterPoint, bounds: ConstraintConfig | None = None) -> list[str]:
    """Check a parameter point against the admissible set.

    Returns
    -------
    list of str
        One message per violated constraint; an empty list means the point is
        admissible.
    """
    bounds = ConstraintConfig() if bounds is None else bounds
    violations = []
    vec = point.as_vector()
    if not np.all(np.isfinite(vec)):
        violations.append("non-finite entries")
    if np.any(vec < 0):
        violations.append("negative entries")
    if not point.omega >= bounds.rho1:
        violations.append(f"omega below rho1 ({point.omega:g} < {bounds.rho1:g})")
    if not point.omega <= bounds.rho2:
        violations.append(f"omega above rho2 ({point.omega:g} > {bounds.rho2:g})")
    if not point.persistence <= bounds.budget:
        violations.append(
            f"stationarity margin (sum alpha + sum beta = {point.persistence:g} > {bounds.budget:g})"
        )
    return violations


def unconditional_variance(point: ParameterPoint) -> float:
    """Long-run variance ``omega / (1 - sum(delta))``."""
    s = float(point.delta.sum())
    if not s < 1.0:
        raise ValueError(f"non-stationary point: sum(alpha) + sum(beta) = {s} >= 1")
    return point.omega / (1.0 - s)


# ---------------------------------------------------------------------------
# covariance families


_FAMILIES = ("exponential", "matern")


@dataclass(frozen=True)
class CovarianceModel:
    """Isotropic covariance ``sill * rho(h / range) + nugget * 1{h == 0}``.

    ``sill`` is the partial sill. The Matérn correlation is parameterised so
    that ``smoothness = 0.5`` reproduces the exponential family exactly.
    """

    family: str = "exponential"
    sill: float = 1.0
    range: float = 0.5
    nugget: float = 0.0
    smoothness: float = 0.5

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {_FAMILIES}")
        if not self.sill > 0:
            raise ValueError("sill must be positive")
        if not self.range > 0:
            raise ValueError("range must be positive")
        if not self.nugget >= 0:
            raise ValueError("nugget must be nonnegative")
        if not self.smoothness > 0:
            raise ValueError("smoothness must be positive")

    @property
    def total_variance(self) -> float:
        return self.sill + self.nugget

    def correlation(self, h) -> np.ndarray:
        """Family correlation at distance ``h`` (without the nugget)."""
        u = np.asarray(h, dtype=float) / self.range
        if self.family == "exponential" or self.smoothness == 0.5:
            return np.exp(-u)
        nu = self.smoothness
        out = np.ones_like(u)
        pos = u > 0
        up = u[pos]
        out[pos] = (2.0 ** (1.0 - nu) / gamma_fn(nu)) * up**nu * kv(nu, up)
        # kv underflows to 0 for large arguments; the Matérn limit is 0 there too
        out[pos & ~np.isfinite(out)] = 0.0
        return out

    def covariance(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        return self.sill * self.correlation(h) + self.nugget * (h == 0)

    def with_params(self, **kw) -> "CovarianceModel":
        vals = dict(
            family=self.family,
            sill=self.sill,
            range=self.range,
            nugget=self.nugget,
            smoothness=self.smoothness,
        )
        vals.update(kw)
        return CovarianceModel(**vals)


# ---------------------------------------------------------------------------
# parameter surfaces


def clamped_knots(n_basis: int, degree: int = 3, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Open-uniform knot vector with ``n_basis`` basis functions on [lo, hi]."""
    if n_basis < degree + 1:
        raise ValueError("n_basis must be at least degree + 1")
    n_inner = n_basis - degree - 1
    inner = np.linspace(lo, hi, n_inner + 2)[1:-1]
    return np.r_[np.full(degree + 1, lo), inner, np.full(degree + 1, hi)]


def greville(knots: np.ndarray, degree: int) -> np.ndarray:
    """Greville abscissae; coefficients placed there reproduce linear functions."""
    n = len(knots) - degree - 1
    return np.array([knots[i + 1 : i + degree + 1].mean() for i in range(n)])


@dataclass(frozen=True, eq=False)
class ParameterSurface:
    """Tensor-product B-spline map from locations to GARCH parameters.

    Parameters
    ----------
    order : GarchOrder
    coefficients : ndarray, shape (n_params, nx, ny)
        One coefficient grid per parameter in ``(omega, alpha..., beta...)``
        order.
    knots_x, knots_y : ndarray
        Knot vectors of the two axes.
    degree : int
        Spline degree (3 gives two continuous derivatives).
    """

    order: GarchOrder
    coefficients: np.ndarray
    knots_x: np.ndarray
    knots_y: np.ndarray
    degree: int = 3
    _bx: BSpline = field(init=False, repr=False)
    _by: BSpline = field(init=False, repr=False)

    def __post_init__(self):
        coef = np.array(self.coefficients, dtype=float)
        nx = len(self.knots_x) - self.degree - 1
        ny = len(self.knots_y) - self.degree - 1
        if coef.shape != (self.order.n_params, nx, ny):
            raise ValueError(
                f"coefficients shape {coef.shape} does not match "
                f"({self.order.n_params}, {nx}, {ny})"
            )
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "knots_x", np.asarray(self.knots_x, dtype=float))
        object.__setattr__(self, "knots_y", np.asarray(self.knots_y, dtype=float))
        object.__setattr__(self, "_bx", BSpline(self.knots_x, np.eye(nx), self.degree, extrapolate=False))
        object.__setattr__(self, "_by", BSpline(self.knots_y, np.eye(ny), self.degree, extrapolate=False))

    @classmethod
    def constant(cls, point: ParameterPoint, n_basis: int = 4, degree: int = 3) -> "ParameterSurface":
        knots = clamped_knots(n_basis, degree)
        coef = np.broadcast_to(point.as_vector()[:, None, None], (point.order.n_params, n_basis, n_basis))
        return cls(point.order, coef.copy(), knots, knots.copy(), degree)

    @classmethod
    def linear(
        cls,
        point: ParameterPoint,
        gradient,
        center=(0.5, 0.5),
        n_basis: int = 4,
        degree: int = 3,
    ) -> "ParameterSurface":
        """Surface equal to ``point + gradient @ (s - center)`` everywhere.

        ``gradient`` has shape (n_params, 2): one (d/dx, d/dy) row per
        parameter.
        """
        knots = clamped_knots(n_basis, degree)
        g = greville(knots, degree)
        grad = np.asarray(gradient, dtype=float).reshape(point.order.n_params, 2)
        gx = (g - center[0])[None, :, None]
        gy = (g - center[1])[None, None, :]
        coef = point.as_vector()[:, None, None] + grad[:, :1, None] * gx + grad[:, 1:, None] * gy
        return cls(point.order, coef, knots, knots.copy(), degree)

    def _basis(self, locations: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # clip into the knot span; extrapolate=False would give NaN at the edges
        x = np.clip(locations[:, 0], self.knots_x[0], self.knots_x[-1])
        y = np.clip(locations[:, 1], self.knots_y[0], self.knots_y[-1])
        bx = np.nan_to_num(self._bx(x))
        by = np.nan_to_num(self._by(y))
        # right end: BSpline with extrapolate=False returns nan at the last knot
        bx[x >= self.knots_x[-1], -1] = 1.0
        by[y >= self.knots_y[-1], -1] = 1.0
        return bx, by

    def evaluate(self, locations) -> np.ndarray:
        """Parameter vectors at ``locations``, shape (m, n_params)."""
        loc = as_locations(locations)
        bx, by = self._basis(loc)
        return np.einsum("mi,kij,mj->mk", bx, self.coefficients, by)

    def point_at(self, location) -> ParameterPoint:
        return ParameterPoint.from_vector(self.evaluate(location)[0], self.order)

    def points(self, locations) -> list[ParameterPoint]:
        return [ParameterPoint.from_vector(v, self.order) for v in self.evaluate(locations)]

    def unconditional_variance(self, locations) -> np.ndarray:
        vals = self.evaluate(locations)
        return vals[:, 0] / (1.0 - vals[:, 1:].sum(axis=1))

    def scaled_about(self, point: ParameterPoint, factor: float) -> "ParameterSurface":
        """Shrink (factor < 1) or stretch the surface's deviations from ``point``."""
        base = point.as_vector()[:, None, None]
        coef = base + factor * (self.coefficients - base)
        return ParameterSurface(self.order, coef, self.knots_x, self.knots_y, self.degree)


# ---------------------------------------------------------------------------
# panels


@dataclass(eq=False)
class Panel:
    """A T x m panel of observations bound to m locations.

    Attributes
    ----------
    locations : ndarray, shape (m, 2)
    values : ndarray, shape (T, m)
    volatility : ndarray, shape (T, m), optional
        Conditional variances, when known (simulated data).
    innovations : ndarray, shape (T, m), optional
        Standardized innovations, when known.
    labels : list of str
        Entity labels, one per location.
    times : list, optional
        Time stamps of the rows.
    """

    locations: np.ndarray
    values: np.ndarray
    volatility: np.ndarray | None = None
    innovations: np.ndarray | None = None
    labels: list[str] | None = None
    times: Sequence | None = None

    def __post_init__(self):
        self.locations = as_locations(self.locations)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        T, m = self.values.shape
        if m != self.locations.shape[0]:
            raise ValueError(f"values have {m} columns but there are {self.locations.shape[0]} locations")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("panel values must be finite (no missing entries)")
        if self.volatility is not None:
            self.volatility = np.asarray(self.volatility, dtype=float).reshape(T, m)
            if not np.all(self.volatility > 0):
                raise ValueError("volatility entries must be positive")
        if self.innovations is not None:
            self.innovations = np.asarray(self.innovations, dtype=float).reshape(T, m)
        if self.labels is None:
            self.labels = [f"s{u}" for u in range(m)]
        elif len(self.labels) != m:
            raise ValueError("one label per location required")
        self.labels = [str(lab) for lab in self.labels]

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def subset(self, columns) -> "Panel":
        """Panel restricted to the given site indices."""
        idx = np.asarray(columns, dtype=int)
        return Panel(
            locations=self.locations[idx],
            values=self.values[:, idx],
            volatility=None if self.volatility is None else self.volatility[:, idx],
            innovations=None if self.innovations is None else self.innovations[:, idx],
            labels=[self.labels[i] for i in idx],
            times=self.times,
        )

    def with_locations(self, locations) -> "Panel":
        return Panel(
            locations=locations,
            values=self.values,
            volatility=self.volatility,
            innovations=self.innovations,
            labels=list(self.labels),
            times=self.times,
        )
