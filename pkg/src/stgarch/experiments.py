"""
Reproducible simulation studies.

``run_monte_carlo`` estimates out-of-sample bias and RMSE of the local
parameter estimates and of the predicted unconditional variance on a
randomized design; ``run_approximation_study`` measures how far the squared
process drifts from its version with parameters frozen at an anchor.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from stgarch import _recursions as rec
from stgarch.core import CovarianceModel, GarchOrder, ParameterSurface, as_locations, unconditional_variance
from stgarch.estimate import LocalFit
from stgarch.estimators import STGARCHKriger
from stgarch.simulate import FieldSampler, SurfaceConfig, random_bspline_surface, simulate_stgarch

__all__ = [
    "ApproxConfig",
    "ApproxReport",
    "MCCell",
    "MCConfig",
    "MCReport",
    "accumulate_bias_rmse",
    "median_parameter_error",
    "run_approximation_study",
    "run_monte_carlo",
]

logger = logging.getLogger(__name__)

FLOAT_FMT = ".17g"
_STREAM_SITES, _STREAM_TARGETS, _STREAM_SURFACE, _STREAM_FIELD = 0, 1, 2, 3


def _rng(master: int, rep: int, *tags: int) -> np.random.Generator:
    # counter-based split: replication `rep` can be rerun on its own
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=(rep, *tags)))


def _seed_from(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


@dataclass(frozen=True)
class MCConfig:
    """Monte Carlo design.

    Every replication draws fresh training sites (one set per ``n1``),
    ``n2`` prediction sites, a random parameter surface and one innovation
    field; shorter series are prefixes of the longest one.
    """

    replications: int = 20
    n1: tuple[int, ...] = (50, 100)
    n2: int = 50
    T: tuple[int, ...] = (200, 300)
    seed: int = 0
    model: CovarianceModel = CovarianceModel(family="exponential", sill=1.0, range=0.5, nugget=0.0)
    surface_config: SurfaceConfig = SurfaceConfig()
    order: GarchOrder = GarchOrder(1, 1)
    kernel: str = "uniform"
    bandwidth_exponent: float = -0.25
    burn_in: int = 500
    grid: int = 10
    n_starts: int = 3
    fit_covariance: bool = True
    max_failure_rate: float = 0.10
    n_jobs: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.n2 < 1 or min(self.n1) < 3:
            raise ValueError("need n2 >= 1 and n1 >= 3 (covariance fit needs three sites)")
        if min(self.T) <= self.order.p + 10:
            raise ValueError("series too short for the residual covariance fit")
        object.__setattr__(self, "n1", tuple(int(v) for v in self.n1))
        object.__setattr__(self, "T", tuple(int(v) for v in self.T))

    def bandwidth(self, n1: int) -> float:
        return float(n1) ** self.bandwidth_exponent

    def to_dict(self) -> dict:
        d = asdict(self)
        d["order"] = [self.order.p, self.order.q]
        return d


def accumulate_bias_rmse(estimates, truth) -> tuple[float, float]:
    """Pooled bias and RMSE over all (replication, location) pairs.

    NaN entries (failed fits) are excluded.
    """
    e = np.asarray(estimates, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    keep = np.isfinite(e) & np.isfinite(t)
    if not keep.any():
        return float("nan"), float("nan")
    d = e[keep] - t[keep]
    return float(d.mean()), float(math.sqrt(np.mean(d * d)))


@dataclass
class MCCell:
    n1: int
    T: int
    bias: dict
    rmse: dict
    n_targets: int
    n_failed_targets: int
    n_failed_replications: int
    theta_mean: float


@dataclass
class MCReport:
    config: MCConfig
    cells: list[MCCell]
    records: list[dict]
    runtime: dict = field(default_factory=dict)

    columns = ("omega", "alpha", "beta", "volatility")

    def cell(self, n1: int, T: int) -> MCCell:
        for c in self.cells:
            if c.n1 == n1 and c.T == T:
                return c
        raise KeyError((n1, T))

    def table(self) -> list[list]:
        rows = []
        for c in self.cells:
            row = [c.n1, c.T]
            for name in self.column_names():
                row += [c.bias[name], c.rmse[name]]
            rows.append(row)
        return rows

    def column_names(self) -> list[str]:
        names = self.config.order.param_names()
        if self.config.order == GarchOrder(1, 1):
            names = ["omega", "alpha", "beta"]
        return names + ["volatility"]

    def header(self) -> list[str]:
        h = ["n1", "T"]
        for name in self.column_names():
            h += [f"{name}_bias", f"{name}_rmse"]
        return h

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for row in self.table():
                w.writerow([v if isinstance(v, int) else format(v, FLOAT_FMT) for v in row])

    def to_json(self, path, include_runtime: bool = True) -> None:
        payload = {
            "config": self.config.to_dict(),
            "cells": [asdict(c) for c in self.cells],
            "records": self.records,
        }
        if include_runtime:
            payload["runtime"] = self.runtime
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_json_ready(payload), fh, indent=1, sort_keys=True)


def _json_ready(obj):
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_ready(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _one_cell(cfg: MCConfig, values: np.ndarray, sites: np.ndarray, targets: np.ndarray, opt_seed: int):
    est = STGARCHKriger(
        p=cfg.order.p,
        q=cfg.order.q,
        kernel=cfg.kernel,
        bandwidth=cfg.bandwidth(sites.shape[0]),
        n_starts=cfg.n_starts,
        fit_eta_covariance=cfg.fit_covariance,
        seed=opt_seed,
        n_jobs=cfg.n_jobs,
    )
    if cfg.fit_covariance:
        local = est.fit(values, sites).local_
        theta = est.eta_covariance_.model.range
    else:
        local = est._local().fit(values, sites)
        theta = float("nan")
    fits = list(local.fit_targets(targets).values())
    return fits, theta


def run_monte_carlo(config: MCConfig) -> MCReport:
    """Run the randomized design and aggregate bias/RMSE per (n1, T) cell.

    A replication whose site-level pipeline raises is excluded from its
    cell; more than ``max_failure_rate`` excluded replications in any cell
    aborts the run. Failed target fits only drop that target.
    """
    cfg = config
    order = cfg.order
    n_par = order.n_params
    t_max = max(cfg.T)
    # accumulators: cell -> list of (estimates (n2, n_par + 1), truth (n2, n_par + 1))
    acc = {(n1, T): [] for n1 in cfg.n1 for T in cfg.T}
    thetas = {(n1, T): [] for n1 in cfg.n1 for T in cfg.T}
    failed = {(n1, T): 0 for n1 in cfg.n1 for T in cfg.T}
    failed_targets = {(n1, T): 0 for n1 in cfg.n1 for T in cfg.T}
    records = []
    runtime = {"cells": {}}
    t_start = time.perf_counter()

    for rep in range(cfg.replications):
        targets = _rng(cfg.seed, rep, _STREAM_TARGETS).uniform(size=(cfg.n2, 2))
        surface = random_bspline_surface(order, _seed_from(_rng(cfg.seed, rep, _STREAM_SURFACE)), cfg.surface_config)
        truth = np.column_stack([surface.evaluate(targets), surface.unconditional_variance(targets)])
        for i1, n1 in enumerate(cfg.n1):
            sites = _rng(cfg.seed, rep, _STREAM_SITES, i1).uniform(size=(n1, 2))
            sampler = FieldSampler(sites, cfg.model, seed=_seed_from(_rng(cfg.seed, rep, _STREAM_FIELD, i1)))
            panel = simulate_stgarch(surface, sampler.sample(t_max + cfg.burn_in), sites, cfg.burn_in)
            for T in cfg.T:
                key = (n1, T)
                tic = time.perf_counter()
                rec_ = {"replication": rep, "n1": n1, "T": T}
                try:
                    fits, theta = _one_cell(cfg, panel.values[:T], sites, targets, cfg.seed + rep)
                except (ValueError, np.linalg.LinAlgError) as exc:
                    failed[key] += 1
                    logger.warning("replication %d, n1=%d, T=%d failed: %s", rep, n1, T, exc)
                    rec_["error"] = str(exc)
                    records.append(rec_)
                    continue
                est = np.full((cfg.n2, n_par + 1), np.nan)
                for k, f in enumerate(fits):
                    if isinstance(f, LocalFit):
                        est[k, :n_par] = f.estimate.as_vector()
                        est[k, n_par] = unconditional_variance(f.estimate)
                n_bad = int(np.isnan(est[:, 0]).sum())
                failed_targets[key] += n_bad
                acc[key].append((est, truth))
                thetas[key].append(theta)
                rec_.update(theta_hat=theta, n_failed_targets=n_bad, estimates=est, truth=truth)
                records.append(rec_)
                runtime["cells"].setdefault(f"{n1}x{T}", []).append(time.perf_counter() - tic)
        for key in acc:
            if failed[key] > cfg.max_failure_rate * cfg.replications:
                raise RuntimeError(
                    f"cell n1={key[0]}, T={key[1]}: {failed[key]} of {cfg.replications} replications failed"
                )

    names = MCReport(cfg, [], []).column_names()
    cells = []
    for n1 in cfg.n1:
        for T in cfg.T:
            key = (n1, T)
            bias, rmse = {}, {}
            if acc[key]:
                E = np.concatenate([e for e, _ in acc[key]])
                G = np.concatenate([g for _, g in acc[key]])
            else:
                E = G = np.full((0, n_par + 1), np.nan)
            for j, name in enumerate(names):
                bias[name], rmse[name] = accumulate_bias_rmse(E[:, j], G[:, j])
            th = np.asarray(thetas[key], dtype=float)
            cells.append(
                MCCell(
                    n1=n1,
                    T=T,
                    bias=bias,
                    rmse=rmse,
                    n_targets=int(np.isfinite(E[:, 0]).sum()),
                    n_failed_targets=failed_targets[key],
                    n_failed_replications=failed[key],
                    theta_mean=float(np.nanmean(th)) if np.isfinite(th).any() else float("nan"),
                )
            )
    runtime["total_seconds"] = time.perf_counter() - t_start
    return MCReport(cfg, cells, records, runtime)


def median_parameter_error(report: MCReport, n1: int, T: int) -> float:
    """Median Euclidean error of the parameter vector over (replication, target)."""
    n_par = report.config.order.n_params
    errs = []
    for r in report.records:
        if r["n1"] == n1 and r["T"] == T and "estimates" in r:
            d = np.asarray(r["estimates"])[:, :n_par] - np.asarray(r["truth"])[:, :n_par]
            errs.append(np.linalg.norm(d, axis=1))
    if not errs:
        return float("nan")
    e = np.concatenate(errs)
    return float(np.median(e[np.isfinite(e)]))


# ---------------------------------------------------------------------------
# approximation study


@dataclass(frozen=True)
class ApproxConfig:
    replications: int = 50
    T: int = 500
    burn_in: int = 200
    n_directions: int = 8
    seed: int = 0


@dataclass
class ApproxReport:
    distances: np.ndarray
    mean_deviation: np.ndarray
    std_error: np.ndarray
    per_replication: np.ndarray
    spearman: float
    slope: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["distance", "mean_deviation", "std_error"])
            for d, m, s in zip(self.distances, self.mean_deviation, self.std_error):
                w.writerow([format(float(v), FLOAT_FMT) for v in (d, m, s)])


def _sphere_directions(n: int) -> np.ndarray:
    """``n`` points on the unit sup-norm sphere, evenly spaced along its perimeter."""
    pts = []
    for k in range(n):
        u = 8.0 * k / n  # perimeter length of the unit sup-sphere is 8
        side, f = divmod(u, 2.0)
        f -= 1.0
        pts.append([(1.0, f), (-f, 1.0), (-1.0, -f), (f, -1.0)][int(side)])
    return np.array(pts)


def _probe_locations(anchor: np.ndarray, distances, n_dir: int) -> np.ndarray:
    dirs = _sphere_directions(n_dir)
    probes = anchor[None, None, :] + np.asarray(distances, dtype=float)[:, None, None] * dirs[None]
    if np.any(probes < 0) or np.any(probes > 1):
        raise ValueError("probe locations leave the unit square; use smaller distances or a central anchor")
    return probes


def run_approximation_study(
    surface: ParameterSurface,
    anchor,
    distances,
    config: ApproxConfig | None = None,
) -> ApproxReport:
    """Deviation of the squared process from its anchor-frozen approximation.

    At each probe ``s`` the process is simulated with its own parameters
    and its centred squared innovations ``zeta`` are extracted. Both the
    true squared path and the approximation (parameters of ``anchor``) are
    then produced by the same ARMA recursion on that ``zeta`` path, each
    started at its own long-run variance, so a zero distance gives exactly
    zero deviation. The slope is a least-squares fit through the origin of
    mean deviation on distance.
    """
    cfg = ApproxConfig() if config is None else config
    a = as_locations(anchor)[0]
    dist = np.asarray(distances, dtype=float)
    if dist.ndim != 1 or np.any(dist < 0):
        raise ValueError("distances must be a 1-d array of nonnegative values")
    probes = _probe_locations(a, dist, cfg.n_directions)
    order = surface.order
    q = order.q
    p0 = surface.evaluate(a)[0]
    anchor_delta = _padded_delta(p0, order)
    anchor_beta = np.ascontiguousarray(p0[1 + q :])
    anchor_c = p0[0] / (1.0 - p0[1:].sum())
    n_len = cfg.burn_in + cfg.T
    dev = np.zeros((cfg.replications, dist.size))
    params = surface.evaluate(probes.reshape(-1, 2)).reshape(dist.size, cfg.n_directions, -1)
    for rep in range(cfg.replications):
        eta = _rng(cfg.seed, rep).standard_normal((n_len, 1))
        for i in range(dist.size):
            acc = 0.0
            for j in range(cfg.n_directions):
                th = params[i, j]
                z, s2 = rec.simulate_panel(
                    th[:1].copy(), th[None, 1 : 1 + q].copy(), th[None, 1 + q :].copy(), eta
                )
                zeta = np.ascontiguousarray(z[:, 0] ** 2 - s2[:, 0])
                c = th[0] / (1.0 - th[1:].sum())
                y = rec.arma_square_path(th[0], _padded_delta(th, order), np.ascontiguousarray(th[1 + q :]), zeta, c)
                y_approx = rec.arma_square_path(p0[0], anchor_delta, anchor_beta, zeta, anchor_c)
                acc += np.mean(np.abs(y[cfg.burn_in :] - y_approx[cfg.burn_in :]))
            dev[rep, i] = acc / cfg.n_directions
    mean = dev.mean(axis=0)
    se = dev.std(axis=0, ddof=1) / math.sqrt(cfg.replications) if cfg.replications > 1 else np.zeros_like(mean)
    rho = float(stats.spearmanr(dist, mean).statistic) if dist.size > 1 else float("nan")
    den = float(np.dot(dist, dist))
    slope = float(np.dot(dist, mean) / den) if den > 0 else float("nan")
    return ApproxReport(dist, mean, se, dev, rho, slope)


def _padded_delta(theta: np.ndarray, order: GarchOrder) -> np.ndarray:
    q, p, r = order.q, order.p, order.r
    d = np.zeros(r)
    d[:q] += theta[1 : 1 + q]
    d[:p] += theta[1 + q :]
    return d
