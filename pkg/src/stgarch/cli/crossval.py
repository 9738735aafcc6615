"""Leave-entities-out cross-validation and proxy-space search."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from stgarch.cli.proxy import FeatureTable, build_proxy_space, candidate_pairs
from stgarch.core import Panel
from stgarch.estimators import STGARCHKriger

__all__ = [
    "CVConfig",
    "CVReport",
    "SearchReport",
    "fold_assignment",
    "proxy_space_search",
    "run_cross_validation",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CVConfig:
    """Cross-validation settings.

    ``score="volatility"`` compares ``sqrt`` of the predicted squared process
    with ``|Z|``; ``score="squared"`` compares the prediction with ``Z^2``.
    ``estimator`` holds keyword arguments for :class:`STGARCHKriger`.
    """

    k: int = 5
    seed: int = 0
    score: str = "volatility"
    estimator: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.score not in ("volatility", "squared"):
            raise ValueError(f"score must be 'volatility' or 'squared', got {self.score!r}")


def fold_assignment(labels, k: int, seed: int) -> np.ndarray:
    """Fold index per label, a function of ``(seed, sorted labels)`` only."""
    labels = [str(x) for x in labels]
    if len(set(labels)) != len(labels):
        raise ValueError("labels must be unique")
    canon = sorted(labels)
    perm = np.random.default_rng(seed).permutation(len(canon))
    fold_of = {canon[p]: i % k for i, p in enumerate(perm)}
    return np.array([fold_of[x] for x in labels], dtype=int)


@dataclass
class CVReport:
    folds: dict
    fold_rmse: list
    fold_baseline_rmse: list
    pooled_rmse: float
    baseline_rmse: float
    n_obs: int
    predictions: dict
    failures: dict
    partial: bool

    @property
    def mean_fold_rmse(self) -> float:
        v = [x for x in self.fold_rmse if math.isfinite(x)]
        return float(np.mean(v)) if v else float("nan")


def _targets_of(score: str, values: np.ndarray) -> np.ndarray:
    return np.abs(values) if score == "volatility" else values**2


def run_cross_validation(panel: Panel, k: int = 5, config: CVConfig | None = None, folds=None) -> CVReport:
    """k-fold cross-validation over entities.

    Each fold fits the two-stage model on the training entities and predicts
    the held-out entities' series at their locations. Errors are scored on
    the residual time grid of the training fit; the baseline predicts the
    mean training ``|Z|`` (or ``Z^2``).
    """
    cfg = CVConfig(k=k) if config is None else config
    if k != cfg.k:
        cfg = CVConfig(k=k, seed=cfg.seed, score=cfg.score, estimator=cfg.estimator)
    if panel.m < k:
        raise ValueError(f"need at least k={k} entities, got {panel.m}")
    fold = fold_assignment(panel.labels, k, cfg.seed) if folds is None else np.asarray(folds, dtype=int)
    fold_rmse, base_rmse = [], []
    sq = sq_base = 0.0
    n_obs = 0
    predictions, failures = {}, {}
    for f in range(k):
        test = np.flatnonzero(fold == f)
        train = np.flatnonzero(fold != f)
        try:
            est = STGARCHKriger(**cfg.estimator).fit(panel.values[:, train], panel.locations[train])
            preds = est.predict_targets(panel.locations[test])
        except (ValueError, np.linalg.LinAlgError) as exc:
            failures[f] = str(exc)
            fold_rmse.append(float("nan"))
            base_rmse.append(float("nan"))
            continue
        off = est.time_offset_
        truth = _targets_of(cfg.score, panel.values[off:, test])
        base = float(_targets_of(cfg.score, panel.values[:, train]).mean())
        bad = [j for j, tp in enumerate(preds) if not tp.ok]
        if bad:
            names = [panel.labels[test[j]] for j in bad]
            failures[f] = f"prediction failed for {names}: {preds[bad[0]].error}"
            fold_rmse.append(float("nan"))
            base_rmse.append(float("nan"))
            continue
        if cfg.score == "volatility":
            pred = np.column_stack([tp.prediction.volatility for tp in preds])
        else:
            pred = np.column_stack([tp.prediction.squared for tp in preds])
        e = float(np.sum((pred - truth) ** 2))
        eb = float(np.sum((base - truth) ** 2))
        fold_rmse.append(math.sqrt(e / truth.size))
        base_rmse.append(math.sqrt(eb / truth.size))
        sq += e
        sq_base += eb
        n_obs += truth.size
        for j, u in enumerate(test):
            predictions[panel.labels[u]] = pred[:, j]
    pooled = math.sqrt(sq / n_obs) if n_obs else float("nan")
    pooled_base = math.sqrt(sq_base / n_obs) if n_obs else float("nan")
    return CVReport(
        folds=dict(zip(panel.labels, fold.tolist())),
        fold_rmse=fold_rmse,
        fold_baseline_rmse=base_rmse,
        pooled_rmse=pooled,
        baseline_rmse=pooled_base,
        n_obs=n_obs,
        predictions=predictions,
        failures=failures,
        partial=bool(failures),
    )


@dataclass
class SearchReport:
    ranking: list
    failures: dict
    folds: dict
    reports: dict = field(default_factory=dict, repr=False)


def proxy_space_search(
    table: FeatureTable,
    returns: Panel,
    config: CVConfig | None = None,
    pairs=None,
    n_jobs: int = 1,
) -> SearchReport:
    """Cross-validate every feature pair as a proxy space and rank them.

    Fold assignments are shared by all pairs. The ranking is ascending in
    pooled RMSE with ties broken by the feature names; pairs whose space
    cannot be built or whose cross-validation is partial are listed in
    ``failures`` instead.
    """
    cfg = CVConfig() if config is None else config
    pairs = candidate_pairs(table.names) if pairs is None else [tuple(p) for p in pairs]
    folds = fold_assignment(returns.labels, cfg.k, cfg.seed)

    def one(pair):
        try:
            space = build_proxy_space(table, pair, entities=returns.labels)
            rep = run_cross_validation(returns.with_locations(space.locations), cfg.k, cfg, folds=folds)
        except (ValueError, np.linalg.LinAlgError) as exc:
            return pair, None, str(exc)
        if rep.partial:
            return pair, rep, "; ".join(f"fold {f}: {m}" for f, m in sorted(rep.failures.items()))
        return pair, rep, ""

    if n_jobs > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(one, pairs))
    else:
        results = [one(p) for p in pairs]
    ranking, failures, reports = [], {}, {}
    for pair, rep, err in results:
        if err:
            failures[pair] = err
            continue
        reports[pair] = rep
        ranking.append((pair, rep.pooled_rmse))
    ranking.sort(key=lambda item: (item[1], item[0][0], item[0][1]))
    return SearchReport(ranking, failures, dict(zip(returns.labels, folds.tolist())), reports)
