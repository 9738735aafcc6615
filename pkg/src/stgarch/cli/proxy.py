"""Feature tables and two-dimensional proxy spaces built from feature pairs."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from stgarch.cli.io import IngestError

__all__ = [
    "FeatureTable",
    "ProxySpace",
    "build_proxy_space",
    "candidate_pairs",
    "preprocess_features",
    "read_feature_table",
]


@dataclass(eq=False)
class FeatureTable:
    """Entity x feature matrix; missing entries are NaN."""

    entities: list[str]
    features: np.ndarray
    names: list[str]
    dropped: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        n, f = self.features.shape
        if len(self.entities) != n or len(self.names) != f:
            raise ValueError(f"feature matrix shape {self.features.shape} does not match labels")
        if len(set(self.names)) != f:
            raise ValueError("feature names must be unique")

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.features)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.features[:, self.names.index(name)]
        except ValueError:
            raise KeyError(f"unknown feature {name!r}") from None


def read_feature_table(path) -> FeatureTable:
    """Features CSV: ``entity``, then one column per feature; empty cells are missing."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) < 2:
        raise IngestError("need an entity column and at least one feature", path, 1)
    names = [h.strip() for h in rows[0][1:]]
    entities, data = [], []
    for i, r in enumerate(rows[1:], start=2):
        if not r or all(x.strip() == "" for x in r):
            continue
        if len(r) != len(names) + 1:
            raise IngestError(f"expected {len(names) + 1} cells, found {len(r)}", path, i)
        vals = []
        for c, x in enumerate(r[1:], start=2):
            s = x.strip()
            if s == "":
                vals.append(np.nan)
                continue
            try:
                vals.append(float(s))
            except ValueError:
                raise IngestError(f"non-numeric cell {x!r}", path, i, c) from None
        entities.append(r[0].strip())
        data.append(vals)
    return FeatureTable(entities, np.array(data, dtype=float).reshape(len(entities), len(names)), names)


def preprocess_features(table: FeatureTable, max_missing: float = 0.05) -> FeatureTable:
    """Drop sparse features, impute and standardize.

    A feature is dropped when more than ``max_missing`` of its entries are
    missing. Missing entries of the rest are set to the observed mean and
    each column is standardized to mean 0, variance 1 over all entities, so
    imputed entries end up exactly at 0. Constant columns become all zeros
    (build_proxy_space rejects them later). Applying this twice changes
    nothing beyond rounding.
    """
    frac = table.missing.mean(axis=0)
    keep = frac <= max_missing + 1e-12
    X = table.features[:, keep].copy()
    names = [n for n, k in zip(table.names, keep) if k]
    dropped = table.dropped + [n for n, k in zip(table.names, keep) if not k]
    if X.shape[1]:
        mu = np.nanmean(X, axis=0)
        X = np.where(np.isnan(X), mu, X)
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        # constant up to rounding: exact zeros, so a second pass is a no-op
        flat = sd <= 1e-12 * np.max(np.abs(X), axis=0)
        X = np.where(flat, 0.0, (X - mu) / np.where(flat, 1.0, sd))
    return FeatureTable(list(table.entities), X, names, dropped)


def candidate_pairs(names) -> list[tuple[str, str]]:
    return list(combinations(list(names), 2))


@dataclass(frozen=True, eq=False)
class ProxySpace:
    """Entity coordinates in a feature-pair space, rescaled to the unit square.

    ``raw = offset + scale * unit`` per axis maps back to standardized
    feature units.
    """

    pair: tuple[str, str]
    entities: list[str]
    locations: np.ndarray
    offset: np.ndarray
    scale: np.ndarray

    def to_feature_units(self, distance: float, axis: int = 0) -> float:
        return float(distance * self.scale[axis])


def build_proxy_space(table: FeatureTable, feature_pair, entities=None) -> ProxySpace:
    """Map entities to ``(feature_1, feature_2)``, each axis rescaled to [0, 1].

    ``entities`` optionally selects and orders the rows (e.g. to match a
    returns panel).

    Raises
    ------
    ValueError
        If a feature is constant or the two features are perfectly
        correlated (the space collapses to a line).
    """
    f1, f2 = feature_pair
    if f1 == f2:
        raise ValueError(f"pair uses the same feature twice: {f1!r}")
    a, b = table.column(f1), table.column(f2)
    if entities is not None:
        index = {e: i for i, e in enumerate(table.entities)}
        missing = [e for e in entities if e not in index]
        if missing:
            raise ValueError(f"entities without features: {missing[:5]}")
        rows = [index[e] for e in entities]
        a, b = a[rows], b[rows]
        ents = list(entities)
    else:
        ents = list(table.entities)
    if np.any(np.isnan(a)) or np.any(np.isnan(b)):
        raise ValueError("features must be preprocessed (no missing values)")
    for name, v in ((f1, a), (f2, b)):
        if np.ptp(v) == 0:
            raise ValueError(f"feature {name!r} has zero variance")
    r = np.corrcoef(a, b)[0, 1]
    if not np.isfinite(r) or abs(r) > 1 - 1e-12:
        raise ValueError(f"features {f1!r} and {f2!r} are perfectly correlated; the space is degenerate")
    raw = np.column_stack([a, b])
    lo = raw.min(axis=0)
    span = raw.max(axis=0) - lo
    return ProxySpace((f1, f2), ents, (raw - lo) / span, lo, span)
