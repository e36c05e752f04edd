"""Robust outlier statistics and agglomerative clustering used by the trust engine and optimizer."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import InsufficientHistory, TooManyClusters, TrustFedError

MODIFIED_Z_CONSTANT = 0.6745
DEFAULT_EPSILON = 3.5


@dataclass(frozen=True)
class FeatureRow:
    entity_id: str
    values: tuple[float, ...]

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise TrustFedError(f"non-finite feature for {self.entity_id}", code="non-finite-feature")


def median_abs_deviation(history: Sequence[float]) -> tuple[float, float]:
    """Return ``(median, MAD)`` of ``history``."""
    x = np.asarray(history, dtype=float)
    med = float(np.median(x))
    return med, float(np.median(np.abs(x - med)))


def modified_z_score(history: Sequence[float], point: float,
                     epsilon: float = DEFAULT_EPSILON, mad_floor: float = 0.0) -> float:
    """Robust z-score of ``point`` against ``history``: 0.6745 * (x - median) / MAD.

    When MAD is zero the score is 0 for a point sitting on the median and
    ``±(epsilon + 1)`` otherwise, so any deviation from a constant history is an
    outlier. ``mad_floor`` lower-bounds the MAD (0 disables it).
    """
    if len(history) < 3:
        raise InsufficientHistory(f"need at least 3 points, got {len(history)}")
    med, mad = median_abs_deviation(history)
    dev = float(point) - med
    mad = max(mad, mad_floor)
    if mad == 0.0:
        if abs(dev) <= 1e-12:
            return 0.0
        return float(np.copysign(epsilon + 1.0, dev))
    return MODIFIED_Z_CONSTANT * dev / mad


def standardize(rows: Sequence[FeatureRow]) -> list[FeatureRow]:
    """Column-wise (x - mean) / population std; constant columns become zeros."""
    if not rows:
        return []
    x = np.asarray([r.values for r in rows], dtype=float)
    if x.ndim != 2:
        raise TrustFedError("rows must share one length", code="ragged-rows")
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    const = sd <= 1e-12 * np.maximum(1.0, np.abs(mu))
    z = np.where(const, 0.0, (x - mu) / np.where(const, 1.0, sd))
    return [FeatureRow(r.entity_id, tuple(map(float, zr))) for r, zr in zip(rows, z)]


def one_hot(value: str, categories: Sequence[str]) -> tuple[float, ...]:
    return tuple(1.0 if value == c else 0.0 for c in categories)


def agglomerative_cluster(rows: Sequence[FeatureRow], k: int) -> dict[str, int]:
    """Bottom-up average-linkage clustering on Euclidean distance into exactly ``k`` groups.

    Rows are ordered by entity id before merging; among equally close cluster
    pairs the one with the lowest (min-id ordinal) pair merges first, so the
    partition does not depend on input order. Labels are numbered by each
    cluster's smallest id.
    """
    if not rows:
        raise TrustFedError("no rows to cluster", code="empty-input")
    n = len(rows)
    if k < 1:
        raise TrustFedError("k must be >= 1", code="invalid-k")
    if k > n:
        raise TooManyClusters(f"k={k} exceeds {n} rows")
    order = sorted(range(n), key=lambda i: rows[i].entity_id)
    ids = [rows[i].entity_id for i in order]
    x = np.asarray([rows[i].values for i in order], dtype=float)
    diff = x[:, None, :] - x[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(d, np.inf)
    size = np.ones(n)
    members = [[i] for i in range(n)]
    alive = np.ones(n, dtype=bool)
    for _ in range(n - k):
        m = d.min()
        cand = np.argwhere(d <= m + 1e-12 * max(1.0, m))
        i, j = (int(v) for v in cand[0])  # row-major order => lowest pair, i < j
        # Lance-Williams update for average linkage
        merged = (size[i] * d[i] + size[j] * d[j]) / (size[i] + size[j])
        d[i, :] = merged
        d[:, i] = merged
        d[i, i] = np.inf
        d[j, :] = np.inf
        d[:, j] = np.inf
        d[~alive, i] = np.inf
        d[i, ~alive] = np.inf
        size[i] += size[j]
        members[i].extend(members[j])
        members[j] = []
        alive[j] = False
    labels: dict[str, int] = {}
    for label, c in enumerate(c for c in range(n) if alive[c]):
        for m_ in members[c]:
            labels[ids[m_]] = label
    return labels


def cluster_members(labels: Mapping[str, int]) -> dict[int, frozenset[str]]:
    groups: dict[int, set[str]] = {}
    for eid, lab in labels.items():
        groups.setdefault(lab, set()).add(eid)
    return {lab: frozenset(s) for lab, s in groups.items()}


def cluster_1d(values: Mapping[str, float], k: int) -> dict[str, int]:
    """Agglomerative clustering of scalar values (k clipped to the number of entities)."""
    if not values:
        return {}
    rows = [FeatureRow(eid, (float(v),)) for eid, v in values.items()]
    return agglomerative_cluster(rows, min(k, len(rows)))
