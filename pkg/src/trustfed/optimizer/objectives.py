"""Deployment objectives, all normalized to [0, 1] with higher meaning better."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..domain import DeviceProfile, LearningUtility, ObjectiveWeights, SelectionVector, Thresholds


@dataclass
class DeploymentContext:
    devices: Sequence[DeviceProfile]
    utilities: Sequence[LearningUtility]
    trust: Sequence[float]
    accuracy_clusters: Sequence[int]
    requested_areas: frozenset[int] = frozenset()
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    thresholds: Thresholds = field(default_factory=Thresholds)
    n_areas: int | None = None

    def __post_init__(self):
        n = len(self.devices)
        if not (len(self.utilities) == len(self.trust) == len(self.accuracy_clusters) == n):
            raise ValueError("devices, utilities, trust and clusters must be aligned")
        if self.n_areas is None:
            self.n_areas = max((d.area for d in self.devices), default=-1) + 1
        if any(a < 0 or a >= max(self.n_areas, 1) for a in self.requested_areas):
            raise ValueError("requested areas outside the configured area range")
        self.requested_areas = frozenset(int(a) for a in self.requested_areas)
        d, u = self.devices, self.utilities
        self.ids = [x.id for x in d]
        self.trust_arr = np.asarray(self.trust, dtype=float)
        self.area_arr = np.asarray([x.area for x in d], dtype=int)
        self.move_arr = np.asarray([x.avg_movements for x in d], dtype=float)
        self.avail_arr = np.asarray([x.availability for x in d], dtype=float)
        self.capacity = np.asarray([[x.cpu, x.memory, x.diskspace, x.battery] for x in d], dtype=float).reshape(n, 4)
        self.cost = np.asarray([[y.cpu_cost, y.memory_cost, y.diskspace_cost, y.battery_cost] for y in u],
                               dtype=float).reshape(n, 4)
        self.overloaded = np.any(self.cost > self.capacity, axis=1)
        self.low_avail = self.avail_arr < self.thresholds.min_availability
        self.deployable = ~(self.overloaded | self.low_avail)
        self.high_trust = self.trust_arr >= self.thresholds.max_trust
        self.high_move = self.move_arr >= self.thresholds.max_movement
        labels = np.asarray(self.accuracy_clusters)
        # negative labels mark clients without a clustered accuracy; they cover no cluster
        uniq = sorted(set(labels.tolist()) - {l for l in labels.tolist() if l < 0})
        self.cluster_onehot = (labels[:, None] == np.asarray(uniq)[None, :]).astype(float).reshape(n, len(uniq))
        self.area_onehot = (self.area_arr[:, None] == np.arange(self.n_areas)[None, :]).astype(float)
        self.in_requested = np.isin(self.area_arr, list(self.requested_areas)).astype(float)
        self.w = self.weights.as_array()

    @property
    def n(self) -> int:
        return len(self.devices)


def _bits(selection) -> np.ndarray:
    if isinstance(selection, SelectionVector):
        return selection.as_array().astype(float)
    return np.asarray(selection, dtype=float)


def compute_RR(selection, clusters: Sequence[int]) -> float:
    """Share of the population's accuracy clusters represented in the selection.

    Negative labels mean "not clustered" and count towards neither side.
    """
    s = _bits(selection).astype(bool)
    labels = np.asarray(clusters)
    total = len({l for l in labels.tolist() if l >= 0})
    if not s.any() or total == 0:
        return 0.0
    return len({l for l in labels[s].tolist() if l >= 0}) / total


def compute_R(selection, areas: Sequence[int], movements: Sequence[float], n_areas: int | None = None) -> float:
    """Half area coverage, half mean mobility relative to the population's most mobile device."""
    s = _bits(selection).astype(bool)
    if not s.any():
        return 0.0
    areas = np.asarray(areas)
    mov = np.asarray(movements, dtype=float)
    total = n_areas if n_areas is not None else len(set(areas.tolist()))
    cover = len(set(areas[s].tolist())) / total
    mmax = mov.max()
    mobility = float(mov[s].mean() / mmax) if mmax > 0 else 0.0
    return 0.5 * cover + 0.5 * mobility


def compute_RT(selection, areas: Sequence[int], requested) -> float:
    """Share of selected devices located in an orchestrator-requested area."""
    if not requested:
        return 1.0
    s = _bits(selection).astype(bool)
    if not s.any():
        return 0.0
    areas = np.asarray(areas)
    return float(np.isin(areas[s], list(requested)).sum() / s.sum())


def evaluate_batch(S: np.ndarray, ctx: DeploymentContext) -> np.ndarray:
    """Objective matrix (P x 5) for a population of selections ``S`` (P x n)."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    n = ctx.n
    cnt = S.sum(axis=1)
    nz = cnt > 0
    safe = np.where(nz, cnt, 1.0)
    f1 = 1.0 - cnt / n if n else np.ones(len(S))
    f2 = np.where(nz, S @ ctx.trust_arr / safe, 0.0)
    nclust = ctx.cluster_onehot.shape[1]
    f3 = ((S @ ctx.cluster_onehot) > 0).sum(axis=1) / nclust if nclust else np.zeros(len(S))
    cover = ((S @ ctx.area_onehot) > 0).sum(axis=1) / max(ctx.n_areas, 1)
    mmax = ctx.move_arr.max() if n else 0.0
    mobility = (S @ ctx.move_arr) / safe / mmax if mmax > 0 else np.zeros(len(S))
    f4 = np.where(nz, 0.5 * cover + 0.5 * mobility, 0.0)
    if ctx.requested_areas:
        f5 = np.where(nz, S @ ctx.in_requested / safe, 0.0)
    else:
        f5 = np.ones(len(S))
    return np.column_stack([f1, f2, f3, f4, f5])


def evaluate_objectives(selection, ctx: DeploymentContext) -> tuple[float, float, float, float, float]:
    s = _bits(selection)
    if len(s) != ctx.n:
        raise ValueError(f"selection length {len(s)} != device count {ctx.n}")
    return tuple(float(v) for v in evaluate_batch(s[None, :], ctx)[0])


def scalarize(f, w: ObjectiveWeights) -> float:
    return float(np.dot(np.asarray(f, dtype=float), w.as_array()))


def dominates(a, b) -> bool:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return bool(np.all(a >= b) and np.any(a > b))
