"""Initial trust generator: a regression tree grown with Standard Deviation Reduction.

Orchestrator trust logs (device attributes plus the trust each device earned)
train the tree; newcomers get the predicted trust instead of starting blind.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .domain import TreeParams
from .errors import EmptyTrainingSet

NEUTRAL_TRUST = 0.5
MOVEMENT_BIN_EDGES = (1.0, 2.0)

# (name, kind); kind is "cat" for multiway splits, "num" for midpoint thresholds
FEATURES: tuple[tuple[str, str], ...] = (
    ("area", "cat"),
    ("device_type", "cat"),
    ("cpu", "num"),
    ("memory", "num"),
    ("movement_bin", "cat"),
)
OPTIONAL_FEATURES = (("resource_utilization", "num"),)


def movement_bin(avg_movements: float, edges: Sequence[float] = MOVEMENT_BIN_EDGES) -> str:
    if avg_movements < edges[0]:
        return "low"
    if avg_movements < edges[1]:
        return "medium"
    return "high"


@dataclass(frozen=True)
class BootstrapExample:
    area: int
    device_type: str
    cpu: float
    memory: float
    movement_bin: str
    target: float = 0.0
    resource_utilization: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.target <= 1.0:
            raise ValueError(f"target {self.target} outside [0,1]")

    def value(self, name: str):
        return getattr(self, name)


@dataclass
class Leaf:
    mean: float
    count: int


@dataclass
class Split:
    feature: str
    kind: str
    mean: float
    count: int
    threshold: float | None = None
    # numeric: {"le": node, "gt": node}; categorical: {category: node}
    children: dict = field(default_factory=dict)


Node = Union[Leaf, Split]


@dataclass
class RegressionTree:
    root: Node
    features: tuple[tuple[str, str], ...]
    max_depth: int

    def depth(self) -> int:
        def _d(node):
            if isinstance(node, Leaf):
                return 0
            return 1 + max(_d(c) for c in node.children.values())
        return _d(self.root)

    def leaves(self) -> list[Leaf]:
        out = []

        def _walk(node):
            if isinstance(node, Leaf):
                out.append(node)
            else:
                for c in node.children.values():
                    _walk(c)
        _walk(self.root)
        return out

    def dump(self) -> str:
        """Indented text view, one node per line."""
        lines = []

        def _walk(node, indent, label):
            pad = "  " * indent
            if isinstance(node, Leaf):
                lines.append(f"{pad}{label}leaf mean={node.mean:.4f} n={node.count}")
                return
            if node.kind == "num":
                lines.append(f"{pad}{label}split {node.feature} <= {node.threshold:.6g} "
                             f"mean={node.mean:.4f} n={node.count}")
                _walk(node.children["le"], indent + 1, "[<=] ")
                _walk(node.children["gt"], indent + 1, "[>] ")
            else:
                lines.append(f"{pad}{label}split {node.feature} mean={node.mean:.4f} n={node.count}")
                for cat in sorted(node.children, key=str):
                    _walk(node.children[cat], indent + 1, f"[={cat}] ")
        _walk(self.root, 0, "")
        return "\n".join(lines)


def _std(y: np.ndarray) -> float:
    return float(y.std()) if len(y) else 0.0


def sdr_categorical(values: Sequence, y: np.ndarray) -> float:
    total = _std(y)
    n = len(y)
    vals = np.asarray(values, dtype=object)
    weighted = 0.0
    for v in sorted(set(values), key=str):
        sub = y[vals == v]
        weighted += len(sub) / n * _std(sub)
    return total - weighted


def best_numeric_split(values: Sequence[float], y: np.ndarray) -> tuple[float, float] | None:
    """Best (sdr, threshold) over midpoints of sorted unique values, lowest threshold on ties."""
    x = np.asarray(values, dtype=float)
    uniq = np.unique(x)
    if len(uniq) < 2:
        return None
    total, n = _std(y), len(y)
    best = None
    for t in (uniq[:-1] + uniq[1:]) / 2.0:
        left, right = y[x <= t], y[x > t]
        sdr = total - (len(left) / n * _std(left) + len(right) / n * _std(right))
        if best is None or sdr > best[0] + 1e-12:
            best = (sdr, float(t))
    return best


def _active_features(examples: Sequence[BootstrapExample]) -> tuple[tuple[str, str], ...]:
    feats = list(FEATURES)
    for name, kind in OPTIONAL_FEATURES:
        if all(e.value(name) is not None for e in examples):
            feats.append((name, kind))
    return tuple(feats)


def fit_sdr_tree(examples: Sequence[BootstrapExample], params: TreeParams = TreeParams()) -> RegressionTree:
    """Grow a regression tree choosing, at each node, the split of maximal SDR.

    Stops on max depth, fewer than ``min_samples`` examples, coefficient of
    variation below ``cv_stop``, or when no split reduces the deviation.
    Ties go to the lowest feature index, then the lowest threshold.
    """
    if not examples:
        raise EmptyTrainingSet("no bootstrap examples")
    feats = _active_features(examples)

    def grow(idx: list[int], depth: int) -> Node:
        y = np.asarray([examples[i].target for i in idx], dtype=float)
        mean, sd, n = float(y.mean()), _std(y), len(idx)
        cv = sd / mean if mean > 0 else (0.0 if sd == 0 else np.inf)
        if depth >= params.max_depth or n < params.min_samples or cv < params.cv_stop:
            return Leaf(mean, n)
        best = None  # (sdr, feature index, threshold)
        for fi, (name, kind) in enumerate(feats):
            vals = [examples[i].value(name) for i in idx]
            if kind == "cat":
                if len(set(vals)) < 2:
                    continue
                cand = (sdr_categorical(vals, y), fi, None)
            else:
                r = best_numeric_split(vals, y)
                if r is None:
                    continue
                cand = (r[0], fi, r[1])
            if best is None or cand[0] > best[0] + 1e-12:
                best = cand
        if best is None or best[0] <= 1e-12:
            return Leaf(mean, n)
        _, fi, thr = best
        name, kind = feats[fi]
        node = Split(feature=name, kind=kind, mean=mean, count=n, threshold=thr)
        if kind == "num":
            le = [i for i in idx if examples[i].value(name) <= thr]
            gt = [i for i in idx if examples[i].value(name) > thr]
            node.children = {"le": grow(le, depth + 1), "gt": grow(gt, depth + 1)}
        else:
            groups: dict = {}
            for i in idx:
                groups.setdefault(examples[i].value(name), []).append(i)
            node.children = {v: grow(g, depth + 1) for v, g in groups.items()}
        return node

    return RegressionTree(grow(list(range(len(examples))), 0), feats, params.max_depth)


def _node_count(node: Node) -> int:
    return node.count


def predict_initial_trust(tree: RegressionTree, features: BootstrapExample | Mapping) -> float:
    """Walk to a leaf; unseen categories follow the most populated child (tie: parent mean)."""
    get = features.get if isinstance(features, Mapping) else features.value
    node = tree.root
    while isinstance(node, Split):
        v = get(node.feature)
        if node.kind == "num":
            node = node.children["le"] if float(v) <= node.threshold else node.children["gt"]
            continue
        if v in node.children:
            node = node.children[v]
            continue
        counts = sorted((_node_count(c) for c in node.children.values()), reverse=True)
        if len(counts) > 1 and counts[0] == counts[1]:
            return min(1.0, max(0.0, node.mean))
        node = max(node.children.values(), key=_node_count)
    return min(1.0, max(0.0, node.mean))


def example_from_log(rec: Mapping) -> BootstrapExample:
    return BootstrapExample(
        area=int(rec["area"]),
        device_type=str(rec["device_type"]),
        cpu=float(rec["cpu"]),
        memory=float(rec["memory"]),
        movement_bin=movement_bin(float(rec["avg_movements"])),
        target=min(1.0, max(0.0, float(rec["trust"]))),
        resource_utilization=(float(rec["resource_utilization"])
                              if rec.get("resource_utilization") is not None else None),
    )


def collect_bootstrap_dataset(orchestrator_logs: Iterable[Mapping]) -> list[BootstrapExample]:
    """One example per client from its most recent logged round across all orchestrators."""
    latest: dict[str, Mapping] = {}
    for rec in orchestrator_logs:
        cid = str(rec["client"])
        if cid not in latest or int(rec["round"]) > int(latest[cid]["round"]):
            latest[cid] = rec
    return [example_from_log(latest[c]) for c in sorted(latest)]


def initial_trust_for(tree: RegressionTree | None, features: BootstrapExample | Mapping) -> float:
    """Predicted trust, or the neutral midpoint when no logs exist anywhere."""
    if tree is None:
        return NEUTRAL_TRUST
    return predict_initial_trust(tree, features)
