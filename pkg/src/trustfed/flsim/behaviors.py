"""Injected client misbehaviour.

Behaviours act at one of two stages of a client's round: ``data`` (before
local training: label flipping, data hiding) or ``result`` (after training:
random weights, falsified context, manipulated timing). Intensity 0 is always
the identity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..domain import MALICIOUS_TAGS
from ..errors import UnknownBehavior
from .model import LocalData, ModelParams, accuracy

DATA_TAGS = frozenset({"label_flip", "data_hiding"})
RESULT_TAGS = frozenset({"random_weights", "context_falsify", "timing_manipulation"})
TAGS = DATA_TAGS | RESULT_TAGS
assert TAGS == set(MALICIOUS_TAGS)


@dataclass(frozen=True)
class MaliciousBehavior:
    tag: str
    intensity: float = 1.0
    onset: int = 0

    def __post_init__(self):
        if self.tag not in TAGS:
            raise UnknownBehavior(self.tag)
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"intensity {self.intensity} outside [0,1]")

    @property
    def stage(self) -> str:
        return "data" if self.tag in DATA_TAGS else "result"


@dataclass(frozen=True)
class ClientOutcome:
    """One client's round as seen before (``data``) or after (``result``) training."""

    data: LocalData
    n_labels: int
    params: ModelParams | None = None
    local_accuracy: float | None = None
    sample_count: int = 0
    finish_time: float = 0.0
    reported_context: dict = field(default_factory=dict)


def _flip_labels(data: LocalData, n_labels: int, intensity: float, g: np.random.Generator) -> LocalData:
    y = data.y_train.copy()
    k = int(math.floor(intensity * len(y) + 0.5))
    if k == 0:
        return data
    idx = g.choice(len(y), size=k, replace=False)
    y[idx] = (y[idx] + 1) % n_labels
    return data.replace_train(data.X_train, y)


def _hide_data(data: LocalData, intensity: float) -> LocalData:
    labels, counts = np.unique(data.y_train, return_counts=True)
    keep_n = math.ceil((1.0 - intensity) * len(labels) - 1e-12)
    if keep_n >= len(labels):
        return data
    order = np.lexsort((labels, -counts))  # most frequent first, ties by label
    keep = labels[order[:max(keep_n, 0)]]
    m_tr = np.isin(data.y_train, keep)
    m_te = np.isin(data.y_test, keep)
    return LocalData(data.X_train[m_tr], data.y_train[m_tr], data.X_test[m_te], data.y_test[m_te])


def _corrupt(value, g: np.random.Generator):
    if isinstance(value, bool):
        return not value
    if isinstance(value, (int, np.integer)):
        return int(value) + int(g.integers(1, 4))
    if isinstance(value, float):
        return value + float(g.uniform(1.0, 3.0))
    return f"{value}?"


def apply_malicious_behavior(behavior: MaliciousBehavior, outcome: ClientOutcome, round_: int,
                             g: np.random.Generator, stage: str | None = None) -> ClientOutcome:
    """Perturb an honest outcome. Rounds before ``onset`` and other stages pass through."""
    if behavior.tag not in TAGS:
        raise UnknownBehavior(behavior.tag)
    if round_ < behavior.onset or behavior.intensity == 0.0:
        return outcome
    if stage is not None and stage != behavior.stage:
        return outcome
    tag, x = behavior.tag, behavior.intensity
    if tag == "label_flip":
        return replace(outcome, data=_flip_labels(outcome.data, outcome.n_labels, x, g))
    if tag == "data_hiding":
        return replace(outcome, data=_hide_data(outcome.data, x))
    if tag == "random_weights":
        if outcome.params is None:
            return outcome
        noise = g.uniform(-1.0, 1.0, size=outcome.params.weights.shape)
        params = ModelParams((1 - x) * outcome.params.weights + x * noise, outcome.params.shape)
        return replace(outcome, params=params,
                       local_accuracy=accuracy(params, outcome.data.X_test, outcome.data.y_test))
    if tag == "context_falsify":
        ctx = dict(outcome.reported_context)
        keys = sorted(ctx)
        k = int(math.floor(x * len(keys) + 0.5))
        for key in (g.permutation(keys)[:k] if k else []):
            ctx[str(key)] = _corrupt(ctx[str(key)], g)
        return replace(outcome, reported_context=ctx)
    # timing_manipulation: finish far earlier or later than usual
    sign = 1.0 if g.random() < 0.5 else -1.0
    return replace(outcome, finish_time=outcome.finish_time * max(1.0 + sign * x, 0.05))
