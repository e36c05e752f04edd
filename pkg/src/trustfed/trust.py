"""Per-round trust measurements and their aggregation into a client's trust value.

Four measurements feed the trust value:

* Tr1 - share of deployed tasks served successfully (lifetime counters),
* Tr2 - reported accuracies that are modified-z outliers,
* Tr3 - behaviour-cluster neighbours kept since the previous round,
* Tr4 - context values the client reported that contradict what the
  orchestrator observed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .analytics import FeatureRow, modified_z_score
from .domain import TrustParams, TrustRecord
from .errors import ContextSchemaMismatch, InconsistentCounters, InsufficientHistory, TrustFedError


@dataclass(frozen=True)
class RoundObservation:
    """Everything the orchestrator learned about one client in one round.

    ``reference_accuracies`` is the accuracy table the reported accuracy is
    tested against; ``None`` means no usable table yet (warm-up).
    """

    client_id: str
    deployed: bool
    completed_ok: bool = False
    reported_accuracy: float | None = None
    probe: int | None = None
    reported_context: Mapping[str, object] = field(default_factory=dict)
    observed_context: Mapping[str, object] = field(default_factory=dict)
    behavior_features: FeatureRow | None = None
    reference_accuracies: tuple[float, ...] | None = None
    previous_neighbors: frozenset[str] = frozenset()
    current_neighbors: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.reported_context and self.observed_context and \
                set(self.reported_context) != set(self.observed_context):
            raise ContextSchemaMismatch("reported and observed context keys differ")


@dataclass(frozen=True)
class TrustBreakdown:
    """Raw and normalized measurements from one update, kept for the trust log."""

    tr1: float
    tr2_raw: int
    tr3_raw: int
    tr4_raw: int
    tr2_norm: float
    tr3_norm: float
    tr4_norm: float
    aggregate: float
    abnormal_average: float
    group_size: int
    points_checked: int
    flagged: bool


def tr1_success_ratio(success: int, deployed: int) -> float:
    if success > deployed:
        raise InconsistentCounters(f"success {success} > deployed {deployed}")
    if deployed < 1:
        return 0.0
    return success / deployed


def tr2_two_step(history: Sequence[float], new_points: Sequence[float],
                 epsilon: float = 3.5, mad_floor: float = 0.0) -> tuple[int, float]:
    """Count new accuracy reports whose |modified z| >= epsilon against ``history``.

    Returns ``(count, mean of flagged points)``; the mean is 0 when nothing is flagged.
    """
    if epsilon <= 0:
        raise TrustFedError("epsilon must be positive", code="invalid-epsilon")
    flagged = [x for x in new_points
               if abs(modified_z_score(history, x, epsilon, mad_floor)) >= epsilon]
    return len(flagged), (sum(flagged) / len(flagged) if flagged else 0.0)


def tr3_group_deviation(previous_neighbors, current_cluster_members) -> tuple[int, int]:
    prev, cur = set(previous_neighbors), set(current_cluster_members)
    return len(prev & cur), len(cur)


def _differs(a, b) -> bool:
    if isinstance(a, (int, float)) and isinstance(b, (int, float)) \
            and not isinstance(a, bool) and not isinstance(b, bool):
        return abs(float(a) - float(b)) > 1e-9
    return a != b


def tr4_contradictions(reported: Mapping[str, object], observed: Mapping[str, object]) -> int:
    if set(reported) != set(observed):
        raise ContextSchemaMismatch(f"keys {sorted(reported)} vs {sorted(observed)}")
    return sum(_differs(reported[k], observed[k]) for k in reported)


def aggregate_trust(tr1: float, tr2_norm: float, tr3_norm: float, tr4_norm: float,
                    alphas: Sequence[float] = (2.0, 1.0, 2.0, 1.0)) -> float:
    a1, a2, a3, a4 = alphas
    raw = (tr1 * a1 - tr2_norm * a2 + tr3_norm * a3 - tr4_norm * a4) / 4.0
    return min(1.0, max(0.0, raw))


def measure(record: TrustRecord, obs: RoundObservation, params: TrustParams) -> TrustBreakdown:
    """Compute the four measurements for a deployed client without touching the record."""
    warm = record.deployed_count >= params.warmup_rounds

    points = [obs.reported_accuracy] if obs.reported_accuracy is not None else []
    tr2_raw, abn_avg, checked = 0, 0.0, 0
    if points and obs.reference_accuracies is not None:
        try:
            tr2_raw, abn_avg = tr2_two_step(obs.reference_accuracies, points,
                                            params.epsilon, params.mad_floor)
            checked = len(points)
        except InsufficientHistory:
            pass
    tr2_norm = tr2_raw / checked if checked else 0.0

    common, size = tr3_group_deviation(obs.previous_neighbors, obs.current_neighbors)
    if not warm or not obs.previous_neighbors or size == 0:
        tr3_norm = 1.0
    else:
        tr3_norm = common / size

    tr4_raw = 0
    if obs.reported_context and obs.observed_context:
        tr4_raw = tr4_contradictions(obs.reported_context, obs.observed_context)
    tr4_norm = tr4_raw / len(obs.observed_context) if obs.observed_context else 0.0

    success = record.success_count + int(is_successful(obs, tr2_raw, tr4_raw))
    tr1 = tr1_success_ratio(success, record.deployed_count + 1)
    agg = aggregate_trust(tr1, tr2_norm, tr3_norm, tr4_norm, params.alphas)
    return TrustBreakdown(tr1, tr2_raw, common, tr4_raw, tr2_norm, tr3_norm, tr4_norm, agg,
                          abn_avg, size, checked, tr2_raw > 0)


def is_successful(obs: RoundObservation, tr2_raw: int, tr4_raw: int) -> bool:
    """A deployed task counts as served only if it finished with clean accuracy and logs."""
    return obs.completed_ok and tr2_raw == 0 and tr4_raw == 0


def update_trust_record(record: TrustRecord, obs: RoundObservation,
                        params: TrustParams = TrustParams()) -> tuple[TrustRecord, TrustBreakdown | None]:
    """Advance ``record`` by one round. Non-deployed rounds leave it untouched."""
    if obs.client_id != record.client_id:
        raise TrustFedError(f"observation for {obs.client_id} applied to {record.client_id}",
                            code="client-mismatch")
    if not obs.deployed:
        return record, None
    b = measure(record, obs, params)
    trust = (1.0 - params.beta) * record.trust + params.beta * b.aggregate
    new = replace(
        record,
        trust=min(1.0, max(0.0, trust)),
        deployed_count=record.deployed_count + 1,
        success_count=record.success_count + int(is_successful(obs, b.tr2_raw, b.tr4_raw)),
        abnormal_count_window=b.tr2_raw,
        abnormal_average=b.abnormal_average,
        group_common_neighbors=b.tr3_raw,
        contradiction_count=b.tr4_raw,
        window=params.history_window,
    )
    if obs.reported_accuracy is not None:
        new = new.with_accuracy(obs.reported_accuracy)
    return new, b


def ema_closed_form(start: float, target: float, beta: float, steps: int) -> float:
    """Trust after ``steps`` EMA updates toward a constant aggregate."""
    return target + (start - target) * math.pow(1.0 - beta, steps)
