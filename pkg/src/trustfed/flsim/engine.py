"""Round lifecycle: bootstrap newcomers, deploy, train, share context, aggregate, update trust."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .. import rng as rngmod
from ..analytics import FeatureRow, agglomerative_cluster, cluster_1d, cluster_members, one_hot, standardize
from ..bootstrap import collect_bootstrap_dataset, fit_sdr_tree, initial_trust_for, movement_bin
from ..datagen import SECONDS_PER_RECORD, ClientDataset, generate_population
from ..domain import DEVICE_TYPES, DeviceProfile, LearningUtility, Registry, ScenarioConfig, TrustRecord
from ..errors import NoFeasibleSolution
from ..optimizer import DeploymentContext, ga_optimize
from ..trust import RoundObservation, TrustBreakdown, update_trust_record
from .behaviors import ClientOutcome, MaliciousBehavior, apply_malicious_behavior
from .model import (LocalData, ModelParams, ModelShape, TrainHyper, accuracy, aggregate_fedavg, feature_dim,
                    fit_local, init_params, prepare_local_data)

log = logging.getLogger("trustfed.flsim")

CONTEXT_KEYS = ("area", "finish_time_bucket", "last_round_participated", "record_count_bucket")
RECORD_BUCKET = 100
FINISH_BUCKET = 30.0
# simulated hours between rounds; movement observations are hourly rates over this window
ROUND_HOURS = 24


def should_dismiss_round(received: int, selected: int, fraction: float) -> bool:
    return selected > 0 and received < fraction * selected


@dataclass
class ClientReport:
    client_id: str
    completed: bool
    cause: str = ""
    params: ModelParams | None = None
    local_accuracy: float | None = None
    sample_count: int = 0
    finish_time: float | None = None
    reported_context: dict = field(default_factory=dict)
    probe: int | None = None


@dataclass
class RoundTrace:
    round: int
    selected_ids: list[str]
    dismissed: bool
    dismiss_cause: str | None
    global_accuracy: float
    per_client: list[dict]
    received: int = 0
    requested_areas: list[int] = field(default_factory=list)
    probed_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "selected_ids": self.selected_ids,
            "dismissed": self.dismissed,
            "dismiss_cause": self.dismiss_cause,
            "global_accuracy": self.global_accuracy,
            "received": self.received,
            "requested_areas": self.requested_areas,
            "probed_ids": self.probed_ids,
            "per_client": self.per_client,
        }


@dataclass
class OrchestratorOutput:
    trust_updates: dict[str, TrustBreakdown]
    requested_areas: frozenset[int]
    probes: frozenset[str]
    clusters: dict[str, int]


@dataclass
class SimState:
    """Mutable simulator state owned by the single-threaded round loop."""

    config: ScenarioConfig
    devices: dict[str, DeviceProfile]
    utilities: dict[str, LearningUtility]
    datasets: dict[str, ClientDataset]
    local_data: dict[str, LocalData]
    move_rate: dict[str, float]
    malicious: dict[str, MaliciousBehavior]
    records: dict[str, TrustRecord] = field(default_factory=dict)
    active: list[str] = field(default_factory=list)
    registry: Registry = field(default_factory=Registry)
    global_params: ModelParams | None = None
    param_history: dict[int, ModelParams] = field(default_factory=dict)
    # per client: (round, accepted accuracy or None when flagged), oldest first
    accuracy_table: dict[str, list[tuple[int, float | None]]] = field(default_factory=dict)
    # behaviour-cluster neighbours of every client over the last few rounds, oldest first
    neighbor_history: list[dict[str, frozenset[str]]] = field(default_factory=list)
    last_round: dict[str, int] = field(default_factory=dict)
    accepted_accuracy: dict[str, float] = field(default_factory=dict)
    requested_areas: frozenset[int] = frozenset()
    probes: frozenset[str] = frozenset()
    trust_log: list[dict] = field(default_factory=list)
    last_seen: dict[str, int] = field(default_factory=dict)
    global_test: tuple[np.ndarray, np.ndarray] | None = None


# ---- orchestrator ----------------------------------------------------------

def requested_areas_for(trust: Mapping[str, float], area: Mapping[str, int], n_areas: int,
                        max_trust: float, min_per_area: int) -> frozenset[int]:
    """Areas holding fewer than ``min_per_area`` clients with trust >= ``max_trust``."""
    counts = np.zeros(n_areas, dtype=int)
    for cid, t in trust.items():
        if t >= max_trust:
            counts[area[cid]] += 1
    return frozenset(int(a) for a in np.flatnonzero(counts < min_per_area))


def probe_assignments(trust: Mapping[str, float], cutoff: float) -> frozenset[str]:
    return frozenset(cid for cid, t in trust.items() if t < cutoff)


def behavior_rows(devices: Sequence[DeviceProfile]) -> list[FeatureRow]:
    return [FeatureRow(d.id, one_hot(d.device_type, DEVICE_TYPES)
                       + (d.avg_movements, d.avg_finish_time, d.cpu, d.memory)) for d in devices]


def behavior_clusters(devices: Sequence[DeviceProfile]) -> dict[str, int]:
    if not devices:
        return {}
    rows = behavior_rows(devices)
    rows = standardize(rows) if len(rows) >= 2 else rows
    k = min(len(rows), math.ceil(math.sqrt(len(rows))))
    return agglomerative_cluster(rows, k)


def _reference_table(state: SimState, client: str, upto_round: int) -> tuple[float, ...] | None:
    """Latest accepted accuracy of every other client within the reference window ending at ``upto_round``.

    A client whose latest report in the window was flagged contributes nothing. None if fewer than 3 remain.
    """
    lo = upto_round - state.config.trust.reference_window
    ref = []
    for cid in sorted(state.accuracy_table):
        if cid == client:
            continue
        entries = [(r, a) for r, a in state.accuracy_table[cid] if lo < r <= upto_round]
        if entries and entries[-1][1] is not None:
            ref.append(entries[-1][1])
    return tuple(ref) if len(ref) >= 3 else None


def _recent_neighbors(state: SimState, cid: str) -> frozenset[str]:
    """Everyone who shared a behaviour cluster with ``cid`` in any remembered round.

    A client oscillating between two merge levels of the same group keeps its neighbours.
    """
    out: frozenset[str] = frozenset()
    for snap in state.neighbor_history:
        out |= snap.get(cid, frozenset())
    return out


def orchestrator_round(state: SimState, round_: int, reports: Mapping[str, ClientReport]) -> OrchestratorOutput:
    """Recluster behaviour, update trust of deployed clients, emit area requests and probes."""
    cfg, tp = state.config, state.config.trust
    active = [state.devices[c] for c in state.active]
    clusters = behavior_clusters(active)
    groups = cluster_members(clusters)
    current = {cid: groups[lab] - {cid} for cid, lab in clusters.items()}

    updates: dict[str, TrustBreakdown] = {}
    for cid in sorted(reports):
        rep = reports[cid]
        dev = state.devices[cid]
        observed = observed_context(state, cid, rep) if rep.completed else {}
        ref = None
        if rep.local_accuracy is not None:
            upto = rep.probe if rep.probe is not None else round_ - 1
            ref = _reference_table(state, cid, upto)
        obs = RoundObservation(
            client_id=cid, deployed=True, completed_ok=rep.completed,
            reported_accuracy=rep.local_accuracy, probe=rep.probe,
            reported_context=rep.reported_context if rep.completed else {},
            observed_context=observed,
            reference_accuracies=ref,
            previous_neighbors=_recent_neighbors(state, cid),
            current_neighbors=current.get(cid, frozenset()),
        )
        rec, b = update_trust_record(state.records[cid], obs, tp)
        state.records[cid] = rec
        updates[cid] = b
        if rep.local_accuracy is not None:
            hist = state.accuracy_table.setdefault(cid, [])
            hist.append((round_, None if b.flagged else rep.local_accuracy))
            del hist[:-8]
            if not b.flagged:
                state.accepted_accuracy[cid] = rep.local_accuracy
        if rep.completed:
            state.last_round[cid] = round_
        state.trust_log.append(trust_log_record(round_, dev, rec, b))
    state.neighbor_history.append(current)
    del state.neighbor_history[:-tp.neighbor_rounds]

    trust = {c: state.records[c].trust for c in state.active}
    areas = {c: state.devices[c].area for c in state.active}
    req = requested_areas_for(trust, areas, cfg.population.areas, cfg.thresholds.max_trust,
                              tp.min_trusted_per_area)
    probes = probe_assignments(trust, tp.probe_below)
    return OrchestratorOutput(updates, req, probes, clusters)


def trust_log_record(round_: int, dev: DeviceProfile, rec: TrustRecord, b: TrustBreakdown) -> dict:
    return {
        "round": round_, "client": dev.id, "trust": rec.trust,
        "tr1": b.tr1, "tr2": b.tr2_raw, "tr3": b.tr3_raw, "tr4": b.tr4_raw,
        "tr2_norm": b.tr2_norm, "tr3_norm": b.tr3_norm, "tr4_norm": b.tr4_norm,
        "aggregate": b.aggregate, "abnormal_average": b.abnormal_average, "group_size": b.group_size,
        "flagged": b.flagged,
        "area": dev.area, "device_type": dev.device_type, "cpu": dev.cpu, "memory": dev.memory,
        "avg_movements": dev.avg_movements,
    }


# ---- context sharing -------------------------------------------------------

def true_context(state: SimState, cid: str, finish_time: float, record_count: int) -> dict:
    return {
        "area": int(state.devices[cid].area),
        "finish_time_bucket": int(finish_time // FINISH_BUCKET),
        "last_round_participated": int(state.last_round.get(cid, -1)),
        "record_count_bucket": int(record_count // RECORD_BUCKET),
    }


def observed_context(state: SimState, cid: str, rep: ClientReport) -> dict:
    """What the orchestrator and the client's area neighbours recorded about ``cid``."""
    return true_context(state, cid, rep.finish_time or 0.0, len(state.datasets[cid]))


# ---- scenario --------------------------------------------------------------

def resolve_roster(cfg: ScenarioConfig, ids: Sequence[str]) -> dict[str, MaliciousBehavior]:
    roster: dict[str, MaliciousBehavior] = {}
    g = rngmod.stream(cfg.seed, "malice", "roster")
    free = list(ids)
    for entry in cfg.malicious:
        beh = MaliciousBehavior(entry.tag, entry.intensity, entry.onset)
        chosen = [c for c in entry.clients if c in ids]
        if entry.fraction > 0:
            pool = [c for c in free if c not in roster and c not in chosen]
            k = int(round(entry.fraction * len(ids)))
            chosen += [pool[i] for i in sorted(g.choice(len(pool), size=min(k, len(pool)), replace=False))]
        for c in chosen:
            roster[c] = beh
    return roster


def init_state(cfg: ScenarioConfig) -> SimState:
    spec = replace(cfg.population, seed=cfg.seed)
    devices, utils, datasets = generate_population(spec)
    ids = [d.id for d in devices]
    local = {d.id: prepare_local_data(ds, spec.areas, split_seed=cfg.seed * 1000 + i)
             for i, (d, ds) in enumerate(zip(devices, datasets))}
    shape = ModelShape(feature_dim(spec.areas), spec.locations, cfg.fl.hidden_units)
    state = SimState(
        config=cfg,
        devices={d.id: d for d in devices},
        utilities={d.id: u for d, u in zip(devices, utils)},
        datasets={d.id: ds for d, ds in zip(devices, datasets)},
        local_data=local,
        move_rate={d.id: d.avg_movements for d in devices},
        malicious=resolve_roster(cfg, ids),
        global_params=init_params(shape, cfg.seed),
    )
    Xs = np.vstack([local[c].X_test for c in ids])
    ys = np.concatenate([local[c].y_test for c in ids])
    state.global_test = (Xs, ys)
    state.param_history[0] = state.global_params
    return state


def _initial_trust(state: SimState, newcomers: list[str], round_: int) -> None:
    cfg = state.config
    tree = None
    if cfg.initial_trust == "bootstrap" and state.trust_log:
        tree = fit_sdr_tree(collect_bootstrap_dataset(state.trust_log), cfg.tree)
    g = rngmod.stream(cfg.seed, "init", round_)
    for cid in newcomers:
        state.registry.join(cid)
        d = state.devices[cid]
        if cfg.initial_trust == "bootstrap":
            t = initial_trust_for(tree, {"area": d.area, "device_type": d.device_type, "cpu": d.cpu,
                                         "memory": d.memory, "movement_bin": movement_bin(d.avg_movements)})
        elif cfg.initial_trust == "zero":
            t = 0.0
        elif cfg.initial_trust == "random":
            t = float(g.uniform())
        else:
            t = 0.5
        state.records[cid] = TrustRecord(cid, trust=float(t), window=cfg.trust.history_window)


def _move_devices(state: SimState, round_: int) -> None:
    """Per-round mobility: area transitions, remaining stay time, battery drift."""
    n_areas = state.config.population.areas
    for cid in state.active:
        g = rngmod.stream(state.config.seed, "dynamics", round_, int(cid[1:]))
        d = state.devices[cid]
        rate = state.move_rate[cid]
        moves = int(g.poisson(rate * ROUND_HOURS))
        area = d.area
        if moves and n_areas > 1:
            area = int((area + g.integers(1, n_areas)) % n_areas)
        battery = float(np.clip(d.battery + g.normal(0, 8), 5, 100))
        avail = float(g.exponential(3600.0 / (rate + 0.5)))
        state.devices[cid] = replace(d, area=area, battery=battery, availability=avail).observe(movements=moves / ROUND_HOURS)


def _accuracy_clusters(state: SimState, ids: Sequence[str]) -> list[int]:
    known = {c: state.accepted_accuracy[c] for c in ids if c in state.accepted_accuracy}
    labels = cluster_1d(known, state.config.trust.accuracy_clusters)
    return [labels.get(c, -1) for c in ids]


def _probation(state: SimState) -> frozenset[str]:
    """Clients below the probe cutoff: not deployed for training, only verified with stale weights."""
    cfg = state.config
    if cfg.selection != "ga" or not cfg.trust_enabled:
        return frozenset()
    return probe_assignments({c: state.records[c].trust for c in state.active}, cfg.trust.probe_below)


def _deployable(state: SimState, cid: str) -> bool:
    d, u = state.devices[cid], state.utilities[cid]
    fits = (u.cpu_cost <= d.cpu and u.memory_cost <= d.memory and u.diskspace_cost <= d.diskspace
            and u.battery_cost <= d.battery)
    return fits and d.availability >= state.config.thresholds.min_availability


def _probe_targets(state: SimState, probation: frozenset[str]) -> list[str]:
    """Up to ``probe_budget`` deployable clients on probation or still in warm-up.

    Probation clients come first, then warm-up clients; least recently seen first within each group.
    """
    cfg = state.config
    if cfg.selection != "ga" or not cfg.trust_enabled:
        return []
    unseen = {c for c in state.active if state.records[c].deployed_count < cfg.trust.warmup_rounds}
    cand = [c for c in sorted(probation | unseen) if _deployable(state, c)]
    cand.sort(key=lambda c: (c not in probation, state.last_seen.get(c, -1), c))
    return sorted(cand[: cfg.trust.probe_budget])


def _select(state: SimState, round_: int, exclude: frozenset[str] = frozenset()) -> tuple[list[str], str | None]:
    cfg = state.config
    ids = [c for c in state.active if c not in exclude]
    if not ids:
        return [], None
    if cfg.selection == "random":
        g = rngmod.stream(cfg.seed, "baseline", round_)
        k = min(cfg.random_select_count, len(ids))
        return sorted(ids[i] for i in g.choice(len(ids), size=k, replace=False)), None
    trust = [state.records[c].trust if cfg.trust_enabled else 0.5 for c in ids]
    ctx = DeploymentContext(
        devices=[state.devices[c] for c in ids],
        utilities=[state.utilities[c] for c in ids],
        trust=trust,
        accuracy_clusters=_accuracy_clusters(state, ids),
        requested_areas=state.requested_areas,
        weights=cfg.weights,
        thresholds=cfg.thresholds,
        n_areas=cfg.population.areas,
    )
    try:
        res = ga_optimize(ctx, cfg.ga, cfg.seed, stream_key=(round_,))
    except NoFeasibleSolution as exc:
        return [], exc.code
    return [ids[i] for i in res.chosen.indices], None


def _run_client(state: SimState, cid: str, round_: int, base: ModelParams, probe: int | None) -> ClientReport:
    cfg = state.config
    seed = cfg.seed
    g = rngmod.stream(seed, "malice", round_, int(cid[1:]))
    gd = rngmod.stream(seed, "dynamics", round_, int(cid[1:]), 1)
    dev, util = state.devices[cid], state.utilities[cid]
    if (util.cpu_cost > dev.cpu or util.memory_cost > dev.memory or util.diskspace_cost > dev.diskspace
            or util.battery_cost > dev.battery):
        return ClientReport(cid, False, "overloaded", probe=probe)
    if gd.random() < cfg.fl.straggler_prob:
        return ClientReport(cid, False, "straggler", probe=probe)
    beh = state.malicious.get(cid)
    outcome = ClientOutcome(state.local_data[cid], cfg.population.locations)
    if beh is not None:
        outcome = apply_malicious_behavior(beh, outcome, round_, g, stage="data")
    hyper = TrainHyper(cfg.fl.learning_rate, cfg.fl.local_epochs, cfg.fl.batch_size, cfg.fl.l2)
    params, acc, count = fit_local(outcome.data, base, hyper, rngmod.stream(seed, "train", round_, int(cid[1:])).integers(2**31))
    finish = count / 0.8 * SECONDS_PER_RECORD / dev.cpu * float(np.exp(gd.normal(0, 0.05)))
    outcome = replace(outcome, params=params, local_accuracy=acc, sample_count=count, finish_time=finish)
    records_seen = len(outcome.data.y_train) + len(outcome.data.y_test)
    outcome = replace(outcome, reported_context=true_context(state, cid, finish, records_seen))
    if beh is not None:
        outcome = apply_malicious_behavior(beh, outcome, round_, g, stage="result")
        if outcome.finish_time != finish:
            outcome = replace(outcome, reported_context={
                **outcome.reported_context, "finish_time_bucket": int(outcome.finish_time // FINISH_BUCKET)})
    if outcome.finish_time > dev.availability:
        return ClientReport(cid, False, "left-area", probe=probe)
    return ClientReport(cid, True, "", outcome.params, outcome.local_accuracy, outcome.sample_count,
                        outcome.finish_time, outcome.reported_context, probe)


def run_scenario(cfg: ScenarioConfig, workers: int = 1,
                 on_round: Callable[[RoundTrace], None] | None = None) -> tuple[list[RoundTrace], SimState]:
    """Simulate ``cfg.fl.rounds`` rounds; deterministic given the config (worker count irrelevant)."""
    state = init_state(cfg)
    traces: list[RoundTrace] = []
    lag = cfg.trust.probe_lag
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for r in range(1, cfg.fl.rounds + 1):
            newcomers = [c for c, d in state.devices.items() if d.joined_round <= r and c not in state.records]
            if newcomers:
                _initial_trust(state, sorted(newcomers), r)
                state.active = sorted(state.records)
            _move_devices(state, r)
            probation = _probation(state)
            selected, cause = _select(state, r, exclude=probation)
            probed = [c for c in _probe_targets(state, probation) if c not in selected]
            stale = max(r - lag, 0)

            def job(task):
                cid, is_probe = task
                if is_probe:
                    return _run_client(state, cid, r, state.param_history[stale], stale)
                return _run_client(state, cid, r, state.global_params, None)

            tasks = [(c, False) for c in selected] + [(c, True) for c in probed]
            reports_list = list(pool.map(job, tasks)) if pool else [job(t) for t in tasks]
            reports = {rep.client_id: rep for rep in reports_list}
            received = [rep for rep in reports_list[: len(selected)] if rep.completed]
            for c in [*selected, *probed]:
                state.last_seen[c] = r

            dismissed = False
            if cause is not None:
                dismissed = True
            elif not selected:
                dismissed, cause = True, "empty-selection"
            elif should_dismiss_round(len(received), len(selected), cfg.dismissal_fraction) or not received:
                dismissed, cause = True, "too-few-updates"
            else:
                state.global_params = aggregate_fedavg([(rep.params, rep.sample_count) for rep in received])
            state.param_history[r] = state.global_params
            if r - lag - 1 > 0:
                state.param_history.pop(r - lag - 1, None)

            for rep in reports_list:
                if rep.completed:
                    state.devices[rep.client_id] = state.devices[rep.client_id].observe(finish_time=rep.finish_time)

            out = orchestrator_round(state, r, reports)
            state.requested_areas, state.probes = out.requested_areas, out.probes
            gacc = accuracy(state.global_params, *state.global_test)
            per_client = []
            for cid in state.active:
                b = out.trust_updates.get(cid)
                rep = reports.get(cid)
                per_client.append({
                    "id": cid,
                    "trust": state.records[cid].trust,
                    "tr1": b.tr1 if b else None,
                    "tr2_norm": b.tr2_norm if b else None,
                    "tr3_norm": b.tr3_norm if b else None,
                    "tr4_norm": b.tr4_norm if b else None,
                    "local_accuracy": rep.local_accuracy if rep else None,
                    "flagged": bool(b.flagged) if b else False,
                    "probed": cid in probed,
                    "malicious": cid in state.malicious,
                })
            trace = RoundTrace(r, list(selected), dismissed, cause, gacc, per_client, len(received),
                               sorted(out.requested_areas), list(probed))
            traces.append(trace)
            if on_round:
                on_round(trace)
            log.info("round %d selected=%d received=%d dismissed=%s acc=%.4f",
                     r, len(selected), len(received), dismissed, gacc)
    finally:
        if pool:
            pool.shutdown()
    return traces, state
