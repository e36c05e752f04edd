"""Core value types shared by every subsystem.

All types are frozen dataclasses; simulation steps produce new versions with
``dataclasses.replace`` instead of mutating in place.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, TrustFedError

DEVICE_TYPES = ("phone", "tablet", "laptop")
MALICIOUS_TAGS = ("label_flip", "random_weights", "data_hiding", "context_falsify", "timing_manipulation")

POPULATION_HEADER = (
    "id", "type", "cpu", "memory", "diskspace", "battery",
    "availability", "area", "avg_movements", "avg_finish_time",
)
UTILITY_HEADER = ("id", "cpu_cost", "memory_cost", "battery_cost", "diskspace_cost")

# smoothing factor for avg_movements / avg_finish_time
SMOOTHING = 0.3


@dataclass(frozen=True)
class DeviceProfile:
    id: str
    device_type: str
    cpu: float
    memory: float
    diskspace: float
    battery: float
    availability: float
    area: int
    avg_movements: float
    avg_finish_time: float
    joined_round: int = 0

    def observe(self, movements: float | None = None, finish_time: float | None = None) -> "DeviceProfile":
        """Fold one round's observation into the smoothed behavioral averages."""
        upd = {}
        if movements is not None:
            upd["avg_movements"] = (1 - SMOOTHING) * self.avg_movements + SMOOTHING * movements
        if finish_time is not None:
            upd["avg_finish_time"] = (1 - SMOOTHING) * self.avg_finish_time + SMOOTHING * finish_time
        return replace(self, **upd) if upd else self


@dataclass(frozen=True)
class LearningUtility:
    cpu_cost: float
    memory_cost: float
    battery_cost: float
    diskspace_cost: float


@dataclass(frozen=True)
class TrustRecord:
    """Per-client trust state; ``trust`` is the running aggregated value."""

    client_id: str
    trust: float = 0.5
    success_count: int = 0
    deployed_count: int = 0
    accuracy_history: tuple[float, ...] = ()
    abnormal_count_window: int = 0
    abnormal_average: float = 0.0
    group_common_neighbors: int = 0
    contradiction_count: int = 0
    window: int = 20

    def __post_init__(self):
        if self.success_count > self.deployed_count:
            raise TrustFedError("success_count exceeds deployed_count", code="inconsistent-counters")
        if not 0.0 <= self.trust <= 1.0:
            raise TrustFedError(f"trust {self.trust} outside [0,1]", code="trust-range")

    def with_accuracy(self, acc: float) -> "TrustRecord":
        hist = (self.accuracy_history + (float(acc),))[-self.window:]
        return replace(self, accuracy_history=hist)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["accuracy_history"] = list(self.accuracy_history)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrustRecord":
        d = dict(d)
        d["accuracy_history"] = tuple(float(x) for x in d.get("accuracy_history", ()))
        return cls(**d)


@dataclass(frozen=True)
class SelectionVector:
    bits: tuple[int, ...]

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise TrustFedError("selection entries must be 0 or 1", code="invalid-selection")

    @classmethod
    def empty(cls, n: int) -> "SelectionVector":
        return cls((0,) * n)

    @classmethod
    def from_indices(cls, n: int, idx: Iterable[int]) -> "SelectionVector":
        bits = [0] * n
        for i in idx:
            bits[i] = 1
        return cls(tuple(bits))

    @classmethod
    def from_array(cls, arr) -> "SelectionVector":
        return cls(tuple(int(b) for b in np.asarray(arr).ravel()))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=np.int8)

    @property
    def indices(self) -> list[int]:
        return [i for i, b in enumerate(self.bits) if b]

    @property
    def count(self) -> int:
        return sum(self.bits)

    def __len__(self) -> int:
        return len(self.bits)

    def __str__(self) -> str:
        return "".join(map(str, self.bits))


@dataclass(frozen=True)
class ObjectiveWeights:
    w1: float = 0.2
    w2: float = 0.2
    w3: float = 0.2
    w4: float = 0.2
    w5: float = 0.2

    def __post_init__(self):
        ws = self.as_tuple()
        if any(not 0.0 <= w <= 1.0 for w in ws):
            raise ConfigError(f"objective weights must lie in [0,1], got {ws}")
        if abs(sum(ws) - 1.0) > 1e-9:
            raise ConfigError(f"objective weights must sum to 1, got {sum(ws)!r}")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.w1, self.w2, self.w3, self.w4, self.w5)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.as_tuple(), dtype=float)

    @classmethod
    def from_sequence(cls, ws: Sequence[float]) -> "ObjectiveWeights":
        if len(ws) != 5:
            raise ConfigError(f"expected 5 objective weights, got {len(ws)}")
        return cls(*map(float, ws))


@dataclass(frozen=True)
class PopulationSpec:
    n: int = 50
    areas: int = 6
    locations: int = 20
    records_min: int = 200
    records_max: int = 1500
    skew: float = 0.3
    mover_fraction: float = 0.3
    late_join_fraction: float = 0.0
    join_window: tuple[int, int] = (5, 15)
    seed: int = 0


@dataclass(frozen=True)
class Thresholds:
    min_availability: float = 300.0   # ST, seconds
    max_trust: float = 0.9            # MaxT
    max_trusted: int = 5              # Mt
    max_movement: float = 2.0         # MaxM, transitions/hour
    max_movers: int = 3               # Mm
    min_selected: int = 0


@dataclass(frozen=True)
class TrustParams:
    alphas: tuple[float, float, float, float] = (2.0, 1.0, 2.0, 1.0)
    epsilon: float = 3.5
    beta: float = 0.5
    warmup_rounds: int = 3
    history_window: int = 20
    reference_window: int = 10       # rounds of per-client accuracies kept as the outlier reference
    mad_floor: float = 0.05
    probe_lag: int = 3
    probe_below: float = 0.4
    probe_budget: int = 4             # verification deployments per round
    min_trusted_per_area: int = 2
    accuracy_clusters: int = 4
    neighbor_rounds: int = 3          # rounds of cluster membership remembered for Tr3


@dataclass(frozen=True)
class GAParams:
    population_size: int = 50
    generations: int = 100
    crossover_prob: float = 0.9
    patience: int = 20
    survivor: str = "truncation"


@dataclass(frozen=True)
class FLParams:
    rounds: int = 40
    learning_rate: float = 0.5
    local_epochs: int = 3
    batch_size: int = 32
    hidden_units: int = 0
    straggler_prob: float = 0.05
    l2: float = 1e-4


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 5
    min_samples: int = 4
    cv_stop: float = 0.10


@dataclass(frozen=True)
class MaliciousEntry:
    """Roster entry: explicit ``clients`` or a seeded ``fraction`` of the population."""

    tag: str
    intensity: float = 1.0
    onset: int = 0
    clients: tuple[str, ...] = ()
    fraction: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    name: str = "scenario"
    population: PopulationSpec = field(default_factory=PopulationSpec)
    thresholds: Thresholds = field(default_factory=Thresholds)
    trust: TrustParams = field(default_factory=TrustParams)
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    ga: GAParams = field(default_factory=GAParams)
    fl: FLParams = field(default_factory=FLParams)
    tree: TreeParams = field(default_factory=TreeParams)
    dismissal_fraction: float = 0.5
    malicious: tuple[MaliciousEntry, ...] = ()
    selection: str = "ga"            # "ga" | "random"
    random_select_count: int = 8
    initial_trust: str = "bootstrap"  # "bootstrap" | "zero" | "fixed" | "random"
    trust_enabled: bool = True

    def __post_init__(self):
        problems = config_problems(self)
        if problems:
            raise ConfigError("; ".join(problems))


def config_problems(cfg: ScenarioConfig) -> list[str]:
    """Range checks for every threshold; returns messages naming the offending field."""
    out = []
    th, tp, p = cfg.thresholds, cfg.trust, cfg.population

    def need(ok, name, msg):
        if not ok:
            out.append(f"{name}: {msg}")

    need(0.0 <= cfg.dismissal_fraction <= 1.0, "dismissal_fraction", "must be in [0,1]")
    need(th.min_availability >= 0, "thresholds.min_availability", "must be >= 0")
    need(0.0 <= th.max_trust <= 1.0, "thresholds.max_trust", "must be in [0,1]")
    need(th.max_trusted >= 0, "thresholds.max_trusted", "must be >= 0")
    need(th.max_movement >= 0, "thresholds.max_movement", "must be >= 0")
    need(th.max_movers >= 0, "thresholds.max_movers", "must be >= 0")
    need(th.min_selected >= 0, "thresholds.min_selected", "must be >= 0")
    need(len(tp.alphas) == 4 and all(a >= 0 for a in tp.alphas), "trust.alphas", "need four values >= 0")
    need(tp.epsilon > 0, "trust.epsilon", "must be > 0")
    need(0.0 < tp.beta <= 1.0, "trust.beta", "must be in (0,1]")
    need(tp.history_window >= 3, "trust.history_window", "must be >= 3")
    need(tp.reference_window >= 1, "trust.reference_window", "must be >= 1")
    need(tp.accuracy_clusters >= 1, "trust.accuracy_clusters", "must be >= 1")
    need(tp.probe_budget >= 0, "trust.probe_budget", "must be >= 0")
    need(tp.neighbor_rounds >= 1, "trust.neighbor_rounds", "must be >= 1")
    need(tp.probe_lag >= 0, "trust.probe_lag", "must be >= 0")
    need(p.n >= 1, "population.n", "must be >= 1")
    need(p.locations >= p.areas >= 1, "population.areas", "need locations >= areas >= 1")
    need(0 < p.records_min <= p.records_max, "population.records_min", "record range must be ordered and positive")
    need(p.skew > 0, "population.skew", "must be > 0")
    need(0.0 <= p.mover_fraction <= 1.0, "population.mover_fraction", "must be in [0,1]")
    need(0.0 <= p.late_join_fraction < 1.0, "population.late_join_fraction", "must be in [0,1)")
    need(cfg.ga.population_size >= 2, "ga.population_size", "must be >= 2")
    need(cfg.ga.generations >= 0, "ga.generations", "must be >= 0")
    need(0.0 <= cfg.ga.crossover_prob <= 1.0, "ga.crossover_prob", "must be in [0,1]")
    need(cfg.ga.survivor in ("truncation",), "ga.survivor", "only 'truncation' is supported")
    need(cfg.fl.rounds >= 0, "fl.rounds", "must be >= 0")
    need(cfg.fl.local_epochs >= 0, "fl.local_epochs", "must be >= 0")
    need(cfg.fl.batch_size >= 1, "fl.batch_size", "must be >= 1")
    need(0.0 <= cfg.fl.straggler_prob <= 1.0, "fl.straggler_prob", "must be in [0,1]")
    need(cfg.selection in ("ga", "random"), "selection", "must be 'ga' or 'random'")
    need(cfg.initial_trust in ("bootstrap", "zero", "fixed", "random"), "initial_trust",
         "must be one of bootstrap|zero|fixed|random")
    for i, m in enumerate(cfg.malicious):
        need(0.0 <= m.intensity <= 1.0, f"malicious[{i}].intensity", "must be in [0,1]")
        need(0.0 <= m.fraction <= 1.0, f"malicious[{i}].fraction", "must be in [0,1]")
        need(m.onset >= 0, f"malicious[{i}].onset", "must be >= 0")
        need(m.tag in MALICIOUS_TAGS, f"malicious[{i}].tag", f"unknown behaviour {m.tag!r}")
    return out


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[tuple[str, str], ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def kinds(self) -> set[str]:
        return {k for k, _ in self.violations}


def validate_profile(profile: DeviceProfile, utility: LearningUtility | None = None,
                     seen_ids: set[str] | None = None, areas: int | None = None) -> ValidationResult:
    """Range checks on one device; violations are returned, never raised."""
    v = []
    for name in ("cpu", "memory", "diskspace", "availability", "avg_movements", "avg_finish_time"):
        if getattr(profile, name) < 0:
            v.append(("negative-resource", name))
    if not 0.0 <= profile.battery <= 100.0:
        v.append(("battery-range", "battery"))
    if profile.area < 0 or (areas is not None and profile.area >= areas):
        v.append(("area-range", "area"))
    if profile.joined_round < 0:
        v.append(("negative-round", "joined_round"))
    if utility is not None:
        for f in fields(utility):
            if getattr(utility, f.name) < 0:
                v.append(("negative-resource", f.name))
    if seen_ids is not None and profile.id in seen_ids:
        v.append(("duplicate-id", "id"))
    return ValidationResult(tuple(v))


class Registry:
    """Population id bookkeeping; evicted ids are barred from rejoining."""

    def __init__(self):
        self.active: set[str] = set()
        self.evicted: set[str] = set()

    def join(self, device_id: str) -> None:
        if device_id in self.evicted:
            raise TrustFedError(f"{device_id} was evicted and may not rejoin", code="evicted-id")
        if device_id in self.active:
            raise TrustFedError(f"{device_id} already present", code="duplicate-id")
        self.active.add(device_id)

    def evict(self, device_id: str) -> None:
        self.active.discard(device_id)
        self.evicted.add(device_id)


# ---- CSV / JSON persistence -------------------------------------------------

def profile_to_row(p: DeviceProfile) -> list:
    return [p.id, p.device_type, repr(float(p.cpu)), repr(float(p.memory)), repr(float(p.diskspace)),
            repr(float(p.battery)), repr(float(p.availability)), p.area,
            repr(float(p.avg_movements)), repr(float(p.avg_finish_time))]


def write_population_csv(profiles: Sequence[DeviceProfile], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(POPULATION_HEADER)
    for p in profiles:
        w.writerow(profile_to_row(p))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def _parse_rows(text: str, header: Sequence[str], what: str) -> list[tuple[int, dict]]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        return []
    missing = [h for h in header if h not in reader.fieldnames]
    if missing:
        raise TrustFedError(f"{what} header missing columns {missing}", code="malformed-csv")
    return [(i + 2, row) for i, row in enumerate(reader)]


def read_population_csv(path) -> list[DeviceProfile]:
    return parse_population_csv(Path(path).read_text())


def parse_population_csv(text: str) -> list[DeviceProfile]:
    out = []
    for line, row in _parse_rows(text, POPULATION_HEADER, "population"):
        try:
            out.append(DeviceProfile(
                id=row["id"], device_type=row["type"], cpu=float(row["cpu"]),
                memory=float(row["memory"]), diskspace=float(row["diskspace"]),
                battery=float(row["battery"]), availability=float(row["availability"]),
                area=int(row["area"]), avg_movements=float(row["avg_movements"]),
                avg_finish_time=float(row["avg_finish_time"]),
                joined_round=int(row.get("joined_round") or 0),
            ))
        except (TypeError, ValueError) as exc:
            raise TrustFedError(f"line {line}: {exc}", code="malformed-csv") from exc
    return out


def write_utility_csv(ids: Sequence[str], utilities: Sequence[LearningUtility], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(UTILITY_HEADER)
    for i, u in zip(ids, utilities):
        w.writerow([i, repr(u.cpu_cost), repr(u.memory_cost), repr(u.battery_cost), repr(u.diskspace_cost)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_utility_csv(path) -> dict[str, LearningUtility]:
    return parse_utility_csv(Path(path).read_text())


def parse_utility_csv(text: str) -> dict[str, LearningUtility]:
    out = {}
    for line, row in _parse_rows(text, UTILITY_HEADER, "utility"):
        try:
            out[row["id"]] = LearningUtility(float(row["cpu_cost"]), float(row["memory_cost"]),
                                             float(row["battery_cost"]), float(row["diskspace_cost"]))
        except (TypeError, ValueError) as exc:
            raise TrustFedError(f"line {line}: {exc}", code="malformed-csv") from exc
    return out


def profile_to_json(p: DeviceProfile) -> str:
    return json.dumps(asdict(p), sort_keys=True)


def profile_from_json(s: str) -> DeviceProfile:
    return DeviceProfile(**json.loads(s))
