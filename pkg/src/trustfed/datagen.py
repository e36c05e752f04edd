"""Synthetic mobility population shaped like a location-prediction FL setup.

Twenty-odd locations are grouped contiguously into areas; every client owns
visit records (timestamp, location, area, weekday, duration, frequency) whose
labels concentrate on a few locations. Record volume is tied to mobility.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .domain import DEVICE_TYPES, DeviceProfile, LearningUtility, PopulationSpec
from .errors import InvalidSpec, TrustFedError

TRACE_HEADER = ("client_id", "timestamp", "location", "area", "day_of_week", "duration", "frequency")

# avg_movements = MOVEMENT_SCALE * latent activity; records grow with the same latent
MOVEMENT_SCALE = 3.0
# seconds of compute per record per CPU unit
SECONDS_PER_RECORD = 0.15
GB = 1024 ** 3

ARCHETYPES = {
    # cpu units, memory bytes, disk MB, battery %
    "phone": dict(cpu=(1.0, 2.0), memory=(2 * GB, 4 * GB), disk=(4_000, 32_000), battery=(15, 100)),
    "tablet": dict(cpu=(1.5, 3.0), memory=(3 * GB, 6 * GB), disk=(16_000, 64_000), battery=(20, 100)),
    "laptop": dict(cpu=(2.0, 6.0), memory=(8 * GB, 16 * GB), disk=(64_000, 256_000), battery=(30, 100)),
}


@dataclass(frozen=True)
class ClientDataset:
    """Visit records owned by one client; ``location`` is the prediction label."""

    owner: str
    timestamp: np.ndarray
    location: np.ndarray
    area: np.ndarray
    day_of_week: np.ndarray
    duration: np.ndarray
    frequency: np.ndarray

    def __len__(self) -> int:
        return len(self.location)

    @property
    def hour(self) -> np.ndarray:
        return (self.timestamp // 3600) % 24 + (self.timestamp % 3600) / 3600.0

    def subset(self, idx) -> "ClientDataset":
        idx = np.asarray(idx, dtype=int)
        return ClientDataset(self.owner, self.timestamp[idx], self.location[idx], self.area[idx],
                             self.day_of_week[idx], self.duration[idx], self.frequency[idx])

    def label_counts(self, n_labels: int) -> np.ndarray:
        return np.bincount(self.location, minlength=n_labels)


def location_area_map(locations: int, areas: int) -> np.ndarray:
    """Contiguous, nearly equal partition of locations into areas."""
    return np.concatenate([np.full(len(chunk), a, dtype=int)
                           for a, chunk in enumerate(np.array_split(np.arange(locations), areas))])


def _check(spec: PopulationSpec) -> None:
    problems = []
    if spec.n < 1:
        problems.append("n must be >= 1")
    if not spec.locations >= spec.areas >= 1:
        problems.append("need locations >= areas >= 1")
    if not 0 < spec.records_min <= spec.records_max:
        problems.append("record range must be positive and ordered")
    if not spec.skew > 0:
        problems.append("skew must be > 0")
    if not 0 <= spec.mover_fraction <= 1:
        problems.append("mover_fraction must be in [0,1]")
    if not 0 <= spec.late_join_fraction < 1:
        problems.append("late_join_fraction must be in [0,1)")
    if spec.join_window[0] > spec.join_window[1] or spec.join_window[0] < 0:
        problems.append("join_window must be an ordered non-negative pair")
    if problems:
        raise InvalidSpec("; ".join(problems))


@dataclass(frozen=True)
class LocationProfile:
    hour: np.ndarray        # mean visiting hour per location
    hour_sd: np.ndarray
    days: np.ndarray        # (L, 7) weekday preferences
    duration: np.ndarray    # mean visit duration, minutes
    frequency: np.ndarray   # mean visits per week


def location_profiles(spec: PopulationSpec) -> LocationProfile:
    g = rngmod.stream(spec.seed, "dataset", "locations")
    L = spec.locations
    return LocationProfile(
        hour=g.uniform(7, 22, size=L),
        hour_sd=g.uniform(2.0, 4.0, size=L),
        days=g.dirichlet(np.full(7, 3.0), size=L),
        duration=np.exp(g.uniform(np.log(10), np.log(120), size=L)),
        frequency=g.uniform(0.5, 6.0, size=L),
    )


def _records(g: np.random.Generator, owner: str, count: int, probs: np.ndarray,
             loc_area: np.ndarray, prof: LocationProfile) -> ClientDataset:
    loc = g.choice(len(probs), size=count, p=probs)
    dow = np.array([g.choice(7, p=prof.days[l]) for l in loc], dtype=int)
    week = g.integers(0, 8, size=count)
    hour = np.clip(prof.hour[loc] + g.normal(0, prof.hour_sd[loc]), 0, 23.99)
    ts = (week * 7 + dow) * 86400 + (hour * 3600).astype(np.int64)
    order = np.argsort(ts, kind="stable")
    dur = prof.duration[loc] * np.exp(g.normal(0, 0.6, size=count))
    freq = g.poisson(prof.frequency[loc]) + 1
    return ClientDataset(owner, ts[order].astype(np.int64), loc[order].astype(int), loc_area[loc[order]],
                         dow[order], dur[order], freq[order].astype(float))


def _label_probs(g: np.random.Generator, spec: PopulationSpec, home: int, loc_area: np.ndarray,
                 mover: bool) -> np.ndarray:
    prior = np.where(loc_area == home, 1.0, 0.15 if mover else 0.04)
    prior = prior / prior.sum() * spec.locations
    p = g.dirichlet(np.maximum(spec.skew * prior, 1e-3))
    p = np.maximum(p, 0.0)
    return p / p.sum()


def generate_population(spec: PopulationSpec) -> tuple[list[DeviceProfile], list[LearningUtility], list[ClientDataset]]:
    """Seeded devices, learning costs and visit datasets for ``spec.n`` clients."""
    _check(spec)
    loc_area = location_area_map(spec.locations, spec.areas)
    prof = location_profiles(spec)
    g_pop = rngmod.stream(spec.seed, "population")
    movers = np.zeros(spec.n, dtype=bool)
    movers[g_pop.permutation(spec.n)[: int(round(spec.mover_fraction * spec.n))]] = True
    late = np.zeros(spec.n, dtype=bool)
    late[g_pop.permutation(spec.n)[: int(round(spec.late_join_fraction * spec.n))]] = True

    devices, utils, datasets = [], [], []
    for i in range(spec.n):
        cid = f"c{i:03d}"
        g = rngmod.stream(spec.seed, "population", i)
        dtype = DEVICE_TYPES[int(g.choice(3, p=[0.5, 0.25, 0.25]))]
        arch = ARCHETYPES[dtype]
        latent = g.uniform(2 / 3, 1.0) if movers[i] else g.uniform(0.0, 2 / 3)
        frac = float(np.clip(latent + g.normal(0, 0.08), 0, 1))
        count = int(round(spec.records_min + frac * (spec.records_max - spec.records_min)))
        home = int(g.integers(spec.areas))
        cpu = float(g.uniform(*arch["cpu"]))
        moves = MOVEMENT_SCALE * latent
        joined = int(g.integers(spec.join_window[0], spec.join_window[1] + 1)) if late[i] else 0
        devices.append(DeviceProfile(
            id=cid, device_type=dtype, cpu=cpu,
            memory=float(g.uniform(*arch["memory"])),
            diskspace=float(g.uniform(*arch["disk"])),
            battery=float(g.uniform(*arch["battery"])),
            availability=float(g.exponential(3600.0 / (moves + 0.5))),
            area=home, avg_movements=moves,
            avg_finish_time=count * SECONDS_PER_RECORD / cpu,
            joined_round=joined,
        ))
        utils.append(LearningUtility(
            cpu_cost=float(g.uniform(0.5, 1.5)),
            memory_cost=float(g.uniform(0.5, 1.5)) * GB,
            battery_cost=float(g.uniform(5, 20)),
            diskspace_cost=float(g.uniform(200, 800)),
        ))
        gd = rngmod.stream(spec.seed, "dataset", i)
        probs = _label_probs(gd, spec, home, loc_area, bool(movers[i]))
        datasets.append(_records(gd, cid, count, probs, loc_area, prof))
    return devices, utils, datasets


def label_entropy(ds: ClientDataset, n_labels: int) -> float:
    c = ds.label_counts(n_labels).astype(float)
    p = c[c > 0] / c.sum()
    return float(-(p * np.log(p)).sum())


def write_trace_csv(datasets: Sequence[ClientDataset], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for ds in datasets:
        for k in range(len(ds)):
            w.writerow([ds.owner, int(ds.timestamp[k]), int(ds.location[k]), int(ds.area[k]),
                        int(ds.day_of_week[k]), repr(float(ds.duration[k])), repr(float(ds.frequency[k]))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def ingest_trace_csv(path, locations: int = 20, areas: int = 6) -> list[ClientDataset]:
    """Parse a visit-trace CSV into per-client datasets sorted by timestamp."""
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        return []
    if tuple(h.strip() for h in header) != TRACE_HEADER:
        raise TrustFedError(f"line 1: expected header {','.join(TRACE_HEADER)}", code="malformed-csv")
    rows: dict[str, list] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(TRACE_HEADER):
            raise TrustFedError(f"line {lineno}: expected {len(TRACE_HEADER)} fields, got {len(row)}",
                                code="malformed-csv")
        try:
            cid = row[0]
            ts, loc, area, dow = int(row[1]), int(row[2]), int(row[3]), int(row[4])
            dur, freq = float(row[5]), float(row[6])
        except ValueError as exc:
            raise TrustFedError(f"line {lineno}: {exc}", code="malformed-csv") from exc
        if not 0 <= loc < locations:
            raise TrustFedError(f"line {lineno}: location {loc} outside [0,{locations})", code="unknown-location")
        if not 0 <= area < areas:
            raise TrustFedError(f"line {lineno}: area {area} outside [0,{areas})", code="unknown-area")
        if not 0 <= dow < 7 or not math.isfinite(dur) or not math.isfinite(freq):
            raise TrustFedError(f"line {lineno}: invalid day/duration/frequency", code="malformed-csv")
        rows.setdefault(cid, []).append((ts, loc, area, dow, dur, freq))
    out = []
    for cid in sorted(rows):
        recs = sorted(rows[cid], key=lambda r: r[0])
        a = np.asarray(recs, dtype=float)
        out.append(ClientDataset(cid, a[:, 0].astype(np.int64), a[:, 1].astype(int), a[:, 2].astype(int),
                                 a[:, 3].astype(int), a[:, 4], a[:, 5]))
    return out
