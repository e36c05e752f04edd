"""Optimizer instance files and a random instance generator.

An instance is a JSON header next to two CSV files::

    {"devices": "devices.csv", "utilities": "utilities.csv",
     "trust": {"c000": 0.7, ...}, "accuracy_clusters": {"c000": 1, ...},
     "requested_areas": [2], "n_areas": 6,
     "weights": [0.2, 0.2, 0.2, 0.2, 0.2],
     "thresholds": {"min_availability": 300, "max_trust": 0.9, ...}}

Missing ``trust`` defaults to 0.5 and missing clusters to a single cluster.
"""
from __future__ import annotations

import json
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .. import rng as rngmod
from ..domain import (DEVICE_TYPES, DeviceProfile, LearningUtility, ObjectiveWeights, Thresholds,
                      read_population_csv, read_utility_csv, write_population_csv, write_utility_csv)
from ..errors import ConfigError
from .objectives import DeploymentContext


def load_instance(path) -> DeploymentContext:
    path = Path(path)
    try:
        head = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    for key in ("devices", "utilities"):
        if key not in head:
            raise ConfigError(f"{path}: missing '{key}'")
    devices = read_population_csv(path.parent / head["devices"])
    utils = read_utility_csv(path.parent / head["utilities"])
    missing = [d.id for d in devices if d.id not in utils]
    if missing:
        raise ConfigError(f"{path}: no utility row for {missing[:5]}")
    trust = head.get("trust", {})
    clusters = head.get("accuracy_clusters", {})
    th_fields = {f.name for f in fields(Thresholds)}
    bad = set(head.get("thresholds", {})) - th_fields
    if bad:
        raise ConfigError(f"{path}: unknown thresholds {sorted(bad)}")
    return DeploymentContext(
        devices=devices,
        utilities=[utils[d.id] for d in devices],
        trust=[float(trust.get(d.id, 0.5)) for d in devices],
        accuracy_clusters=[int(clusters.get(d.id, 0)) for d in devices],
        requested_areas=frozenset(head.get("requested_areas", [])),
        weights=ObjectiveWeights.from_sequence(head.get("weights", [0.2] * 5)),
        thresholds=Thresholds(**head.get("thresholds", {})),
        n_areas=head.get("n_areas"),
    )


def save_instance(ctx: DeploymentContext, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.stem
    write_population_csv(ctx.devices, path.parent / f"{stem}_devices.csv")
    write_utility_csv(ctx.ids, ctx.utilities, path.parent / f"{stem}_utilities.csv")
    head = {
        "devices": f"{stem}_devices.csv",
        "utilities": f"{stem}_utilities.csv",
        "trust": dict(zip(ctx.ids, map(float, ctx.trust))),
        "accuracy_clusters": dict(zip(ctx.ids, map(int, ctx.accuracy_clusters))),
        "requested_areas": sorted(ctx.requested_areas),
        "n_areas": ctx.n_areas,
        "weights": list(ctx.weights.as_tuple()),
        "thresholds": asdict(ctx.thresholds),
    }
    path.write_text(json.dumps(head, indent=2) + "\n")


def random_instance(n: int, seed: int, n_areas: int = 6, n_clusters: int = 4,
                    thresholds: Thresholds | None = None,
                    weights: ObjectiveWeights | None = None) -> DeploymentContext:
    """Random context with a mix of overloaded, short-stay, trusted and mobile devices."""
    g = rngmod.stream(seed, "population", n)
    th = thresholds or Thresholds(min_availability=300.0, max_trust=0.8,
                                  max_trusted=max(1, n // 4), max_movement=2.0,
                                  max_movers=max(1, n // 5))
    devices, utils = [], []
    for i in range(n):
        devices.append(DeviceProfile(
            id=f"d{i:03d}", device_type=DEVICE_TYPES[int(g.integers(3))],
            cpu=float(g.uniform(1, 8)), memory=float(g.uniform(1, 16)),
            diskspace=float(g.uniform(1, 64)), battery=float(g.uniform(5, 100)),
            availability=float(g.uniform(60, 3600)), area=int(g.integers(n_areas)),
            avg_movements=float(g.exponential(1.2)), avg_finish_time=float(g.uniform(30, 300)),
        ))
        utils.append(LearningUtility(float(g.uniform(0.5, 4)), float(g.uniform(0.5, 6)),
                                     float(g.uniform(2, 25)), float(g.uniform(1, 10))))
    trust = g.uniform(0, 1, size=n)
    clusters = g.integers(0, n_clusters, size=n)
    req = frozenset(int(a) for a in np.flatnonzero(g.random(n_areas) < 0.3))
    return DeploymentContext(devices, utils, trust.tolist(), clusters.tolist(), req,
                             weights or ObjectiveWeights(), th, n_areas)
