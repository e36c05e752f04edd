"""Constraint checks and the reparation pass that moves deployments to capable devices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..domain import SelectionVector
from .objectives import DeploymentContext, _bits

RESOURCES = ("cpu", "memory", "diskspace", "battery")


@dataclass(frozen=True)
class Violation:
    kind: str           # resource | availability | trust-cap | movement-cap | min-selected
    device_id: str | None = None
    detail: str = ""


@dataclass(frozen=True)
class RepairResult:
    selection: SelectionVector
    feasible: bool
    violations: tuple[Violation, ...] = ()


def check_constraints(selection, ctx: DeploymentContext) -> list[Violation]:
    s = _bits(selection).astype(bool)
    th = ctx.thresholds
    out = []
    for i in np.flatnonzero(s):
        over = ctx.cost[i] > ctx.capacity[i]
        for r in np.flatnonzero(over):
            out.append(Violation("resource", ctx.ids[i], RESOURCES[r]))
        if ctx.low_avail[i]:
            out.append(Violation("availability", ctx.ids[i],
                                 f"{ctx.avail_arr[i]:g} < {th.min_availability:g}"))
    ht = int((s & ctx.high_trust).sum())
    if ht > th.max_trusted:
        out.append(Violation("trust-cap", None, f"{ht} > {th.max_trusted}"))
    hm = int((s & ctx.high_move).sum())
    if hm > th.max_movers:
        out.append(Violation("movement-cap", None, f"{hm} > {th.max_movers}"))
    if s.sum() < th.min_selected:
        out.append(Violation("min-selected", None, f"{int(s.sum())} < {th.min_selected}"))
    return out


def violation_count(selection, ctx: DeploymentContext) -> int:
    return len(check_constraints(selection, ctx))


def is_feasible_array(s: np.ndarray, ctx: DeploymentContext) -> bool:
    s = s.astype(bool)
    th = ctx.thresholds
    return bool(not (s & ~ctx.deployable).any()
                and (s & ctx.high_trust).sum() <= th.max_trusted
                and (s & ctx.high_move).sum() <= th.max_movers
                and s.sum() >= th.min_selected)


def feasible_mask(S: np.ndarray, ctx: DeploymentContext) -> np.ndarray:
    """Vectorized feasibility for a (P x n) selection matrix."""
    S = np.atleast_2d(S).astype(bool)
    th = ctx.thresholds
    return (~(S & ~ctx.deployable).any(axis=1)
            & ((S & ctx.high_trust).sum(axis=1) <= th.max_trusted)
            & ((S & ctx.high_move).sum(axis=1) <= th.max_movers)
            & (S.sum(axis=1) >= th.min_selected))


def _order(idx: np.ndarray, key: np.ndarray, rng) -> list[int]:
    """Indices sorted by descending key; ties by index, or shuffled when ``rng`` is given."""
    idx = np.asarray(idx, dtype=int)
    if rng is not None:
        idx = rng.permutation(idx)
        return [int(i) for i in idx[np.argsort(-key[idx], kind="stable")]]
    return [int(i) for i in idx[np.lexsort((idx, -key[idx]))]]


def repair(selection, ctx: DeploymentContext, rng: np.random.Generator | None = None) -> RepairResult:
    """One reparation pass over the selected devices.

    Overloaded devices hand their task to a capable unselected device in the
    same area (highest trust first); devices about to leave their area hand it
    to a capable frequent mover. Afterwards surplus high movers and surplus
    high-trust devices are swapped for capable devices below the respective
    cutoff, or dropped when no swap partner exists. Replacements never push a
    cap over its limit, so the pass never adds violations.
    """
    s = _bits(selection).astype(bool).copy()
    th = ctx.thresholds

    def can_add(c: int) -> bool:
        if s[c] or not ctx.deployable[c]:
            return False
        if ctx.high_trust[c] and (s & ctx.high_trust).sum() >= th.max_trusted:
            return False
        if ctx.high_move[c] and (s & ctx.high_move).sum() >= th.max_movers:
            return False
        return True

    for j in np.flatnonzero(s):
        if ctx.overloaded[j]:
            s[j] = False
            same_area = np.flatnonzero(ctx.area_arr == ctx.area_arr[j])
            for c in _order(same_area, ctx.trust_arr, rng):
                if can_add(c):
                    s[c] = True
                    break
        elif ctx.low_avail[j]:
            s[j] = False
            for c in _order(np.arange(ctx.n), ctx.move_arr, rng):
                if can_add(c):
                    s[c] = True
                    break

    while (s & ctx.high_move).sum() > th.max_movers:
        movers = np.flatnonzero(s & ctx.high_move)
        out = _order(movers, -ctx.trust_arr, rng)[0]
        s[out] = False
        for c in _order(np.flatnonzero(~ctx.high_move), ctx.trust_arr, rng):
            if can_add(c):
                s[c] = True
                break

    while (s & ctx.high_trust).sum() > th.max_trusted:
        trusted = np.flatnonzero(s & ctx.high_trust)
        out = _order(trusted, -ctx.trust_arr, rng)[0]
        s[out] = False
        for c in _order(np.flatnonzero(~ctx.high_trust), ctx.trust_arr, rng):
            if can_add(c):
                s[c] = True
                break

    if s.sum() < th.min_selected:
        for c in _order(np.arange(ctx.n), ctx.trust_arr, rng):
            if s.sum() >= th.min_selected:
                break
            if can_add(c):
                s[c] = True

    sel = SelectionVector.from_array(s.astype(int))
    viol = tuple(check_constraints(sel, ctx))
    return RepairResult(sel, not viol, viol)
