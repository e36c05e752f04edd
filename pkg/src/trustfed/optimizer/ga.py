"""Multi-objective genetic algorithm over binary deployment vectors.

Binary tournament on scalarized fitness, one-point crossover, bit-flip
mutation at rate 1/L over deployable genes, reparation of every offspring and
an archive of non-dominated feasible solutions. The archive is the result
set; the deployed selection is its best member under the objective weights.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .. import rng as rngmod
from ..domain import GAParams, SelectionVector
from ..errors import NoFeasibleSolution
from .constraints import feasible_mask, repair
from .objectives import DeploymentContext, evaluate_batch


@dataclass
class ParetoArchive:
    """Non-dominated feasible selections. Duplicate objective vectors keep the first arrival."""

    bits: list[np.ndarray] = field(default_factory=list)
    objs: np.ndarray = field(default_factory=lambda: np.empty((0, 5)))

    def offer(self, s: np.ndarray, f: np.ndarray) -> bool:
        if len(self.objs):
            A = self.objs
            if np.any(np.all(A >= f, axis=1)):
                # dominated by, or equal to, an existing member
                return False
            keep = ~(np.all(f >= A, axis=1) & np.any(f > A, axis=1))
            if not keep.all():
                self.bits = [b for b, k in zip(self.bits, keep) if k]
                self.objs = A[keep]
        self.bits.append(s.copy())
        self.objs = np.vstack([self.objs, f[None, :]])
        return True

    def __len__(self) -> int:
        return len(self.bits)

    def best(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        """Max scalarized member; ties -> fewest selected, then lowest bit string."""
        fit = self.objs @ w
        top = fit.max()
        cand = [i for i in range(len(self.bits)) if fit[i] >= top - 1e-12]
        i = min(cand, key=lambda k: (int(self.bits[k].sum()), tuple(self.bits[k].tolist())))
        return self.bits[i], self.objs[i], float(fit[i])


@dataclass
class GAResult:
    chosen: SelectionVector
    objectives: tuple[float, ...]
    fitness: float
    pareto: list[tuple[SelectionVector, tuple[float, ...]]]
    generations: int
    best_history: list[float]


def _repair_rows(P: np.ndarray, ctx: DeploymentContext) -> np.ndarray:
    ok = feasible_mask(P, ctx)
    for r in np.flatnonzero(~ok):
        P[r] = repair(P[r], ctx).selection.as_array()
    return P


def _check_solvable(ctx: DeploymentContext) -> None:
    """The empty selection is feasible unless a minimum selection count is imposed."""
    need = ctx.thresholds.min_selected
    if need == 0:
        return
    greedy = np.zeros(ctx.n, dtype=np.int8)
    greedy[np.argsort(-ctx.trust_arr, kind="stable")[:need]] = 1
    for seed in (greedy, np.ones(ctx.n, dtype=np.int8)):
        if repair(seed, ctx).feasible:
            return
    raise NoFeasibleSolution(f"cannot deploy {need} clients under the constraints")


def ga_optimize(ctx: DeploymentContext, params: GAParams = GAParams(), seed: int = 0,
                stream_key: tuple[int, ...] = ()) -> GAResult:
    _check_solvable(ctx)
    n, P = ctx.n, params.population_size
    w = ctx.w
    archive = ParetoArchive()
    if n == 0:
        empty = SelectionVector(())
        f = tuple(float(v) for v in evaluate_batch(np.zeros((1, 0)), ctx)[0])
        return GAResult(empty, f, float(np.dot(f, w)), [(empty, f)], 0, [])

    deployable = np.flatnonzero(ctx.deployable)
    L = max(len(deployable), 1)
    r0 = rngmod.stream(seed, "ga", *stream_key, 0)
    # random initial population: each gene on with a density drawn per chromosome
    dens = r0.uniform(0.0, 0.5, size=(P, 1))
    pop = (r0.random((P, n)) < dens).astype(np.int8)
    pop = _repair_rows(pop, ctx)
    fobj = evaluate_batch(pop, ctx)
    for s, f in zip(pop, fobj):
        archive.offer(s, f)
    best_hist = [archive.best(w)[2]]
    stale = 0
    gen = 0
    for gen in range(1, params.generations + 1):
        g = rngmod.stream(seed, "ga", *stream_key, gen)
        pool = np.vstack([pop] + ([np.asarray(archive.bits)] if len(archive) else []))
        pool_fit = np.concatenate([fobj @ w, archive.objs @ w]) if len(archive) else fobj @ w
        # binary tournament
        a = g.integers(0, len(pool), size=P)
        b = g.integers(0, len(pool), size=P)
        win = np.where(pool_fit[a] > pool_fit[b], a, np.where(pool_fit[b] > pool_fit[a], b, np.minimum(a, b)))
        parents = pool[win]
        kids = parents.copy()
        cross = g.random(P // 2) < params.crossover_prob
        cuts = g.integers(1, max(n, 2), size=P // 2)
        for k in range(P // 2):
            if cross[k] and n > 1:
                i, j, c = 2 * k, 2 * k + 1, cuts[k]
                kids[i, c:], kids[j, c:] = parents[j, c:].copy(), parents[i, c:].copy()
        flips = g.random((P, len(deployable))) < 1.0 / L
        if len(deployable):
            kids[:, deployable] ^= flips.astype(np.int8)
        kids = _repair_rows(kids, ctx)
        kobj = evaluate_batch(kids, ctx)
        improved = False
        for s, f in zip(kids, kobj):
            improved |= archive.offer(s, f)
        # truncation survivor selection over parents + offspring, duplicates removed
        merged = np.vstack([pop, kids])
        mobj = np.vstack([fobj, kobj])
        _, first = np.unique(merged, axis=0, return_index=True)
        first = np.sort(first)
        order = first[np.argsort(-(mobj[first] @ w), kind="stable")][:P]
        pop, fobj = merged[order], mobj[order]
        best_hist.append(archive.best(w)[2])
        stale = 0 if improved else stale + 1
        if stale >= params.patience:
            break

    bits, f, fit = archive.best(w)
    pareto = [(SelectionVector.from_array(b), tuple(float(x) for x in o))
              for b, o in zip(archive.bits, archive.objs)]
    return GAResult(SelectionVector.from_array(bits), tuple(float(x) for x in f), fit,
                    pareto, gen, best_hist)


def brute_force_optimum(ctx: DeploymentContext) -> tuple[SelectionVector, float]:
    """Exhaustive search over every feasible selection (no repair). Only for small n."""
    n = ctx.n
    if n > 20:
        raise ValueError("exhaustive search limited to n <= 20")
    best_fit, best_bits = -np.inf, None
    chunk = 4096
    combos = itertools.product((0, 1), repeat=n)
    while True:
        block = np.asarray(list(itertools.islice(combos, chunk)), dtype=np.int8).reshape(-1, n)
        if not len(block):
            break
        ok = feasible_mask(block, ctx)
        if ok.any():
            fb = block[ok]
            fit = evaluate_batch(fb, ctx) @ ctx.w
            i = int(np.argmax(fit))
            if fit[i] > best_fit + 1e-12:
                best_fit, best_bits = float(fit[i]), fb[i]
    if best_bits is None:
        raise NoFeasibleSolution("no feasible selection")
    return SelectionVector.from_array(best_bits), best_fit
