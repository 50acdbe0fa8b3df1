"""Interventional discovery: ancestry constraints from randomized do-cells.

For every ordered variable pair and lag, the interventional cells of the
candidate cause are paired with the observational cells of the candidate
effect, aggregated over all time shifts.  A small p-value attests ancestry
(the intervened variable still moves the other one), a large p-value attests
non-ancestry; the band in between yields no constraint.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO, Literal

import numpy as np

from .graph import topological_order
from .scm import Series
from .stats import pearson_test

# Sample-size floors for filing a constraint.  The Fisher z statistic is
# identically zero at n = 3, so a pair tested with three samples would file a
# p = 1 "independency" regardless of the data; dependency tests need n >= 8
# to carry any signal, and accepting the null hypothesis (an independency)
# demands enough power to have seen a real effect.
MIN_SAMPLES_DEP = 8
MIN_SAMPLES_INDEP = 20


def _accepts_null(x: np.ndarray, y: np.ndarray, alpha_indep: float) -> bool:
    """Stability check before accepting independence.

    A false independency permanently retires its variable from the control
    loop, so acceptance additionally requires both temporal halves of the
    sample to accept the null on their own.
    """
    half = x.size // 2
    if half < MIN_SAMPLES_DEP:
        return False
    for lo, hi in ((0, half), (half, x.size)):
        if pearson_test(x[lo:hi], y[lo:hi]).p_value < alpha_indep:
            return False
    return True


@dataclass(frozen=True)
class Constraint:
    """(effect j, cause i, lag tau, p-value) with the meaning decided by the list."""

    j: int
    i: int
    tau: int
    p: float


@dataclass(frozen=True)
class ConstraintList:
    deps: tuple[Constraint, ...] = ()
    indeps: tuple[Constraint, ...] = ()

    def to_csv(self, fp: IO[str]) -> None:
        fp.write("kind,j,i,tau,p\n")
        for kind, items in (("dep", self.deps), ("indep", self.indeps)):
            for c in items:
                fp.write(f"{kind},{c.j},{c.i},{c.tau},{c.p!r}\n")


def constraints_from_csv(fp: IO[str]) -> ConstraintList:
    header = fp.readline().strip()
    if header != "kind,j,i,tau,p":
        raise ValueError("malformed constraint CSV header")
    deps: list[Constraint] = []
    indeps: list[Constraint] = []
    for line in fp:
        line = line.strip()
        if not line:
            continue
        kind, j, i, tau, p = line.split(",")
        c = Constraint(int(j), int(i), int(tau), float(p))
        if kind == "dep":
            deps.append(c)
        elif kind == "indep":
            indeps.append(c)
        else:
            raise ValueError(f"unknown constraint kind {kind!r}")
    return ConstraintList(tuple(deps), tuple(indeps))


def _prune_contemporaneous_cycles(constraints: list[Constraint]) -> list[Constraint]:
    """Drop the highest-p member of each contemporaneous directed cycle."""
    kept = list(constraints)
    while True:
        contemp = [c for c in kept if c.tau == 0]
        n = 1 + max((max(c.i, c.j) for c in kept), default=0)
        if topological_order(n, [(c.i, c.j) for c in contemp]) is not None:
            return kept
        cycle = _find_cycle(n, contemp)
        worst = max(cycle, key=lambda c: (c.p, c.j, c.i))
        kept.remove(worst)


def _find_cycle(n: int, contemp: list[Constraint]) -> list[Constraint]:
    by_edge = {}
    out: dict[int, list[int]] = {v: [] for v in range(n)}
    for c in contemp:
        out[c.i].append(c.j)
        by_edge[(c.i, c.j)] = c
    state = [0] * n
    stack: list[int] = []

    def dfs(v: int) -> list[int] | None:
        state[v] = 1
        stack.append(v)
        for w in out[v]:
            if state[w] == 1:
                return stack[stack.index(w) :] + [w]
            if state[w] == 0:
                found = dfs(w)
                if found is not None:
                    return found
        stack.pop()
        state[v] = 2
        return None

    for v in range(n):
        if state[v] == 0:
            nodes = dfs(v)
            if nodes is not None:
                return [by_edge[(nodes[k], nodes[k + 1])] for k in range(len(nodes) - 1)]
    raise AssertionError("cycle reported but not found")


def discover_interventional(
    data: Series,
    tau_max: int,
    alpha_dep: float = 0.05,
    alpha_indep: float = 0.8,
    prune_list: Literal["deps", "indeps"] = "deps",
) -> ConstraintList:
    """Extract dependency and independency constraints from a mixed series.

    For each (cause i, effect j, lag tau) with the contemporaneous
    self-pair excluded, samples pair the do-cells of i at t-tau with the
    observational cells of j at t.  p <= alpha_dep files a dependency,
    p >= alpha_indep an independency; pairs with too few usable samples for
    the respective conclusion are skipped.  Contemporaneous ancestry cycles
    are then pruned from the configured list by repeatedly dropping the
    cycle member with the greatest p-value.
    """
    if not alpha_dep < alpha_indep:
        raise ValueError("alpha_dep must be below alpha_indep")
    values = data.values
    mask = data.do_mask
    n = data.n_vars
    t_len = data.n_steps
    deps: list[Constraint] = []
    indeps: list[Constraint] = []
    if mask.any():
        for tau in range(tau_max + 1):
            upper = t_len - tau
            if upper < MIN_SAMPLES_DEP:
                continue
            for i in range(n):
                cause_do = mask[:upper, i]
                if not cause_do.any():
                    continue
                for j in range(n):
                    if tau == 0 and i == j:
                        continue
                    rows = cause_do & ~mask[tau:, j]
                    n_usable = int(rows.sum())
                    if n_usable < MIN_SAMPLES_DEP:
                        continue
                    x = values[:upper, i][rows]
                    y = values[tau:, j][rows]
                    res = pearson_test(x, y)
                    if res.p_value <= alpha_dep:
                        deps.append(Constraint(j, i, tau, res.p_value))
                    elif (
                        res.p_value >= alpha_indep
                        and n_usable >= MIN_SAMPLES_INDEP
                        and _accepts_null(x, y, alpha_indep)
                    ):
                        indeps.append(Constraint(j, i, tau, res.p_value))
    if prune_list == "deps":
        deps = _prune_contemporaneous_cycles(deps)
    else:
        indeps = _prune_contemporaneous_cycles(indeps)
    key = lambda c: (c.j, c.i, c.tau)
    return ConstraintList(tuple(sorted(deps, key=key)), tuple(sorted(indeps, key=key)))
