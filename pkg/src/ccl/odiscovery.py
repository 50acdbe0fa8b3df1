"""Constraint-based observational discovery seeded with interventional facts.

The discovery loop initializes a complete time-series PAG, writes the
interventional (in)dependency constraints into it as frozen edgemarks, and
then alternates an edge-removal phase (conditional-independence tests over
growing conditioning sets) with a collider-orientation phase.  Preliminary
rounds harvest ancestor marks that seed the next round's conditioning-set
preferences.  The removal/orientation phases are a deliberately compact
FCI-style procedure, not a reproduction of any specific published variant.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import stats
from .graph import (
    ARROW,
    CIRCLE,
    DEST_END,
    SOURCE_END,
    TAIL,
    Edgemark,
    GraphError,
    Link,
    LinkKey,
    TsPag,
    canonical_key,
    init_complete_pag,
    orient_unshielded_colliders,
)
from .idiscovery import Constraint, ConstraintList
from .scm import Series

logger = logging.getLogger(__name__)

Node = tuple[int, int]  # (variable, offset back in time from the present slice)


@dataclass(frozen=True)
class DiscoveryConfig:
    """Knobs of the observational discovery loop.

    ``k`` preliminary rounds precede the final removal/orientation pass;
    ``p_max`` caps the conditioning-set cardinality and
    ``max_combinations`` caps how many conditioning sets are tried per edge
    and cardinality (candidates are ordered best-first, so the cap trims the
    least promising sets).
    """

    alpha_obs: float = 0.05
    tau_max: int = 1
    k: int = 1
    p_max: int = 3
    max_combinations: int = 10

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha_obs < 1.0:
            raise ValueError("alpha_obs must lie strictly between 0 and 1")
        if self.k < 0 or self.p_max < 0 or self.tau_max < 0:
            raise ValueError("k, p_max and tau_max must be non-negative")
        if self.max_combinations < 1:
            raise ValueError("max_combinations must be positive")


@dataclass
class SepsetStore:
    """Separating sets for removed edges plus per-pair effect statistics.

    ``effects`` keeps, for every tested pair, the signed statistic of
    minimum magnitude over all conditioning sets tried for that pair.
    """

    sepsets: dict[LinkKey, frozenset[Node]] = field(default_factory=dict)
    effects: dict[LinkKey, float] = field(default_factory=dict)

    def record_effect(self, key: LinkKey, statistic: float) -> None:
        prev = self.effects.get(key)
        if prev is None or abs(statistic) < abs(prev):
            self.effects[key] = statistic

    def record_sepset(self, key: LinkKey, sepset: frozenset[Node]) -> None:
        self.sepsets[key] = sepset


def effect_size(store: SepsetStore, i: int, j: int, tau: int) -> float | None:
    """Signed minimum-magnitude statistic for the pair (X^i_{t-tau}, X^j_t)."""
    return store.effects.get(canonical_key(i, tau, j))


# ---------------------------------------------------------------------------
# Constraint injection
# ---------------------------------------------------------------------------


def _constraint_positions(
    key: LinkKey, i: int, j: int, tau: int
) -> tuple[tuple[LinkKey, int], tuple[LinkKey, int]]:
    """(i-end position, j-end position) of the pair's link."""
    if tau > 0:
        return (key, SOURCE_END), (key, DEST_END)
    if i < j:
        return (key, SOURCE_END), (key, DEST_END)
    return (key, DEST_END), (key, SOURCE_END)


def inject_constraints(pag: TsPag, constraints: ConstraintList) -> TsPag:
    """Write interventional (in)dependencies into a freshly initialized PAG.

    A dependency (j, i, tau) orients the pair's link into i -> j and freezes
    both marks; an independency puts a frozen arrowhead at the i end only.
    Constraints never add or remove edges.  A dependency and an independency
    on the same ordered pair keep whichever has the smaller p-value (ties go
    to the independency); contradictory writes from distinct constraints keep
    the first in that same order and are logged.
    """
    deps = {(c.i, c.j, c.tau): c for c in constraints.deps}
    indeps = {(c.i, c.j, c.tau): c for c in constraints.indeps}
    for triple in set(deps) & set(indeps):
        dep, indep = deps[triple], indeps[triple]
        if dep.p < indep.p:
            del indeps[triple]
        else:
            del deps[triple]
        logger.debug("conflicting dep/indep constraint on %s", triple)

    # Smaller p writes first; on equal p dependencies take precedence.
    writes: list[tuple[float, int, Constraint, bool]] = [
        (c.p, 0, c, True) for c in deps.values()
    ] + [(c.p, 1, c, False) for c in indeps.values()]
    writes.sort(key=lambda w: (w[0], w[1], w[2].j, w[2].i, w[2].tau))

    marks: dict[tuple[LinkKey, int], Edgemark] = {}
    frozen: set[tuple[int, int, int, int]] = set(pag.fixed_marks)

    def write(pos: tuple[LinkKey, int], mark: Edgemark) -> None:
        if pos in marks and marks[pos] is not mark:
            logger.debug("conflicting constraint write at %s", pos)
            return
        marks[pos] = mark
        frozen.add((*pos[0], pos[1]))

    for _, _, c, is_dep in writes:
        key = canonical_key(c.i, c.tau, c.j)
        if key not in pag.by_key:
            raise ValueError(f"constraint {c} does not match any edge of the graph")
        i_pos, j_pos = _constraint_positions(key, c.i, c.j, c.tau)
        if is_dep:
            write(i_pos, TAIL)
            write(j_pos, ARROW)
        else:
            write(i_pos, ARROW)

    if not marks:
        return pag
    links = []
    for link in pag.links:
        fm = marks.get((link.key, SOURCE_END), link.from_mark)
        tm = marks.get((link.key, DEST_END), link.to_mark)
        links.append(Link(link.from_var, link.lag, link.to_var, fm, tm, link.effect))
    return TsPag(
        n_vars=pag.n_vars,
        tau_max=pag.tau_max,
        links=tuple(links),
        fixed_marks=frozenset(frozen),
    )


# ---------------------------------------------------------------------------
# Fast conditional-independence engine with cellwise do-masking
# ---------------------------------------------------------------------------


class _CiEngine:
    """Partial-correlation tests on a lagged design matrix.

    Samples whose tested or conditioned cells are interventional are
    excluded per test.  Row masks and correlation matrices are cached per
    signature (the set of involved columns that contain any do-cells), which
    makes repeated tests cheap on mostly observational data.
    """

    def __init__(self, data: Series, tau_max: int) -> None:
        values = data.values
        mask = data.do_mask
        self.n = data.n_vars
        self.tau_max = tau_max
        rows = data.n_steps - tau_max
        self.rows = max(rows, 0)
        cols = self.n * (tau_max + 1)
        self.design = np.empty((self.rows, cols))
        self.do = np.zeros((self.rows, cols), dtype=bool)
        for offset in range(tau_max + 1):
            lo = tau_max - offset
            hi = lo + self.rows
            block = slice(offset * self.n, (offset + 1) * self.n)
            self.design[:, block] = values[lo:hi]
            self.do[:, block] = mask[lo:hi]
        self.col_has_do = self.do.any(axis=0)
        self._sig_cache: dict[tuple[int, ...], tuple[np.ndarray, int]] = {}
        self._corr_cache: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}

    def col(self, node: Node) -> int:
        var, offset = node
        return offset * self.n + var

    def _signature(self, cols: list[int]) -> tuple[int, ...]:
        return tuple(sorted(c for c in set(cols) if self.col_has_do[c]))

    def _rows_for(self, sig: tuple[int, ...]) -> tuple[np.ndarray, int]:
        cached = self._sig_cache.get(sig)
        if cached is None:
            if sig:
                valid = ~self.do[:, list(sig)].any(axis=1)
            else:
                valid = np.ones(self.rows, dtype=bool)
            cached = (valid, int(valid.sum()))
            self._sig_cache[sig] = cached
        return cached

    def _corr_for(self, sig: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
        """(correlation matrix, zero-variance flags) over all columns on sig rows."""
        cached = self._corr_cache.get(sig)
        if cached is None:
            valid, count = self._rows_for(sig)
            sub = self.design[valid]
            centered = sub - sub.mean(axis=0)
            norms = np.sqrt(np.einsum("ij,ij->j", centered, centered))
            degenerate = norms <= 1e-12 * math.sqrt(max(count, 1))
            safe = np.where(degenerate, 1.0, norms)
            unit = centered / safe
            corr = unit.T @ unit
            cached = (corr, degenerate)
            self._corr_cache[sig] = cached
        return cached

    def test(
        self, x_node: Node, y_node: Node, s_nodes: tuple[Node, ...]
    ) -> stats.TestResult | None:
        """Fisher-z partial correlation, or None when too few usable samples."""
        cols = [self.col(x_node), self.col(y_node)] + [self.col(s) for s in s_nodes]
        sig = self._signature(cols)
        valid, count = self._rows_for(sig)
        n_s = len(s_nodes)
        if count < n_s + 3:
            return None
        corr, degenerate = self._corr_for(sig)
        if degenerate[cols[0]] or degenerate[cols[1]]:
            return stats.TestResult(0.0, 1.0, degenerate=True)
        keep = [c for c in cols[2:] if not degenerate[c]]
        idx = cols[:2] + keep
        sub = corr[np.ix_(idx, idx)]
        if len(idx) == 2:
            r = float(sub[0, 1])
        else:
            try:
                prec = np.linalg.inv(sub)
            except np.linalg.LinAlgError:
                return self._slow_test(cols, valid, n_s)
            denom = prec[0, 0] * prec[1, 1]
            if denom <= 0:
                return self._slow_test(cols, valid, n_s)
            r = float(-prec[0, 1] / math.sqrt(denom))
        r = max(-1.0, min(1.0, r))
        return stats.TestResult(r, stats._fisher_p(r, count - n_s))

    def _slow_test(
        self, cols: list[int], valid: np.ndarray, n_s: int
    ) -> stats.TestResult:
        x = self.design[valid, cols[0]]
        y = self.design[valid, cols[1]]
        conditioning = [self.design[valid, c] for c in cols[2:]]
        res = stats.partial_corr_test(x, y, conditioning)
        return res


# ---------------------------------------------------------------------------
# Discovery
# ---------------------------------------------------------------------------


class _WorkGraph:
    """Mutable mark/adjacency state between the immutable phase boundaries."""

    def __init__(self, pag: TsPag) -> None:
        self.n_vars = pag.n_vars
        self.tau_max = pag.tau_max
        self.marks: dict[LinkKey, list[Edgemark]] = {
            link.key: [link.from_mark, link.to_mark] for link in pag.links
        }
        self.fixed = set(pag.fixed_marks)

    def remove(self, key: LinkKey) -> None:
        del self.marks[key]

    def mark_between(self, a: Node, b: Node) -> Edgemark | None:
        """Mark at a's end of the edge between unrolled nodes a and b, if any."""
        (va, oa), (vb, ob) = a, b
        d = oa - ob
        if abs(d) > self.tau_max:
            return None
        if d > 0:
            entry = self.marks.get((va, d, vb))
            return entry[0] if entry else None
        if d < 0:
            entry = self.marks.get((vb, -d, va))
            return entry[1] if entry else None
        key = canonical_key(va, 0, vb)
        entry = self.marks.get(key)
        if entry is None:
            return None
        return entry[0] if key[0] == va else entry[1]

    def adjacent_nodes(self, node: Node) -> list[Node]:
        """Unrolled neighbours of ``node`` within offsets [0, tau_max]."""
        var, off = node
        out = []
        for (fv, lag, tv), _ in self.marks.items():
            if lag == 0:
                if fv == var:
                    out.append((tv, off))
                elif tv == var:
                    out.append((fv, off))
            else:
                if tv == var and off + lag <= self.tau_max:
                    out.append((fv, off + lag))
                if fv == var and off - lag >= 0:
                    out.append((tv, off - lag))
        return sorted(set(out))

    def to_pag(self, effects: dict[LinkKey, float] | None = None) -> TsPag:
        links = []
        for (fv, lag, tv), (fm, tm) in sorted(self.marks.items()):
            eff = effects.get((fv, lag, tv)) if effects is not None else None
            links.append(Link(fv, lag, tv, fm, tm, eff))
        return TsPag(
            n_vars=self.n_vars,
            tau_max=self.tau_max,
            links=tuple(links),
            fixed_marks=frozenset(self.fixed),
        )


def _pair_nodes(key: LinkKey) -> tuple[Node, Node]:
    fv, lag, tv = key
    return (fv, lag), (tv, 0)


def _ordered_candidates(work: _WorkGraph, key: LinkKey, store: SepsetStore) -> list[Node]:
    """Conditioning-set candidates for an edge, best first.

    Candidates come from the adjacencies of the later node (and of the
    earlier node for lagged pairs), clipped to the lag window.  Known
    non-ancestors of both pair nodes are excluded; known ancestors of either
    come first, then stronger recorded effects.
    """
    i_node, j_node = _pair_nodes(key)
    pool = set(work.adjacent_nodes(j_node))
    if key[1] > 0:
        pool |= set(work.adjacent_nodes(i_node))
    pool.discard(i_node)
    pool.discard(j_node)

    scored = []
    for node in pool:
        mark_i = work.mark_between(node, i_node)
        mark_j = work.mark_between(node, j_node)
        if mark_i is ARROW and mark_j is ARROW:
            continue  # known non-ancestor of both ends
        is_ancestor = mark_i is TAIL or mark_j is TAIL
        eff = 0.0
        for other in (j_node, i_node):
            d = node[1] - other[1]
            if abs(d) > work.tau_max:
                continue
            if d > 0:
                k = (node[0], d, other[0])
            elif d < 0:
                k = (other[0], -d, node[0])
            else:
                k = canonical_key(node[0], 0, other[0])
            val = store.effects.get(k)
            if val is not None:
                eff = max(eff, abs(val))
        scored.append((0 if is_ancestor else 1, -eff, node[0], node[1], node))
    scored.sort()
    return [entry[4] for entry in scored]


def _removal_phase(
    work: _WorkGraph, engine: _CiEngine, cfg: DiscoveryConfig, store: SepsetStore
) -> None:
    for card in range(cfg.p_max + 1):
        for key in sorted(work.marks):
            i_node, j_node = _pair_nodes(key)
            if card == 0:
                subsets: list[tuple[Node, ...]] = [()]
            else:
                candidates = _ordered_candidates(work, key, store)
                if len(candidates) < card:
                    continue
                subsets = list(
                    itertools.islice(
                        itertools.combinations(candidates, card), cfg.max_combinations
                    )
                )
            for subset in subsets:
                res = engine.test(i_node, j_node, subset)
                if res is None:
                    continue
                store.record_effect(key, res.statistic)
                if res.p_value > cfg.alpha_obs:
                    work.remove(key)
                    store.record_sepset(key, frozenset(subset))
                    break


def _harvest_ancestorships(work: _WorkGraph) -> list[tuple[LinkKey, int]]:
    """Positions carrying a tail on a directed (tail/arrow) link."""
    out = []
    for key, (fm, tm) in work.marks.items():
        if fm is TAIL and tm is ARROW:
            out.append((key, SOURCE_END))
        elif fm is ARROW and tm is TAIL:
            out.append((key, DEST_END))
    return out


def discover(
    data: Series, constraints: ConstraintList, cfg: DiscoveryConfig
) -> tuple[TsPag, SepsetStore]:
    """Run the seeded discovery loop on the observational cells of ``data``.

    Interventional cells never enter a conditional-independence test: a
    sample is dropped from a test whenever any tested or conditioned cell is
    marked as a do-cell.  Returns the surviving PAG, its links annotated
    with the recorded effect sizes, plus the final round's sepset store.
    """
    engine = _CiEngine(data, cfg.tau_max)
    pag = inject_constraints(init_complete_pag(data.n_vars, cfg.tau_max), constraints)
    harvested: list[tuple[LinkKey, int]] = []
    store = SepsetStore()

    for round_idx in range(cfg.k + 1):
        if round_idx > 0:
            pag = inject_constraints(
                init_complete_pag(data.n_vars, cfg.tau_max), constraints
            )
        work = _WorkGraph(pag)
        for key, end in harvested:
            if key in work.marks and (*key, end) not in work.fixed:
                work.marks[key][end] = TAIL
        store = SepsetStore()
        _removal_phase(work, engine, cfg, store)
        conflicts: list = []
        pag = orient_unshielded_colliders(work.to_pag(), store.sepsets, conflicts)
        if conflicts:
            logger.debug("orientation conflicts: %s", conflicts)
        work = _WorkGraph(pag)
        harvested = _harvest_ancestorships(work)

    final = _WorkGraph(pag)
    return final.to_pag(store.effects), store
