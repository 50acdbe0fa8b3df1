"""Time-series graph data model: PAGs, MAGs, DAGs and their operations.

Links connect a source variable ``tau`` steps in the past to a destination
variable at the present.  Each link end carries an edgemark: a tail marks the
variable as an ancestor of the other end, an arrowhead marks it as a
non-ancestor, and a circle leaves the question open.  A MAG is a PAG without
circles; a DAG has only tail->arrow links and serves as ground truth.

Graphs are immutable; every operation returns a new graph.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping


class Edgemark(Enum):
    TAIL = "-"
    ARROW = "arrow"
    CIRCLE = "o"


TAIL = Edgemark.TAIL
ARROW = Edgemark.ARROW
CIRCLE = Edgemark.CIRCLE

# Text renderings: at the source end an arrowhead points left, at the
# destination end it points right.
_FROM_MARK_CHAR = {TAIL: "-", ARROW: "<", CIRCLE: "o"}
_TO_MARK_CHAR = {TAIL: "-", ARROW: ">", CIRCLE: "o"}
_FROM_CHAR_MARK = {v: k for k, v in _FROM_MARK_CHAR.items()}
_TO_CHAR_MARK = {v: k for k, v in _TO_MARK_CHAR.items()}

# A link end: 0 = source (earlier) end, 1 = destination (later) end.
SOURCE_END = 0
DEST_END = 1

LinkKey = tuple[int, int, int]  # (from_var, lag, to_var)
MarkPos = tuple[int, int, int, int]  # (from_var, lag, to_var, end)


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Link:
    """One edge of a time-series graph.

    Connects X^{from_var}_{t-lag} to X^{to_var}_t.  ``effect`` is the signed
    minimum-magnitude partial-correlation statistic recorded for the pair
    during discovery, or None when not estimated.
    """

    from_var: int
    lag: int
    to_var: int
    from_mark: Edgemark
    to_mark: Edgemark
    effect: float | None = None

    def __post_init__(self) -> None:
        if self.lag < 0:
            raise GraphError("lag must be non-negative")
        if self.lag == 0 and self.from_var == self.to_var:
            raise GraphError("contemporaneous self-links are not allowed")

    @property
    def key(self) -> LinkKey:
        return (self.from_var, self.lag, self.to_var)

    def mark_at(self, end: int) -> Edgemark:
        return self.from_mark if end == SOURCE_END else self.to_mark

    def with_mark(self, end: int, mark: Edgemark) -> "Link":
        if end == SOURCE_END:
            return replace(self, from_mark=mark)
        return replace(self, to_mark=mark)

    def is_directed(self) -> bool:
        """True for a tail->arrow link (from_var an ancestor of to_var)."""
        return self.from_mark is TAIL and self.to_mark is ARROW

    def to_text(self) -> str:
        parts = (
            f"{self.from_var} "
            f"{_FROM_MARK_CHAR[self.from_mark]}{_TO_MARK_CHAR[self.to_mark]} "
            f"{self.to_var} @ {self.lag}"
        )
        if self.effect is not None:
            parts += f" {self.effect!r}"
        return parts


def link_from_text(line: str) -> Link:
    """Parse one `i <mark><mark> j @ tau [effect]` line."""
    tokens = line.split()
    if len(tokens) not in (5, 6) or tokens[3] != "@":
        raise GraphError(f"malformed link line: {line!r}")
    marks = tokens[1]
    if len(marks) != 2 or marks[0] not in _FROM_CHAR_MARK or marks[1] not in _TO_CHAR_MARK:
        raise GraphError(f"malformed edgemarks in link line: {line!r}")
    effect = float(tokens[5]) if len(tokens) == 6 else None
    return Link(
        from_var=int(tokens[0]),
        lag=int(tokens[4]),
        to_var=int(tokens[2]),
        from_mark=_FROM_CHAR_MARK[marks[0]],
        to_mark=_TO_CHAR_MARK[marks[1]],
        effect=effect,
    )


def canonical_key(i: int, lag: int, j: int) -> LinkKey:
    """Canonical storage key for the pair (X^i_{t-lag}, X^j_t).

    Contemporaneous pairs are stored with the smaller index first.
    """
    if lag == 0 and i > j:
        return (j, 0, i)
    return (i, lag, j)


@dataclass(frozen=True)
class TsPag:
    """Time-series partial ancestral graph over a lag window.

    ``fixed_marks`` are link-end positions frozen by constraint injection;
    later phases never overwrite them.
    """

    n_vars: int
    tau_max: int
    links: tuple[Link, ...]
    fixed_marks: frozenset[MarkPos] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        seen: set[LinkKey] = set()
        for link in self.links:
            if link.lag > self.tau_max:
                raise GraphError(f"link {link.key} exceeds tau_max={self.tau_max}")
            if not (0 <= link.from_var < self.n_vars and 0 <= link.to_var < self.n_vars):
                raise GraphError(f"link {link.key} references an unknown variable")
            if link.lag > 0 and link.to_mark is not ARROW:
                raise GraphError(f"lagged link {link.key} must carry an arrow at the later end")
            if link.lag == 0 and link.from_var > link.to_var:
                raise GraphError(f"contemporaneous link {link.key} must be stored low-index first")
            if link.key in seen:
                raise GraphError(f"duplicate link {link.key}")
            seen.add(link.key)

    @cached_property
    def by_key(self) -> Mapping[LinkKey, Link]:
        return {link.key: link for link in self.links}

    def link_between(self, i: int, lag: int, j: int) -> Link | None:
        """Link for the pair (X^i_{t-lag}, X^j_t), if present."""
        return self.by_key.get(canonical_key(i, lag, j))

    def sorted_links(self) -> list[Link]:
        return sorted(self.links, key=lambda l: l.key)

    def circle_positions(self) -> list[MarkPos]:
        """Circle-mark positions in canonical order (key order, source end first)."""
        out: list[MarkPos] = []
        for link in self.sorted_links():
            if link.from_mark is CIRCLE:
                out.append((*link.key, SOURCE_END))
            if link.to_mark is CIRCLE:
                out.append((*link.key, DEST_END))
        return out

    def to_text(self) -> str:
        """Canonical one-link-per-line text rendering."""
        return "".join(link.to_text() + "\n" for link in self.sorted_links())


@dataclass(frozen=True)
class Mag(TsPag):
    """A PAG with zero circle marks and an acyclic contemporaneous core."""

    def __post_init__(self) -> None:
        super().__post_init__()
        for link in self.links:
            if link.from_mark is CIRCLE or link.to_mark is CIRCLE:
                raise GraphError(f"circle mark in MAG at {link.key}")
        if _contemporaneous_cycle(self.links):
            raise GraphError("contemporaneous directed subgraph is cyclic")


@dataclass(frozen=True)
class Dag(TsPag):
    """Ground-truth graph: directed (tail->arrow) links only."""

    def __post_init__(self) -> None:
        super().__post_init__()
        for link in self.links:
            if not link.is_directed():
                raise GraphError(f"non-directed link {link.key} in DAG")
        if _contemporaneous_cycle(self.links):
            raise GraphError("contemporaneous directed subgraph is cyclic")


def parse_graph_text(text: str, n_vars: int, tau_max: int) -> TsPag:
    links = tuple(link_from_text(line) for line in text.splitlines() if line.strip())
    return TsPag(n_vars=n_vars, tau_max=tau_max, links=links)


def _contemporaneous_edges(links: Iterable[Link]) -> list[tuple[int, int]]:
    edges = []
    for link in links:
        if link.lag != 0:
            continue
        if link.from_mark is TAIL and link.to_mark is ARROW:
            edges.append((link.from_var, link.to_var))
        elif link.from_mark is ARROW and link.to_mark is TAIL:
            edges.append((link.to_var, link.from_var))
    return edges


def topological_order(n: int, edges: Iterable[tuple[int, int]]) -> list[int] | None:
    """Kahn topological sort; None if the edge set is cyclic."""
    out: dict[int, list[int]] = {v: [] for v in range(n)}
    indeg = [0] * n
    for u, v in edges:
        out[u].append(v)
        indeg[v] += 1
    queue = deque(v for v in range(n) if indeg[v] == 0)
    order = []
    while queue:
        v = queue.popleft()
        order.append(v)
        for w in out[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    return order if len(order) == n else None


def _contemporaneous_cycle(links: Iterable[Link]) -> bool:
    links = list(links)
    n = 1 + max((max(l.from_var, l.to_var) for l in links), default=0)
    return topological_order(n, _contemporaneous_edges(links)) is None


def init_complete_pag(n_vars: int, tau_max: int) -> TsPag:
    """Fully connected starting graph under the time-order constraints.

    Contemporaneous pairs get o-o links, lagged ordered pairs (including
    autodependencies) get o-> links with the arrow at the later end.
    """
    if n_vars < 1:
        raise GraphError("n_vars must be at least 1")
    if tau_max < 0:
        raise GraphError("tau_max must be non-negative")
    links = []
    for i in range(n_vars):
        for j in range(i + 1, n_vars):
            links.append(Link(i, 0, j, CIRCLE, CIRCLE))
    for lag in range(1, tau_max + 1):
        for i in range(n_vars):
            for j in range(n_vars):
                links.append(Link(i, lag, j, CIRCLE, ARROW))
    return TsPag(n_vars=n_vars, tau_max=tau_max, links=tuple(links))


# ---------------------------------------------------------------------------
# Collider orientation
# ---------------------------------------------------------------------------

SepsetKey = LinkKey  # canonical key of the removed pair
Sepset = frozenset[tuple[int, int]]  # nodes (var, offset) relative to the later pair node


def _incidences(pag: TsPag, b: int) -> list[tuple[Link, int, int]]:
    """Links touching variable b: (link, end-at-b, signed lag of the other node).

    The signed lag is positive when the other node lies earlier in time than
    b's node on that link, negative when later.
    """
    out = []
    for link in pag.sorted_links():
        if link.to_var == b:
            out.append((link, DEST_END, link.lag))
        if link.from_var == b and (link.lag > 0 or link.to_var != b):
            out.append((link, SOURCE_END, -link.lag))
    return out


def orient_unshielded_colliders(
    pag: TsPag,
    sepsets: Mapping[SepsetKey, Sepset],
    conflicts: list[tuple[LinkKey, int]] | None = None,
) -> TsPag:
    """Orient arrowheads at the middle node of unshielded collider triples.

    For every unshielded triple A *-* B *-* C whose outer pair was separated
    by a recorded conditioning set not containing B, both marks at B become
    arrowheads.  Marks frozen in ``fixed_marks`` are never touched, and tails
    are never overwritten (such contradictions are appended to ``conflicts``
    instead of raised, because noisy tests can produce them).

    Idempotent: re-applying with the same sepsets changes nothing.
    """
    new_marks: dict[tuple[LinkKey, int], Edgemark] = {}

    def demand_arrow(link: Link, end: int) -> None:
        pos = (*link.key, end)
        if pos in pag.fixed_marks:
            current = new_marks.get((link.key, end), link.mark_at(end))
            if current is not ARROW and conflicts is not None:
                conflicts.append((link.key, end))
            return
        current = new_marks.get((link.key, end), link.mark_at(end))
        if current is TAIL:
            if conflicts is not None:
                conflicts.append((link.key, end))
            return
        new_marks[(link.key, end)] = ARROW

    for b in range(pag.n_vars):
        incid = _incidences(pag, b)
        for (l1, e1, d1), (l2, e2, d2) in itertools.combinations(incid, 2):
            a_var = l1.from_var if e1 == DEST_END else l1.to_var
            c_var = l2.from_var if e2 == DEST_END else l2.to_var
            if (a_var, d1) == (c_var, d2):
                continue
            # Signed time gap between A and C: positive = A earlier.
            delta = d1 - d2
            if delta == 0:
                if a_var == c_var:
                    continue
                outer = canonical_key(a_var, 0, c_var)
            elif delta > 0:
                outer = (a_var, delta, c_var)
            else:
                outer = (c_var, -delta, a_var)
            if abs(delta) > pag.tau_max:
                continue  # pair never testable, no sepset information
            if outer in pag.by_key:
                continue  # shielded
            sepset = sepsets.get(outer)
            if sepset is None:
                continue
            # Offset of B relative to the later node of the outer pair; a
            # negative offset means B lies after the pair and can never have
            # been conditioned on.
            if (b, -min(d1, d2)) in sepset:
                continue
            demand_arrow(l1, e1)
            demand_arrow(l2, e2)

    if not new_marks:
        return pag
    links = []
    for link in pag.links:
        fm = new_marks.get((link.key, SOURCE_END), link.from_mark)
        tm = new_marks.get((link.key, DEST_END), link.to_mark)
        links.append(replace(link, from_mark=fm, to_mark=tm))
    return replace(pag, links=tuple(links))


# ---------------------------------------------------------------------------
# MAG enumeration
# ---------------------------------------------------------------------------


def enumerate_mags(pag: TsPag, cap: int = 256) -> tuple[list[Mag], bool]:
    """All completions of the circle marks into valid MAGs, capped.

    Circles are assigned in canonical order (links sorted by key, source end
    before destination end) with tail tried before arrow.  A completion is
    kept when its contemporaneous directed subgraph is acyclic and it has no
    tail-tail contemporaneous link (selection variables are assumed absent).
    Returns the MAGs plus a flag set when the cap truncated the enumeration.
    """
    if cap < 1:
        raise GraphError("cap must be at least 1")
    sorted_links = pag.sorted_links()
    circles: list[tuple[int, int]] = []  # (link index, end)
    for idx, link in enumerate(sorted_links):
        if link.from_mark is CIRCLE:
            circles.append((idx, SOURCE_END))
        if link.to_mark is CIRCLE:
            circles.append((idx, DEST_END))

    n = pag.n_vars
    adj: list[set[int]] = [set() for _ in range(n)]  # contemporaneous directed edges

    def reaches(u: int, v: int) -> bool:
        stack = [u]
        seen = {u}
        while stack:
            w = stack.pop()
            if w == v:
                return True
            for nxt in adj[w]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False

    def directed_edge(link_idx: int, marks: list[Edgemark | None]) -> tuple[int, int] | None:
        link = sorted_links[link_idx]
        if link.lag != 0:
            return None
        fm = marks[2 * link_idx] or link.from_mark
        tm = marks[2 * link_idx + 1] or link.to_mark
        if fm is TAIL and tm is ARROW:
            return (link.from_var, link.to_var)
        if fm is ARROW and tm is TAIL:
            return (link.to_var, link.from_var)
        return None

    # Seed the contemporaneous digraph with the already-determined marks and
    # reject graphs that are invalid before any circle is assigned.
    marks: list[Edgemark | None] = [None] * (2 * len(sorted_links))
    for idx, link in enumerate(sorted_links):
        if link.lag == 0 and link.from_mark is TAIL and link.to_mark is TAIL:
            return [], False
        edge = directed_edge(idx, marks)
        if edge is not None:
            u, v = edge
            if reaches(v, u):
                return [], False
            adj[u].add(v)

    results: list[Mag] = []
    truncated = False
    aborted = False

    def build_mag(assign: list[Edgemark]) -> Mag:
        per_link: dict[int, dict[int, Edgemark]] = {}
        for (link_idx, end), mark in zip(circles, assign):
            per_link.setdefault(link_idx, {})[end] = mark
        links = []
        for idx, link in enumerate(sorted_links):
            ends = per_link.get(idx, {})
            links.append(
                replace(
                    link,
                    from_mark=ends.get(SOURCE_END, link.from_mark),
                    to_mark=ends.get(DEST_END, link.to_mark),
                )
            )
        return Mag(
            n_vars=pag.n_vars,
            tau_max=pag.tau_max,
            links=tuple(links),
            fixed_marks=pag.fixed_marks,
        )

    assign: list[Edgemark] = []
    circle_index = {c: i for i, c in enumerate(circles)}

    def rec(pos: int) -> None:
        """Depth-first assignment in canonical order, pruning invalid prefixes."""
        nonlocal truncated, aborted
        if aborted:
            return
        if pos == len(circles):
            if len(results) < cap:
                results.append(build_mag(assign))
            else:
                # A (cap+1)-th valid completion exists.
                truncated = True
                aborted = True
            return
        link_idx, end = circles[pos]
        link = sorted_links[link_idx]
        other_end = DEST_END if end == SOURCE_END else SOURCE_END
        for mark in (TAIL, ARROW):
            other_mark: Edgemark | None
            if (link_idx, other_end) in circle_index:
                opos = circle_index[(link_idx, other_end)]
                other_mark = assign[opos] if opos < pos else None
            else:
                other_mark = link.mark_at(other_end)
            added_edge: tuple[int, int] | None = None
            if link.lag == 0:
                if mark is TAIL and other_mark is TAIL:
                    continue
                if other_mark is not None:
                    fm = mark if end == SOURCE_END else other_mark
                    tm = mark if end == DEST_END else other_mark
                    if fm is TAIL and tm is ARROW:
                        added_edge = (link.from_var, link.to_var)
                    elif fm is ARROW and tm is TAIL:
                        added_edge = (link.to_var, link.from_var)
                    if added_edge is not None:
                        u, v = added_edge
                        if reaches(v, u):
                            continue
                        adj[u].add(v)
            assign.append(mark)
            rec(pos + 1)
            assign.pop()
            if added_edge is not None:
                adj[added_edge[0]].discard(added_edge[1])
            if aborted:
                return

    if not circles:
        return [build_mag([])], False
    rec(0)
    return results, truncated


# ---------------------------------------------------------------------------
# d-separation oracle (for ground-truth DAGs)
# ---------------------------------------------------------------------------

Node = tuple[int, int]  # (variable, time slice)


def unrolled_edges(dag: TsPag, window: int) -> list[tuple[Node, Node]]:
    """Directed edges of the DAG unrolled over ``window`` time slices."""
    edges = []
    for link in dag.links:
        for t in range(link.lag, window):
            edges.append(((link.from_var, t - link.lag), (link.to_var, t)))
    return edges


def d_separated(
    dag: Dag, x: Node, y: Node, conditioning: Iterable[Node], window: int | None = None
) -> bool:
    """d-separation of two unrolled nodes given a conditioning set.

    Nodes are (variable, time-slice) pairs within a finite window of at
    least 2 * (tau_max + 1) slices.  Implemented as the linear-time
    reachability procedure over (node, entering-direction) states; the test
    suite checks it against explicit path enumeration.
    """
    if window is None:
        window = 2 * (dag.tau_max + 1)
    if window < 2 * (dag.tau_max + 1):
        raise GraphError("window must cover at least 2 * (tau_max + 1) slices")
    cond = frozenset(conditioning)
    if x == y:
        raise GraphError("x and y must differ")
    if x in cond or y in cond:
        raise GraphError("x and y must not be conditioned on")

    children: dict[Node, list[Node]] = {}
    parents: dict[Node, list[Node]] = {}
    for u, v in unrolled_edges(dag, window):
        children.setdefault(u, []).append(v)
        parents.setdefault(v, []).append(u)

    # Ancestor closure of the conditioning set.
    anc = set(cond)
    stack = list(cond)
    while stack:
        v = stack.pop()
        for p in parents.get(v, ()):
            if p not in anc:
                anc.add(p)
                stack.append(p)

    # States (node, direction); direction "up" = reached from a child edge,
    # "down" = reached from a parent edge.
    start = (x, "up")
    seen = {start}
    queue = deque([start])
    while queue:
        node, direction = queue.popleft()
        if node == y and node != x:
            return False
        if direction == "up" and node not in cond:
            for p in parents.get(node, ()):
                if (p, "up") not in seen:
                    seen.add((p, "up"))
                    queue.append((p, "up"))
            for c in children.get(node, ()):
                if (c, "down") not in seen:
                    seen.add((c, "down"))
                    queue.append((c, "down"))
        elif direction == "down":
            if node not in cond:
                for c in children.get(node, ()):
                    if (c, "down") not in seen:
                        seen.add((c, "down"))
                        queue.append((c, "down"))
            if node in anc:
                for p in parents.get(node, ()):
                    if (p, "up") not in seen:
                        seen.add((p, "up"))
                        queue.append((p, "up"))
    return True
