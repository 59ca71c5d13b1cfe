"""Capacitated flow feasibility on small directed graphs.

Decides whether node imbalances can be routed through arcs with
per-direction capacity caps, via Edmonds-Karp max-flow from a super
source to a super sink.  When routing is impossible the blocking cut
(the saturated node set reachable from the super source) is returned as
a witness.

Used for: infeasibility certificates of convex-flow problems, and the
exact splitting of flow across parallel lossless arcs inside the
nomination validator.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Hashable, Mapping, Optional, Sequence

Node = Hashable


@dataclass(frozen=True)
class FlowArc:
    """Directed routing capability tail->head with caps per direction.

    cap_fwd bounds flow tail->head, cap_bwd bounds head->tail; a
    bidirectional arc just uses two positive caps.
    """

    key: Hashable
    tail: Node
    head: Node
    cap_fwd: float
    cap_bwd: float = 0.0


@dataclass
class RoutingResult:
    feasible: bool
    #: signed flow per arc key (positive = tail->head)
    flows: dict
    #: total imbalance that could not be routed (0 when feasible)
    deficit: float
    #: witness: nodes on the source side of the blocking cut, or None
    cut: Optional[frozenset] = None


def route_demands(arcs: Sequence[FlowArc], demands: Mapping[Node, float],
                  tol: float = 1e-9) -> RoutingResult:
    """Route demands (positive = sink, negative = source) through arcs.

    Returns feasible=False with the min-cut witness when total supply
    cannot reach the sinks under the caps.  Demands must sum to ~0.
    """
    scale = max((abs(v) for v in demands.values()), default=0.0)
    if scale == 0.0:
        return RoutingResult(True, {a.key: 0.0 for a in arcs}, 0.0)

    nodes = set(demands)
    for a in arcs:
        nodes.add(a.tail)
        nodes.add(a.head)
    idx = {v: i for i, v in enumerate(sorted(nodes, key=repr))}
    n = len(idx)
    src, snk = n, n + 1

    # adjacency with residual capacities; arc i and i^1 are a residual pair
    graph: list[list[int]] = [[] for _ in range(n + 2)]
    cap: list[float] = []
    to: list[int] = []

    def add_edge(u: int, v: int, c_uv: float, c_vu: float = 0.0) -> int:
        e = len(cap)
        graph[u].append(e)
        to.append(v)
        cap.append(c_uv)
        graph[v].append(e + 1)
        to.append(u)
        cap.append(c_vu)
        return e

    arc_edge: dict = {}
    for a in arcs:
        arc_edge[a.key] = (add_edge(idx[a.tail], idx[a.head],
                                    max(a.cap_fwd, 0.0), max(a.cap_bwd, 0.0)),
                           max(a.cap_fwd, 0.0))

    need = 0.0
    for v, d in demands.items():
        if d < 0.0:
            add_edge(src, idx[v], -d)
            need += -d
        elif d > 0.0:
            add_edge(idx[v], snk, d)

    # Edmonds-Karp
    total = 0.0
    eps = tol * max(scale, 1.0)
    while True:
        parent_edge = [-1] * (n + 2)
        parent_edge[src] = -2
        queue = deque([src])
        while queue:
            u = queue.popleft()
            if u == snk:
                break
            for e in graph[u]:
                v = to[e]
                if parent_edge[v] == -1 and cap[e] > eps:
                    parent_edge[v] = e
                    queue.append(v)
        if parent_edge[snk] == -1:
            break
        # bottleneck along the path
        push = float("inf")
        v = snk
        while v != src:
            e = parent_edge[v]
            push = min(push, cap[e])
            v = to[e ^ 1]
        v = snk
        while v != src:
            e = parent_edge[v]
            cap[e] -= push
            cap[e ^ 1] += push
            v = to[e ^ 1]
        total += push

    flows = {}
    for a in arcs:
        e, c_fwd = arc_edge[a.key]
        flows[a.key] = c_fwd - cap[e]

    deficit = need - total
    if deficit <= tol * max(scale, 1.0):
        return RoutingResult(True, flows, 0.0)

    # witness: residual-reachable node set from the super source
    seen = [False] * (n + 2)
    seen[src] = True
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for e in graph[u]:
            v = to[e]
            if not seen[v] and cap[e] > eps:
                seen[v] = True
                queue.append(v)
    rev = {i: v for v, i in idx.items()}
    cut = frozenset(rev[i] for i in range(n) if seen[i])
    return RoutingResult(False, flows, deficit, cut)
