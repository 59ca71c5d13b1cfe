"""Convex separable flow solver and its optimality certificates.

The flow problem minimizes  sum_e  Phi_e(q_e+) + Phi_e(q_e-)  with
Phi_e(q) = alpha_e * q^3 / 3 over directional flows obeying node
balance and per-direction caps.  Its KKT points coincide with
solutions of the network analysis equations

    pi_v - pi_w = sgn(q_e) * phi_e(|q_e|),      phi_e(q) = alpha_e q^2
    inflow(v) - outflow(v) = d_v

on passive networks: node balance multipliers double as potentials.
The solver therefore both computes flows and certifies them, and
`recover_potentials` turns a valid certificate into potentials (exact
whenever no capacity bound is active, which is the regime the
equivalence is stated for).

An independent damped-Newton oracle on node potentials
(`newton_oracle`) solves the same analysis equations directly and is
used to cross-check the solver; the two routes share no code beyond
the data types.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import barrier
from .maxflow import FlowArc, route_demands


class FlowError(Exception):
    """Base class for flow-solver failures."""


class InfeasibleFlow(FlowError):
    """No flow satisfies balance under the caps.

    When the blocking bottleneck is detected, `cut` holds the node set
    on the supply side of a saturated cut and `deficit` the unroutable
    volume.
    """

    def __init__(self, msg: str, cut: Optional[frozenset] = None,
                 deficit: float = 0.0):
        super().__init__(msg)
        self.cut = cut
        self.deficit = deficit


class IterationLimit(FlowError):
    """Solver failed to reach the requested tolerance."""


class NonConvergence(FlowError):
    """Newton oracle failed to converge."""


@dataclass(frozen=True)
class FlowEdge:
    """One arc of a convex flow problem.

    alpha >= 0 (zero for lossless arcs); cap_plus bounds tail->head
    flow, cap_minus bounds head->tail flow (0 makes the arc one-way).
    """

    key: str
    tail: str
    head: str
    alpha: float
    cap_plus: float = math.inf
    cap_minus: float = math.inf

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValueError(f"edge {self.key}: alpha must be >= 0")
        if self.cap_plus < 0 or self.cap_minus < 0:
            raise ValueError(f"edge {self.key}: caps must be >= 0")
        if self.cap_plus == 0 and self.cap_minus == 0:
            raise ValueError(f"edge {self.key}: at least one direction must be open")


@dataclass(frozen=True)
class ConvexFlowProblem:
    node_ids: tuple[str, ...]
    demands: Mapping[str, float]
    edges: tuple[FlowEdge, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "demands", dict(self.demands))
        known = set(self.node_ids)
        for e in self.edges:
            if e.tail not in known or e.head not in known:
                raise ValueError(f"edge {e.key}: endpoint not a known node")
        total = sum(self.demands.values())
        scale = max((abs(v) for v in self.demands.values()), default=0.0)
        if abs(total) > 1e-9 * max(scale, 1.0):
            raise ValueError(f"demands do not balance: sum = {total}")

    def demand(self, v: str) -> float:
        return self.demands.get(v, 0.0)

    @property
    def scale(self) -> float:
        s = max((abs(v) for v in self.demands.values()), default=0.0)
        return max(s, 1.0)


@dataclass
class KktCertificate:
    """First-order certificate of a convex-flow solution.

    lam holds the balance multipliers (anchored to 0 at the
    lexicographically smallest node of each connected component);
    mu_plus / mu_minus are the lower-bound multipliers in the sense of
    the stationarity conditions, nu_plus / nu_minus the cap
    multipliers.  Residuals are recomputed with plain arithmetic,
    independently of the solver's internals.
    """

    problem: ConvexFlowProblem
    q_plus: dict[str, float]
    q_minus: dict[str, float]
    lam: dict[str, float]
    mu_plus: dict[str, float]
    mu_minus: dict[str, float]
    nu_plus: dict[str, float] = field(default_factory=dict)
    nu_minus: dict[str, float] = field(default_factory=dict)
    stationarity_residual: float = math.inf
    complementarity_residual: float = math.inf
    balance_residual: float = math.inf

    def refresh_residuals(self) -> "KktCertificate":
        p = self.problem
        stat = 0.0
        comp = 0.0
        for e in p.edges:
            qp, qm = self.q_plus[e.key], self.q_minus[e.key]
            mp, mm = self.mu_plus[e.key], self.mu_minus[e.key]
            np_, nm = self.nu_plus.get(e.key, 0.0), self.nu_minus.get(e.key, 0.0)
            dlam = self.lam[e.tail] - self.lam[e.head]
            stat = max(stat, abs(e.alpha * qp * qp - mp + np_ - dlam))
            stat = max(stat, abs(e.alpha * qm * qm - mm + nm + dlam))
            comp = max(comp, abs(qp * mp), abs(qm * mm))
            if math.isfinite(e.cap_plus):
                comp = max(comp, abs((e.cap_plus - qp) * np_))
            if math.isfinite(e.cap_minus):
                comp = max(comp, abs((e.cap_minus - qm) * nm))
        bal = 0.0
        net = {v: 0.0 for v in p.node_ids}
        for e in p.edges:
            q = self.q_plus[e.key] - self.q_minus[e.key]
            net[e.head] += q
            net[e.tail] -= q
        for v in p.node_ids:
            bal = max(bal, abs(net[v] - p.demand(v)))
        self.stationarity_residual = stat
        self.complementarity_residual = comp
        self.balance_residual = bal
        return self

    def valid(self, eps: float) -> bool:
        return (self.stationarity_residual <= eps
                and self.complementarity_residual <= eps
                and self.balance_residual <= eps)

    def signed_flows(self) -> dict[str, float]:
        return {k: self.q_plus[k] - self.q_minus[k] for k in self.q_plus}


@dataclass(frozen=True)
class PotentialAssignment:
    """Node potentials plus signed arc flows (bounds not checked here;
    callers verify them downstream)."""

    pi: Mapping[str, float]
    q: Mapping[str, float]


# ---------------------------------------------------------------------------
# components and feasibility
# ---------------------------------------------------------------------------

def _components(problem: ConvexFlowProblem) -> list[list[str]]:
    adj: dict[str, set[str]] = {v: set() for v in problem.node_ids}
    for e in problem.edges:
        adj[e.tail].add(e.head)
        adj[e.head].add(e.tail)
    seen: set[str] = set()
    comps = []
    for v in sorted(problem.node_ids):
        if v in seen:
            continue
        comp = []
        stack = [v]
        seen.add(v)
        while stack:
            u = stack.pop()
            comp.append(u)
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        comps.append(sorted(comp))
    return comps


def check_routable(problem: ConvexFlowProblem) -> None:
    """Raise InfeasibleFlow (with a cut witness) if demands cannot be
    routed under the caps."""
    arcs = [FlowArc(e.key, e.tail, e.head, e.cap_plus, e.cap_minus)
            for e in problem.edges]
    demands = {v: problem.demand(v) for v in problem.node_ids}
    res = route_demands(arcs, demands)
    if not res.feasible:
        raise InfeasibleFlow(
            f"unroutable demand: deficit {res.deficit:.6g}",
            cut=res.cut, deficit=res.deficit)


# ---------------------------------------------------------------------------
# the convex solver
# ---------------------------------------------------------------------------

def solve_convex_flow(problem: ConvexFlowProblem,
                      eps_feas: Optional[float] = None
                      ) -> tuple[dict[str, float], KktCertificate]:
    """Solve the convex flow program; return signed flows and a KKT
    certificate.

    Raises InfeasibleFlow when balance is unreachable under the caps
    (with a cut-set witness when detectable) and IterationLimit when
    the barrier stalls before certificate validity.
    """
    scale = problem.scale
    if eps_feas is None:
        eps_feas = 1e-8 * max(1.0, scale ** 2)
    check_routable(problem)

    # the total transported volume bounds some optimal flow arc-wise
    # (cycle-free decomposition), so boxing every arc there keeps the
    # optimum while making the feasibility phase coercive
    volume = sum(max(d, 0.0) for d in problem.demands.values()) + 1.0

    b = barrier.ProgramBuilder()
    for e in problem.edges:
        b.var(f"qp:{e.key}", 0.0, min(e.cap_plus, volume))
        b.var(f"qm:{e.key}", 0.0, min(e.cap_minus, volume))
        if e.alpha > 0.0:
            b.add_cubic(b[f"qp:{e.key}"], e.alpha / 3.0)
            b.add_cubic(b[f"qm:{e.key}"], e.alpha / 3.0)

    comps = _components(problem)
    anchors = {comp[0] for comp in comps}
    for comp in comps:
        total = sum(problem.demand(v) for v in comp)
        if abs(total) > 1e-9 * scale:
            raise InfeasibleFlow(
                f"component containing {comp[0]} has net demand {total:.6g}",
                cut=frozenset(comp), deficit=abs(total))
    row_nodes = [v for v in sorted(problem.node_ids) if v not in anchors]
    for v in row_nodes:
        coeffs: dict[int, float] = {}
        for e in problem.edges:
            if e.head == v:
                coeffs[b[f"qp:{e.key}"]] = coeffs.get(b[f"qp:{e.key}"], 0.0) + 1.0
                coeffs[b[f"qm:{e.key}"]] = coeffs.get(b[f"qm:{e.key}"], 0.0) - 1.0
            if e.tail == v:
                coeffs[b[f"qp:{e.key}"]] = coeffs.get(b[f"qp:{e.key}"], 0.0) - 1.0
                coeffs[b[f"qm:{e.key}"]] = coeffs.get(b[f"qm:{e.key}"], 0.0) + 1.0
        b.add_eq(coeffs, problem.demand(v))

    program = b.build()
    sol = barrier.solve(program, gap_tol=1e-10)
    if sol.status == "infeasible":
        raise InfeasibleFlow("barrier phase 1 found no interior point "
                             "(capacities may admit only boundary flows)")
    if sol.status != "optimal":
        raise IterationLimit(f"barrier stalled at gap {sol.gap:.3g}")

    eff_caps = {e.key: (min(e.cap_plus, volume), min(e.cap_minus, volume))
                for e in problem.edges}
    cert = _certificate_from_solution(problem, b, sol, row_nodes, eff_caps)
    cert.refresh_residuals()
    if not cert.valid(eps_feas):
        raise IterationLimit(
            f"certificate residuals exceed {eps_feas:.3g}: "
            f"stat={cert.stationarity_residual:.3g} "
            f"comp={cert.complementarity_residual:.3g} "
            f"bal={cert.balance_residual:.3g}")
    return cert.signed_flows(), cert


def _certificate_from_solution(problem, b, sol, row_nodes, eff_caps
                               ) -> KktCertificate:
    # cancel the residual two-sided flow the interior point leaves behind;
    # the difference (and with it node balance) is preserved exactly
    q_plus: dict[str, float] = {}
    q_minus: dict[str, float] = {}
    for e in problem.edges:
        qp = float(sol.x[b[f"qp:{e.key}"]])
        qm = float(sol.x[b[f"qm:{e.key}"]])
        shift = min(qp, qm)
        q_plus[e.key] = qp - shift
        q_minus[e.key] = qm - shift

    lam_ip = {v: 0.0 for v in problem.node_ids}
    for i, v in enumerate(row_nodes):
        lam_ip[v] = float(sol.eq_dual[i])

    # purify lam: every edge whose flow is strictly inside its caps pins
    # the multiplier difference to the drop law exactly (zero-flow edges
    # pin it to 0); integrate those over a spanning forest.  Saturated
    # edges only need an inequality, covered by the cap multiplier, so
    # purification across them keeps the interior-point offset.
    ztol = 1e-7 * problem.scale
    pinned: dict[str, list[tuple[str, float]]] = {v: [] for v in problem.node_ids}
    for e in problem.edges:
        q = q_plus[e.key] - q_minus[e.key]
        if q > ztol and e.cap_plus - q > ztol:
            drop = e.alpha * q * q
        elif q < -ztol and e.cap_minus + q > ztol:
            drop = -e.alpha * q * q
        elif abs(q) <= ztol:
            drop = 0.0
        else:
            continue  # saturated: no equality pin
        pinned[e.tail].append((e.head, drop))   # lam_tail - lam_head = drop
        pinned[e.head].append((e.tail, -drop))

    lam = dict(lam_ip)
    seen: set[str] = set()
    for start in sorted(problem.node_ids):
        if start in seen:
            continue
        lam[start] = lam_ip[start]
        seen.add(start)
        stack = [start]
        while stack:
            u = stack.pop()
            for w, drop in pinned[u]:
                if w not in seen:
                    seen.add(w)
                    lam[w] = lam[u] - drop
                    stack.append(w)

    # renormalize: smallest node of each graph component sits at 0
    for comp in _components(problem):
        off = lam[comp[0]]
        for v in comp:
            lam[v] -= off

    # bound multipliers: recover from stationarity so that the pair
    # (mu, nu) is exact for the reported flows; clip at zero
    mu_plus: dict[str, float] = {}
    mu_minus: dict[str, float] = {}
    nu_plus: dict[str, float] = {}
    nu_minus: dict[str, float] = {}
    for e in problem.edges:
        dlam = lam[e.tail] - lam[e.head]
        # phi(q+) - mu+ + nu+ - dlam = 0
        r_p = e.alpha * q_plus[e.key] ** 2 - dlam
        mu_plus[e.key] = max(0.0, r_p)
        nu_plus[e.key] = max(0.0, -r_p)
        r_m = e.alpha * q_minus[e.key] ** 2 + dlam
        mu_minus[e.key] = max(0.0, r_m)
        nu_minus[e.key] = max(0.0, -r_m)
    return KktCertificate(
        problem=problem, q_plus=q_plus, q_minus=q_minus, lam=lam,
        mu_plus=mu_plus, mu_minus=mu_minus,
        nu_plus=nu_plus, nu_minus=nu_minus)


def recover_potentials(cert: KktCertificate,
                       eps_feas: Optional[float] = None) -> PotentialAssignment:
    """Potentials from a valid certificate: pi_v = lam_v, q = q+ - q-.

    Satisfies the network analysis equations whenever no cap multiplier
    is active (the regime of the master/oracle equivalence).
    """
    if eps_feas is None:
        eps_feas = 1e-8 * max(1.0, cert.problem.scale ** 2)
    cert.refresh_residuals()
    if not cert.valid(eps_feas):
        raise FlowError("certificate is not valid; cannot recover potentials")
    return PotentialAssignment(pi=dict(cert.lam), q=cert.signed_flows())


def network_analysis_residual(assignment: PotentialAssignment,
                              problem: ConvexFlowProblem) -> float:
    """Max violation of the potential-drop and balance equations."""
    pi = assignment.pi
    q = assignment.q
    worst = 0.0
    net = {v: 0.0 for v in problem.node_ids}
    for e in problem.edges:
        qe = q[e.key]
        drop = pi[e.tail] - pi[e.head]
        law = math.copysign(e.alpha * qe * qe, qe) if qe != 0.0 else 0.0
        worst = max(worst, abs(drop - law))
        net[e.head] += qe
        net[e.tail] -= qe
    for v in problem.node_ids:
        worst = max(worst, abs(net[v] - problem.demand(v)))
    return worst


# ---------------------------------------------------------------------------
# independent oracle: damped Newton on node potentials
# ---------------------------------------------------------------------------

def newton_oracle(problem: ConvexFlowProblem, tol: float = 1e-10,
                  max_iter: int = 400) -> PotentialAssignment:
    """Solve the network analysis equations directly by damped Newton
    on node potentials with a smoothing continuation.

    Requires every edge to carry a positive loss coefficient (passive
    pipes/resistors).  Capacities are ignored: the analysis equations
    have a unique flow solution which callers vet against caps.
    """
    for e in problem.edges:
        if e.alpha <= 0.0:
            raise ValueError("newton_oracle requires alpha > 0 on all edges")

    nodes = sorted(problem.node_ids)
    index = {v: i for i, v in enumerate(nodes)}
    comps = _components(problem)
    for comp in comps:
        total = sum(problem.demand(v) for v in comp)
        if abs(total) > 1e-9 * problem.scale:
            raise InfeasibleFlow(
                f"component containing {comp[0]} has net demand {total:.6g}")
    anchors = {index[comp[0]] for comp in comps}
    free = [i for i in range(len(nodes)) if i not in anchors]
    if not free:
        return PotentialAssignment(pi={v: 0.0 for v in nodes},
                                   q={e.key: 0.0 for e in problem.edges})
    free_pos = {i: k for k, i in enumerate(free)}

    d = np.array([problem.demand(v) for v in nodes])
    scale = problem.scale
    tails = np.array([index[e.tail] for e in problem.edges])
    heads = np.array([index[e.head] for e in problem.edges])
    alphas = np.array([e.alpha for e in problem.edges])

    def q_of(delta: np.ndarray, eps: float) -> np.ndarray:
        return delta / np.sqrt(alphas * (np.abs(delta) + eps))

    def dq_of(delta: np.ndarray, eps: float) -> np.ndarray:
        a = np.abs(delta)
        return (a / 2.0 + eps) / (np.sqrt(alphas) * (a + eps) ** 1.5)

    def residual(pi: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
        delta = pi[tails] - pi[heads]
        q = q_of(delta, eps)
        net = np.zeros(len(nodes))
        np.add.at(net, heads, q)
        np.subtract.at(net, tails, q)
        return net - d, q

    pi = np.zeros(len(nodes))
    eps_stages = [1e-1 * scale ** 2, 1e-3, 1e-6, 1e-9, 1e-12, 1e-16]
    eps_stages = [s if i == 0 else eps_stages[0] * s
                  for i, s in enumerate(eps_stages)]
    total_iters = 0
    for eps in eps_stages:
        for _ in range(max_iter):
            total_iters += 1
            F, _ = residual(pi, eps)
            Ff = F[free]
            if np.linalg.norm(Ff, np.inf) <= tol * scale:
                break
            delta = pi[tails] - pi[heads]
            wgt = dq_of(delta, eps)
            n_free = len(free)
            L = np.zeros((n_free, n_free))
            for k in range(len(problem.edges)):
                i, j, w = tails[k], heads[k], wgt[k]
                if i in free_pos:
                    L[free_pos[i], free_pos[i]] += w
                if j in free_pos:
                    L[free_pos[j], free_pos[j]] += w
                if i in free_pos and j in free_pos:
                    L[free_pos[i], free_pos[j]] -= w
                    L[free_pos[j], free_pos[i]] -= w
            try:
                step = np.linalg.solve(L + 1e-14 * np.eye(n_free), Ff)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(L, Ff, rcond=None)[0]
            # damped line search on the residual norm
            base = float(np.linalg.norm(Ff))
            alpha_step = 1.0
            while alpha_step > 1e-12:
                trial = pi.copy()
                trial[free] += alpha_step * step
                Ft, _ = residual(trial, eps)
                if float(np.linalg.norm(Ft[free])) < base * (1.0 - 1e-4 * alpha_step):
                    pi = trial
                    break
                alpha_step *= 0.5
            else:
                break
        if total_iters > max_iter * len(eps_stages):
            break

    F, q = residual(pi, eps_stages[-1])
    if np.linalg.norm(F[free], np.inf) > tol * scale * 10.0:
        raise NonConvergence(
            f"newton oracle residual {np.linalg.norm(F[free], np.inf):.3g}")
    return PotentialAssignment(
        pi={v: float(pi[index[v]]) for v in nodes},
        q={e.key: float(q[k]) for k, e in enumerate(problem.edges)})
