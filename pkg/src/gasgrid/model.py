"""Domain types for gas transport networks and the coefficient calculators.

Conventions used throughout the package:

* Potentials are squared pressures (bar^2).  A node carries a potential
  box [pi_min, pi_max]; the pressure is recovered as sqrt(potential).
* Demands d_v are volumetric flowrates: positive at sinks, negative at
  sources, zero at in-nodes.  A nomination is balanced, sum(d_v) = 0.
* Pipe lengths are metres, diameters millimetres.
* A pipe's candidate diameter i has a potential-loss coefficient
  alpha_i, a flow cap q_max_i and a construction cost f_i.  Larger
  diameters have strictly smaller alpha, strictly larger q_max and
  strictly larger cost.

All types are immutable after construction and safe to share across
threads; the calculators are pure functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence, Union


# Construction-cost curve for a pipe of length l (m) and diameter D (mm):
#   cost = l * (COST_COEFF * D**COST_EXPONENT + COST_BASE)
COST_COEFF = 1.04081e-6
COST_EXPONENT = 2.5
COST_BASE = 11.2155


class ModelError(ValueError):
    """Invalid model data (bad invariant, unknown reference, ...)."""


# ---------------------------------------------------------------------------
# coefficient calculators
# ---------------------------------------------------------------------------

def pipe_cost(length: float, diameter: float) -> float:
    """Construction cost of a pipe: l * (1.04081e-6 * D^2.5 + 11.2155).

    Strictly increasing in the diameter; the additive base term makes
    even a zero-diameter stub cost l * 11.2155.
    """
    if length <= 0:
        raise ModelError(f"pipe length must be positive, got {length}")
    if diameter < 0:
        raise ModelError(f"pipe diameter must be nonnegative, got {diameter}")
    return length * (COST_COEFF * diameter ** COST_EXPONENT + COST_BASE)


def loss_coefficient(length: float, diameter: float, c_alpha: float = 1.0) -> float:
    """Potential-loss coefficient alpha = c_alpha * l / D^5.

    Steady-state loss law: the drop over a pipe is alpha * |q| * q, with
    alpha linear in length and falling with the fifth power of the
    diameter.  c_alpha bundles gas and material properties.
    """
    if length <= 0 or c_alpha <= 0:
        raise ModelError("length and c_alpha must be positive")
    if diameter <= 0:
        raise ModelError(f"loss coefficient needs a positive diameter, got {diameter}")
    return c_alpha * length / diameter ** 5


def max_flow(diameter: float, c_q: float = 1.0) -> float:
    """Flow cap proportional to the cross-sectional area: c_q * pi * D^2 / 4."""
    if diameter < 0:
        raise ModelError(f"diameter must be nonnegative, got {diameter}")
    return c_q * math.pi * diameter ** 2 / 4.0


def potential_of(pressure: float) -> float:
    """Potential from pressure, pi = p^2."""
    if pressure < 0:
        raise ModelError("pressure must be nonnegative")
    return pressure * pressure


def pressure_of(potential: float) -> float:
    """Pressure from potential, p = sqrt(pi)."""
    if potential < 0:
        raise ModelError("potential must be nonnegative")
    return math.sqrt(potential)


# ---------------------------------------------------------------------------
# nodes and arcs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Node:
    """A network node with demand and a potential box."""

    id: str
    demand: float = 0.0
    pi_min: float = 0.0
    pi_max: float = math.inf

    def __post_init__(self) -> None:
        if self.pi_min < 0:
            raise ModelError(f"node {self.id}: pi_min must be >= 0")
        if self.pi_min > self.pi_max:
            raise ModelError(f"node {self.id}: pi_min > pi_max")


@dataclass(frozen=True)
class PipeCandidate:
    """One discrete diameter choice for a pipe."""

    diameter: float
    alpha: float
    q_max: float
    cost: float

    def __post_init__(self) -> None:
        if self.diameter <= 0 or self.alpha <= 0 or self.q_max <= 0 or self.cost <= 0:
            raise ModelError("pipe candidate fields must all be positive")


def make_candidate(length: float, diameter: float,
                   c_alpha: float = 1.0, c_q: float = 1.0) -> PipeCandidate:
    """Candidate with alpha, q_max and cost derived from the diameter."""
    return PipeCandidate(
        diameter=diameter,
        alpha=loss_coefficient(length, diameter, c_alpha),
        q_max=max_flow(diameter, c_q),
        cost=pipe_cost(length, diameter),
    )


class ArcKind(str, Enum):
    PIPE = "pipe"
    SHORT_PIPE = "short_pipe"
    RESISTOR = "resistor"
    COMPRESSOR = "compressor"
    VALVE = "valve"
    CONTROL_VALVE = "control_valve"


#: Kinds with an on/off state variable.
ACTIVE_KINDS = frozenset({ArcKind.COMPRESSOR, ArcKind.VALVE, ArcKind.CONTROL_VALVE})
#: Kinds that allow flow in one direction only (tail to head).
ONE_DIRECTIONAL_KINDS = frozenset({ArcKind.COMPRESSOR, ArcKind.CONTROL_VALVE})


@dataclass(frozen=True)
class Arc:
    """A typed network component between two nodes.

    The kind decides which fields are meaningful:

    * pipe: length, candidates (nonempty), optional base_diameter
    * short_pipe: q_max (lossless, potential equality)
    * resistor: alpha, q_max (fixed loss law, no diameter choice)
    * compressor: kappa_min = 1 <= kappa_max, q_max, optional on-state
      extra bounds pi_min_on (at the tail) and pi_max_on (at the head)
    * valve: q_max (open: potential equality; closed: no flow)
    * control_valve: 0 < kappa_min, kappa_max <= 1, q_max, optional
      on-state extra bounds as for compressors
    """

    id: str
    kind: ArcKind
    tail: str
    head: str
    length: float = 0.0
    candidates: tuple[PipeCandidate, ...] = ()
    base_diameter: Optional[float] = None
    alpha: float = 0.0
    q_max: float = math.inf
    kappa_min: float = 1.0
    kappa_max: float = 1.0
    pi_min_on: Optional[float] = None
    pi_max_on: Optional[float] = None

    def __post_init__(self) -> None:
        k = self.kind
        if self.tail == self.head:
            raise ModelError(f"arc {self.id}: tail and head coincide")
        if k is ArcKind.PIPE:
            if not self.candidates:
                raise ModelError(f"pipe {self.id}: empty candidate list")
            if self.length <= 0:
                raise ModelError(f"pipe {self.id}: length must be positive")
            _check_tradeoff(self.id, self.candidates)
        elif k is ArcKind.SHORT_PIPE or k is ArcKind.VALVE:
            if not self.q_max > 0:
                raise ModelError(f"{k.value} {self.id}: q_max must be positive")
        elif k is ArcKind.RESISTOR:
            if not self.q_max > 0 or self.alpha <= 0:
                raise ModelError(f"resistor {self.id}: needs alpha > 0 and q_max > 0")
        elif k is ArcKind.COMPRESSOR:
            if self.kappa_min != 1.0 or self.kappa_max < 1.0:
                raise ModelError(
                    f"compressor {self.id}: kappa_min must be 1 and kappa_max >= 1")
            if not self.q_max > 0:
                raise ModelError(f"compressor {self.id}: q_max must be positive")
        elif k is ArcKind.CONTROL_VALVE:
            if not (0.0 < self.kappa_min and self.kappa_max <= 1.0):
                raise ModelError(
                    f"control valve {self.id}: needs 0 < kappa_min and kappa_max <= 1")
            if self.kappa_min > self.kappa_max:
                raise ModelError(f"control valve {self.id}: kappa_min > kappa_max")
            if not self.q_max > 0:
                raise ModelError(f"control valve {self.id}: q_max must be positive")

    @property
    def is_active(self) -> bool:
        return self.kind in ACTIVE_KINDS

    @property
    def is_one_directional(self) -> bool:
        return self.kind in ONE_DIRECTIONAL_KINDS


def _check_tradeoff(arc_id: str, candidates: Sequence[PipeCandidate]) -> None:
    """Within one pipe, bigger diameter means smaller alpha, bigger cap/cost."""
    by_d = sorted(candidates, key=lambda c: c.diameter)
    for small, large in zip(by_d, by_d[1:]):
        ok = (large.diameter > small.diameter
              and large.alpha < small.alpha
              and large.q_max > small.q_max
              and large.cost > small.cost)
        if not ok:
            raise ModelError(
                f"pipe {arc_id}: candidates violate the diameter trade-off "
                f"(alpha anti-monotone, q_max and cost monotone)")


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Network:
    """Directed graph of typed arcs over potential-bounded nodes."""

    nodes: tuple[Node, ...]
    arcs: tuple[Arc, ...]

    def __post_init__(self) -> None:
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ModelError("duplicate node ids")
        aids = [a.id for a in self.arcs]
        if len(set(aids)) != len(aids):
            raise ModelError("duplicate arc ids")
        known = set(ids)
        for a in self.arcs:
            if a.tail not in known or a.head not in known:
                raise ModelError(f"arc {a.id}: endpoint not a known node")

    @cached_property
    def node_by_id(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def arc_by_id(self) -> dict[str, Arc]:
        return {a.id: a for a in self.arcs}

    def _of_kind(self, kind: ArcKind) -> tuple[Arc, ...]:
        return tuple(a for a in self.arcs if a.kind is kind)

    @cached_property
    def pipes(self) -> tuple[Arc, ...]:
        return self._of_kind(ArcKind.PIPE)

    @cached_property
    def short_pipes(self) -> tuple[Arc, ...]:
        return self._of_kind(ArcKind.SHORT_PIPE)

    @cached_property
    def resistors(self) -> tuple[Arc, ...]:
        return self._of_kind(ArcKind.RESISTOR)

    @cached_property
    def compressors(self) -> tuple[Arc, ...]:
        return self._of_kind(ArcKind.COMPRESSOR)

    @cached_property
    def valves(self) -> tuple[Arc, ...]:
        return self._of_kind(ArcKind.VALVE)

    @cached_property
    def control_valves(self) -> tuple[Arc, ...]:
        return self._of_kind(ArcKind.CONTROL_VALVE)

    @cached_property
    def active_arcs(self) -> tuple[Arc, ...]:
        return tuple(a for a in self.arcs if a.is_active)

    @cached_property
    def arcs_in(self) -> dict[str, tuple[Arc, ...]]:
        acc: dict[str, list[Arc]] = {n.id: [] for n in self.nodes}
        for a in self.arcs:
            acc[a.head].append(a)
        return {k: tuple(v) for k, v in acc.items()}

    @cached_property
    def arcs_out(self) -> dict[str, tuple[Arc, ...]]:
        acc: dict[str, list[Arc]] = {n.id: [] for n in self.nodes}
        for a in self.arcs:
            acc[a.tail].append(a)
        return {k: tuple(v) for k, v in acc.items()}

    def base_nomination(self) -> "Nomination":
        return Nomination({n.id: n.demand for n in self.nodes})

    def with_nodes(self, nodes: Iterable[Node]) -> "Network":
        return replace(self, nodes=tuple(nodes))


# ---------------------------------------------------------------------------
# nominations
# ---------------------------------------------------------------------------

#: Relative tolerance on the nomination balance check.
BALANCE_RTOL = 1e-9


@dataclass(frozen=True)
class Nomination:
    """Node-indexed supply/demand vector, balanced to zero."""

    demands: Mapping[str, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "demands", dict(self.demands))

    def check_balance(self) -> None:
        vals = list(self.demands.values())
        scale = max((abs(v) for v in vals), default=0.0)
        if abs(sum(vals)) > BALANCE_RTOL * max(scale, 1.0):
            raise ModelError(
                f"unbalanced nomination: sum(d) = {sum(vals)!r}")

    def scaled(self, s: float) -> "Nomination":
        if s <= 0:
            raise ModelError(f"stress multiplier must be positive, got {s}")
        return Nomination({k: s * v for k, v in self.demands.items()})

    def __getitem__(self, node_id: str) -> float:
        return self.demands.get(node_id, 0.0)


# ---------------------------------------------------------------------------
# design assignments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DesignAssignment:
    """The master's decision vector: one candidate index per pipe plus an
    on/off state per active element.  Also the object a no-good cut
    excludes."""

    diameter_choice: Mapping[str, int]
    active_state: Mapping[str, bool] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "diameter_choice", dict(self.diameter_choice))
        object.__setattr__(self, "active_state", dict(self.active_state))

    def check_complete(self, network: Network, states_required: bool = True) -> None:
        for p in network.pipes:
            i = self.diameter_choice.get(p.id)
            if i is None:
                raise ModelError(f"pipe {p.id}: no diameter choice assigned")
            if not 0 <= i < len(p.candidates):
                raise ModelError(f"pipe {p.id}: candidate index {i} out of range")
        if states_required:
            for a in network.active_arcs:
                if a.id not in self.active_state:
                    raise ModelError(f"active arc {a.id}: no state assigned")

    def key(self) -> tuple:
        """Canonical hashable identity, independent of insertion order."""
        return (tuple(sorted(self.diameter_choice.items())),
                tuple(sorted(self.active_state.items())))


def effective_pipe(assignment: DesignAssignment, pipe: Arc) -> tuple[float, float]:
    """(alpha, q_max) of the selected candidate: the one-hot sums
    sum_i alpha_i z_i and sum_i q_max_i z_i collapse to a lookup."""
    if pipe.kind is not ArcKind.PIPE:
        raise ModelError(f"arc {pipe.id} is not a pipe")
    i = assignment.diameter_choice.get(pipe.id)
    if i is None:
        raise ModelError(f"pipe {pipe.id}: unassigned")
    if not 0 <= i < len(pipe.candidates):
        raise ModelError(f"pipe {pipe.id}: candidate index {i} out of range")
    cand = pipe.candidates[i]
    return cand.alpha, cand.q_max


def assignment_cost(assignment: DesignAssignment, network: Network) -> float:
    """Total construction cost of the selected candidates over all pipes."""
    total = 0.0
    for p in sorted(network.pipes, key=lambda a: a.id):
        i = assignment.diameter_choice.get(p.id)
        if i is None:
            raise ModelError(f"pipe {p.id}: unassigned")
        total += p.candidates[i].cost
    return total


# ---------------------------------------------------------------------------
# formulation configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FormulationConfig:
    """Shared constants of the optimization formulations.

    big_M is only used by the big-M export variant of the active-element
    constraints; the validation path always uses the state-multiplied
    forms, which need no big-M.
    """

    big_M: Optional[float] = None
    c_q: float = 1.0
    c_alpha: float = 1.0
    cost_coeff: float = COST_COEFF
    cost_exponent: float = COST_EXPONENT
    cost_base: float = COST_BASE
    eps_feas: float = 1e-6
    perspective_strengthening: bool = True

    def __post_init__(self) -> None:
        if self.eps_feas <= 0:
            raise ModelError("eps_feas must be positive")
        if self.c_q <= 0 or self.c_alpha <= 0:
            raise ModelError("proportionality constants must be positive")

    def effective_big_m(self, network: Network) -> float:
        """Configured big_M, defaulting to 10x the largest potential bound."""
        if self.big_M is not None:
            m = self.big_M
        else:
            finite = [n.pi_max for n in network.nodes if math.isfinite(n.pi_max)]
            m = 10.0 * max(finite, default=1.0)
        top = max((n.pi_max for n in network.nodes
                   if math.isfinite(n.pi_max)), default=0.0)
        if m < top:
            raise ModelError("big_M smaller than the largest potential bound")
        return m
