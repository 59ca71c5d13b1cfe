"""Shared interior-point engine for the package's convex programs.

One log-barrier Newton solver covers every continuous solve in the
package: the separable cubic flow objectives of the convex-flow master,
their perspective-strengthened variants, the linear-objective node
relaxations of the cost masters, and the quadratic / quadratic-over-
linear cone constraints of the conic relaxation.

Problem shape::

    minimize    c.x  +  sum coef * x_q^3  +  sum coef * x_q^3 / x_z
    subject to  A_eq x  = b_eq
                A_ub x <= b_ub
                a * x_q^2 <= x_g                 (quadratic cone rows)
                a * x_q^2 <= x_z * x_g           (perspective cone rows)

Convexity requirements: cubic variables are kept nonnegative and
perspective denominators positive by accompanying affine bounds; the
builder adds any that are missing.

Phase 1 minimizes a common constraint margin s (cone rows enter through
their jointly convex norm representation), which yields a strictly
interior start or an infeasibility certificate.  Phase 2 follows the
central path with damped Newton steps and reports equality and
inequality multipliers from the final centering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class ConvexProgram:
    n: int
    lin_cost: np.ndarray
    cubic: tuple[tuple[int, float], ...]
    persp_cubic: tuple[tuple[int, int, float], ...]
    A_eq: Optional[np.ndarray]
    b_eq: Optional[np.ndarray]
    A_ub: np.ndarray
    b_ub: np.ndarray
    quad_cones: tuple[tuple[int, int, float], ...]
    persp_cones: tuple[tuple[int, int, int, float], ...]

    @property
    def num_ineq(self) -> int:
        return self.A_ub.shape[0] + len(self.quad_cones) + len(self.persp_cones)


@dataclass
class Solution:
    status: str                    # "optimal" | "infeasible" | "iteration_limit"
    x: np.ndarray
    objective: float
    eq_dual: np.ndarray            # one per equality row
    ub_dual: np.ndarray            # one per affine inequality row
    cone_dual: np.ndarray          # quad cones then perspective cones
    gap: float                     # m / t at exit
    infeasibility: float = 0.0     # phase-1 margin when status == "infeasible"

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


class ProgramBuilder:
    """Incremental construction of a ConvexProgram with named variables."""

    def __init__(self) -> None:
        self._names: dict[str, int] = {}
        self._lo: list[float] = []
        self._hi: list[float] = []
        self._cost: list[float] = []
        self._cubic: list[tuple[int, float]] = []
        self._persp_cubic: list[tuple[int, int, float]] = []
        self._eq_rows: list[dict[int, float]] = []
        self._eq_rhs: list[float] = []
        self._ub_rows: list[dict[int, float]] = []
        self._ub_rhs: list[float] = []
        self._quad_cones: list[tuple[int, int, float]] = []
        self._persp_cones: list[tuple[int, int, int, float]] = []

    def var(self, name: str, lo: float = -math.inf, hi: float = math.inf,
            cost: float = 0.0) -> int:
        if name in self._names:
            raise ValueError(f"duplicate variable {name}")
        j = len(self._lo)
        self._names[name] = j
        self._lo.append(lo)
        self._hi.append(hi)
        self._cost.append(cost)
        return j

    def __getitem__(self, name: str) -> int:
        return self._names[name]

    def __contains__(self, name: str) -> bool:
        return name in self._names

    @property
    def num_vars(self) -> int:
        return len(self._lo)

    def set_bounds(self, j: int, lo: float, hi: float) -> None:
        self._lo[j] = lo
        self._hi[j] = hi

    def add_cost(self, j: int, c: float) -> None:
        self._cost[j] += c

    def add_cubic(self, j: int, coef: float) -> None:
        """coef * x_j^3 (x_j forced nonnegative)."""
        self._cubic.append((j, coef))
        self._lo[j] = max(self._lo[j], 0.0)

    def add_persp_cubic(self, qj: int, zj: int, coef: float) -> None:
        """coef * x_q^3 / x_z (both forced nonnegative)."""
        self._persp_cubic.append((qj, zj, coef))
        self._lo[qj] = max(self._lo[qj], 0.0)
        self._lo[zj] = max(self._lo[zj], 0.0)

    def add_eq(self, coeffs: dict[int, float], rhs: float) -> None:
        self._eq_rows.append(dict(coeffs))
        self._eq_rhs.append(rhs)

    def add_ub(self, coeffs: dict[int, float], rhs: float) -> None:
        """sum coeffs[j] * x_j <= rhs"""
        self._ub_rows.append(dict(coeffs))
        self._ub_rhs.append(rhs)

    def add_quad_cone(self, qj: int, gj: int, a: float) -> None:
        """a * x_q^2 <= x_g"""
        self._quad_cones.append((qj, gj, a))
        self._lo[gj] = max(self._lo[gj], 0.0)

    def add_persp_cone(self, qj: int, zj: int, gj: int, a: float) -> None:
        """a * x_q^2 <= x_z * x_g"""
        self._persp_cones.append((qj, zj, gj, a))
        self._lo[zj] = max(self._lo[zj], 0.0)
        self._lo[gj] = max(self._lo[gj], 0.0)

    def build(self) -> ConvexProgram:
        n = self.num_vars
        names = {j: name for name, j in self._names.items()}
        rows = list(self._ub_rows)
        rhs = list(self._ub_rhs)
        for j in range(n):
            if not (math.isfinite(self._lo[j]) and math.isfinite(self._hi[j])):
                raise ValueError(
                    f"variable {names[j]} needs finite bounds on both sides "
                    "(the feasibility phase requires a bounded box)")
            rows.append({j: -1.0})
            rhs.append(-self._lo[j])
            rows.append({j: 1.0})
            rhs.append(self._hi[j])
        A_ub = np.zeros((len(rows), n))
        for i, row in enumerate(rows):
            for j, c in row.items():
                A_ub[i, j] = c
        A_eq = None
        b_eq = None
        if self._eq_rows:
            A_eq = np.zeros((len(self._eq_rows), n))
            for i, row in enumerate(self._eq_rows):
                for j, c in row.items():
                    A_eq[i, j] = c
            b_eq = np.array(self._eq_rhs, dtype=float)
        return ConvexProgram(
            n=n,
            lin_cost=np.array(self._cost, dtype=float),
            cubic=tuple(self._cubic),
            persp_cubic=tuple(self._persp_cubic),
            A_eq=A_eq,
            b_eq=b_eq,
            A_ub=A_ub,
            b_ub=np.array(rhs, dtype=float),
            quad_cones=tuple(self._quad_cones),
            persp_cones=tuple(self._persp_cones),
        )


# ---------------------------------------------------------------------------
# barrier models: phase 2 (the real problem) and phase 1 (margin problem)
# ---------------------------------------------------------------------------

_TINY = 1e-300


class _MainModel:
    """t * f(x) + log-barrier of the real constraint set."""

    def __init__(self, p: ConvexProgram):
        self.p = p
        self.n = p.n
        self.A_eq = p.A_eq
        self.b_eq = p.b_eq

    def objective(self, x: np.ndarray) -> float:
        p = self.p
        val = float(p.lin_cost @ x)
        for j, c in p.cubic:
            val += c * x[j] ** 3
        for qj, zj, c in p.persp_cubic:
            val += c * x[qj] ** 3 / max(x[zj], _TINY)
        return val

    def obj_grad_hess(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = self.p
        g = p.lin_cost.copy()
        H = np.zeros((p.n, p.n))
        for j, c in p.cubic:
            g[j] += 3.0 * c * x[j] ** 2
            H[j, j] += 6.0 * c * max(x[j], 0.0)
        for qj, zj, c in p.persp_cubic:
            q = max(x[qj], 0.0)
            z = max(x[zj], _TINY)
            g[qj] += 3.0 * c * q * q / z
            g[zj] -= c * q ** 3 / z ** 2
            H[qj, qj] += 6.0 * c * q / z
            H[qj, zj] -= 3.0 * c * q * q / z ** 2
            H[zj, qj] -= 3.0 * c * q * q / z ** 2
            H[zj, zj] += 2.0 * c * q ** 3 / z ** 3
        return g, H

    def slacks(self, x: np.ndarray) -> np.ndarray:
        p = self.p
        parts = [p.b_ub - p.A_ub @ x]
        for qj, gj, a in p.quad_cones:
            parts.append(np.array([x[gj] - a * x[qj] ** 2]))
        for qj, zj, gj, a in p.persp_cones:
            if x[zj] <= 0.0 or x[gj] <= 0.0:
                parts.append(np.array([-1.0]))
            else:
                parts.append(np.array([x[zj] * x[gj] - a * x[qj] ** 2]))
        return np.concatenate(parts)

    def in_domain(self, x: np.ndarray) -> bool:
        return bool(np.all(self.slacks(x) > 0.0))

    def barrier_value(self, x: np.ndarray) -> float:
        s = self.slacks(x)
        if np.any(s <= 0.0):
            return math.inf
        return -float(np.sum(np.log(s)))

    def barrier_grad_hess(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = self.p
        slack = p.b_ub - p.A_ub @ x
        inv = 1.0 / slack
        g = p.A_ub.T @ inv
        H = (p.A_ub.T * inv ** 2) @ p.A_ub
        for qj, gj, a in p.quad_cones:
            m = x[gj] - a * x[qj] ** 2
            gm = np.zeros(p.n)
            gm[qj] = -2.0 * a * x[qj]
            gm[gj] = 1.0
            g -= gm / m
            H += np.outer(gm, gm) / m ** 2
            H[qj, qj] += 2.0 * a / m
        for qj, zj, gj, a in p.persp_cones:
            m = x[zj] * x[gj] - a * x[qj] ** 2
            gm = np.zeros(p.n)
            gm[qj] = -2.0 * a * x[qj]
            gm[zj] = x[gj]
            gm[gj] = x[zj]
            g -= gm / m
            H += np.outer(gm, gm) / m ** 2
            H[qj, qj] += 2.0 * a / m
            H[zj, gj] -= 1.0 / m
            H[gj, zj] -= 1.0 / m
        return g, H


class _Phase1Model:
    """minimize s over (x, s) with every constraint relaxed by s.

    Cone rows use the norm representation, which is jointly convex and
    therefore valid while still outside the cone:

        || (2 sqrt(a) q, z - g) ||  <=  z + g     <=>   a q^2 <= z g, z,g >= 0

    The norm is smoothed with a tiny delta, which shrinks the cone
    slightly (conservative: a phase-1 success is strictly inside the
    true cone).
    """

    def __init__(self, p: ConvexProgram, span: float, delta: float):
        self.p = p
        self.n = p.n + 1
        self.delta = delta
        self.s_lo = -(1.0 + span)
        if p.A_eq is not None:
            self.A_eq = np.hstack([p.A_eq, np.zeros((p.A_eq.shape[0], 1))])
            self.b_eq = p.b_eq
        else:
            self.A_eq = None
            self.b_eq = None

    def objective(self, y: np.ndarray) -> float:
        return float(y[-1])

    def obj_grad_hess(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g = np.zeros(self.n)
        g[-1] = 1.0
        return g, np.zeros((self.n, self.n))

    def margins(self, y: np.ndarray) -> np.ndarray:
        """g_i(x) - s per constraint plus the floor row on s (all < 0 inside)."""
        p = self.p
        x, s = y[:-1], y[-1]
        parts = [p.A_ub @ x - p.b_ub - s]
        for qj, gj, a in p.quad_cones:
            parts.append(np.array([a * x[qj] ** 2 - x[gj] - s]))
        for qj, zj, gj, a in p.persp_cones:
            norm = math.sqrt(4.0 * a * x[qj] ** 2
                             + (x[zj] - x[gj]) ** 2 + self.delta ** 2)
            parts.append(np.array([norm - (x[zj] + x[gj]) - s]))
        parts.append(np.array([self.s_lo - s]))
        return np.concatenate(parts)

    def slacks(self, y: np.ndarray) -> np.ndarray:
        return -self.margins(y)

    def in_domain(self, y: np.ndarray) -> bool:
        return bool(np.all(self.margins(y) < 0.0))

    def barrier_value(self, y: np.ndarray) -> float:
        s = self.slacks(y)
        if np.any(s <= 0.0):
            return math.inf
        return -float(np.sum(np.log(s)))

    def barrier_grad_hess(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = self.p
        x, s = y[:-1], y[-1]
        n = self.n
        g = np.zeros(n)
        H = np.zeros((n, n))
        # affine block: rows [A | -1], slack = b + s - A x
        slack = p.b_ub + s - p.A_ub @ x
        inv = 1.0 / slack
        g[:-1] += p.A_ub.T @ inv
        g[-1] += -float(np.sum(inv))
        H[:-1, :-1] += (p.A_ub.T * inv ** 2) @ p.A_ub
        col = -(p.A_ub.T @ inv ** 2)
        H[:-1, -1] += col
        H[-1, :-1] += col
        H[-1, -1] += float(np.sum(inv ** 2))
        # quadratic cones: slack = g + s - a q^2
        for qj, gj, a in p.quad_cones:
            m = x[gj] + s - a * x[qj] ** 2
            gm = np.zeros(n)
            gm[qj] = -2.0 * a * x[qj]
            gm[gj] = 1.0
            gm[-1] = 1.0
            g -= gm / m
            H += np.outer(gm, gm) / m ** 2
            H[qj, qj] += 2.0 * a / m
        # perspective cones via smoothed norm: slack = z + g + s - norm
        for qj, zj, gj, a in p.persp_cones:
            u = 4.0 * a * x[qj] ** 2 + (x[zj] - x[gj]) ** 2 + self.delta ** 2
            r = math.sqrt(u)
            du = np.zeros(n)
            du[qj] = 8.0 * a * x[qj]
            du[zj] = 2.0 * (x[zj] - x[gj])
            du[gj] = -2.0 * (x[zj] - x[gj])
            # grad/hess of r = sqrt(u)
            gr = du / (2.0 * r)
            Hu = np.zeros((n, n))
            Hu[qj, qj] = 8.0 * a
            Hu[zj, zj] = 2.0
            Hu[gj, gj] = 2.0
            Hu[zj, gj] = Hu[gj, zj] = -2.0
            Hr = Hu / (2.0 * r) - np.outer(du, du) / (4.0 * u * r)
            # slack h = (z + g + s) - r
            gm = np.zeros(n)
            gm[zj] = 1.0
            gm[gj] = 1.0
            gm[-1] = 1.0
            h = x[zj] + x[gj] + s - r
            gh = gm - gr
            g -= gh / h
            H += np.outer(gh, gh) / h ** 2 + Hr / h
        # floor on s: slack = s - s_lo
        m = s - self.s_lo
        g[-1] -= 1.0 / m
        H[-1, -1] += 1.0 / m ** 2
        return g, H


# ---------------------------------------------------------------------------
# Newton centering over a barrier model
# ---------------------------------------------------------------------------

def _null_basis(A: Optional[np.ndarray]) -> Optional[np.ndarray]:
    """Orthonormal basis of null(A); None means the whole space."""
    if A is None or A.shape[0] == 0:
        return None
    _, sv, vt = np.linalg.svd(A)
    tol = max(A.shape) * np.finfo(float).eps * (sv[0] if sv.size else 1.0)
    rank = int(np.sum(sv > tol))
    return vt[rank:].T.copy()


def _reduced_step(H: np.ndarray, g: np.ndarray, N: Optional[np.ndarray]
                  ) -> np.ndarray:
    """Newton step restricted to the equality null space (exactly)."""
    if N is None:
        Hy, gy = H, g
    else:
        Hy = N.T @ H @ N
        gy = N.T @ g
    k = Hy.shape[0]
    if k == 0:
        return np.zeros_like(g)
    reg = 1e-13 * (1.0 + abs(np.trace(Hy)) / k)
    try:
        dy = np.linalg.solve(Hy + reg * np.eye(k), -gy)
    except np.linalg.LinAlgError:
        dy = np.linalg.lstsq(Hy + reg * np.eye(k), -gy, rcond=None)[0]
    return dy if N is None else N @ dy


def _center(model, x: np.ndarray, t: float, N: Optional[np.ndarray],
            newton_tol: float = 1e-12, max_iter: int = 100
            ) -> tuple[np.ndarray, np.ndarray]:
    """Minimize t*f + barrier over the equality plane from a feasible x.

    Returns the centered point together with equality multipliers
    recovered from the final gradient by least squares.
    """
    A = model.A_eq
    g = np.zeros(model.n)
    for _ in range(max_iter):
        g0, H0 = model.obj_grad_hess(x)
        gb, Hb = model.barrier_grad_hess(x)
        g = t * g0 + gb
        H = t * H0 + Hb
        dx = _reduced_step(H, g, N)
        decrement = float(-g @ dx)
        if not math.isfinite(decrement) or decrement <= 2.0 * newton_tol:
            break
        merit0 = t * model.objective(x) + model.barrier_value(x)
        slope = float(g @ dx)
        step = 1.0
        accepted = False
        while step > 1e-14:
            x_try = x + step * dx
            if model.in_domain(x_try):
                merit = t * model.objective(x_try) + model.barrier_value(x_try)
                if merit <= merit0 + 1e-4 * step * slope or merit < merit0:
                    accepted = True
                    break
            step *= 0.6
        if not accepted:
            break
        x = x + step * dx
        if step < 1e-12:
            break
    if A is None or A.shape[0] == 0:
        w = np.zeros(0)
    else:
        g0, _ = model.obj_grad_hess(x)
        gb, _ = model.barrier_grad_hess(x)
        w = np.linalg.lstsq(A.T, -(t * g0 + gb), rcond=None)[0]
    return x, w


# ---------------------------------------------------------------------------
# phase 1: strictly feasible point / infeasibility certificate
# ---------------------------------------------------------------------------

def find_interior(p: ConvexProgram, x0: Optional[np.ndarray] = None,
                  tol: float = 1e-9) -> tuple[Optional[np.ndarray], float]:
    """Return (strictly feasible x, margin) or (None, infeasibility)."""
    main = _MainModel(p)
    if x0 is not None and x0.shape == (p.n,) and main.in_domain(x0):
        if p.A_eq is None or np.linalg.norm(p.A_eq @ x0 - p.b_eq, np.inf) <= \
                1e-9 * (1.0 + np.linalg.norm(p.b_eq, np.inf)):
            return x0.copy(), float(np.min(main.slacks(x0)))

    scale = 1.0 + (float(np.max(np.abs(p.b_ub))) if p.b_ub.size else 0.0)
    if p.A_eq is not None:
        x = np.linalg.lstsq(p.A_eq, p.b_eq, rcond=None)[0]
        resid = float(np.linalg.norm(p.A_eq @ x - p.b_eq, np.inf))
        if resid > 1e-8 * (1.0 + float(np.linalg.norm(p.b_eq, np.inf))):
            return None, resid
    else:
        x = np.zeros(p.n)

    ph1 = _Phase1Model(p, span=scale, delta=1e-9 * scale)
    s0 = float(np.max(ph1.margins(np.concatenate([x, [0.0]]))[:-1]))
    y = np.concatenate([x, [s0 + 0.1 * scale + 1.0]])
    N1 = _null_basis(ph1.A_eq)
    t = 1.0
    s_goal = -1e-3 * scale
    n_rows = p.num_ineq + 1
    for _ in range(64):
        y, _ = _center(ph1, y, t, N1)
        if y[-1] < s_goal:
            break
        if n_rows / t < min(tol * scale, 1e-7):
            break
        t *= 12.0
    x, s = y[:-1], float(y[-1])
    if s >= -1e-12 * scale or not main.in_domain(x):
        return None, max(s, 1e-12 * scale)
    return x, float(np.min(main.slacks(x)))


# ---------------------------------------------------------------------------
# main entry
# ---------------------------------------------------------------------------

def solve(p: ConvexProgram, x0: Optional[np.ndarray] = None,
          gap_tol: float = 1e-9, mu: float = 12.0,
          max_outer: int = 96) -> Solution:
    """Barrier solve of a ConvexProgram.  See module docstring."""
    m = p.num_ineq
    if m == 0:
        raise ValueError("programs must have at least one inequality")
    x, margin = find_interior(p, x0)
    if x is None:
        return Solution("infeasible", np.zeros(p.n), math.inf,
                        np.zeros(0 if p.A_eq is None else p.A_eq.shape[0]),
                        np.zeros(p.A_ub.shape[0]),
                        np.zeros(len(p.quad_cones) + len(p.persp_cones)),
                        math.inf, infeasibility=margin)

    model = _MainModel(p)
    N = _null_basis(p.A_eq)
    t = 1.0
    w = np.zeros(0 if p.A_eq is None else p.A_eq.shape[0])
    status = "iteration_limit"
    for _ in range(max_outer):
        x, w = _center(model, x, t, N)
        obj_scale = max(1.0, abs(model.objective(x)))
        if m / t <= gap_tol * obj_scale:
            status = "optimal"
            break
        t *= mu
    slack = model.slacks(x)
    duals = 1.0 / (t * np.maximum(slack, _TINY))
    n_aff = p.A_ub.shape[0]
    return Solution(
        status=status,
        x=x,
        objective=model.objective(x),
        eq_dual=(w / t) if w.size else w,
        ub_dual=duals[:n_aff],
        cone_dual=duals[n_aff:],
        gap=m / t,
    )
