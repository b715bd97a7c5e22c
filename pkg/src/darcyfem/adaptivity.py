"""Adaptive refinement loop: solve, estimate, mark, bisect.

Each level runs the nonlinear solver with the indicator-balanced stopping
rule, so the iteration stops as soon as the linearization error is dominated
by the discretization error on the current mesh.  Elements are then marked
on the discretization indicator (bulk criterion by default) and refined by
newest-vertex bisection, and the loop moves to the next mesh.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .indicators import effectivity_index, total_relative_indicator
from .mesh import Mesh, refine
from .nonlinear_solver import SolveResult, SolverConfig, solve, true_error
from .problems import ProblemSpec, initial_mesh


@dataclass
class AdaptConfig:
    """Marking parameters: ``doerfler`` marks the smallest bulk of elements
    holding theta^2 of the squared indicator, ``max`` marks every element
    above theta times the largest indicator."""

    theta: float = 0.5
    marker: str = "doerfler"

    def __post_init__(self):
        if self.marker not in ("doerfler", "max"):
            raise ValueError(f"unknown marker {self.marker!r}")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must lie in (0, 1]")


def mark(eta: np.ndarray, theta: float = 0.5,
         marker: str = "doerfler") -> np.ndarray:
    """Select elements to refine from per-element indicator values.

    Ties are broken toward lower element ids so marking is deterministic.
    Returns a sorted array of element indices; empty when all indicators
    vanish.
    """
    eta = np.asarray(eta, dtype=float)
    sq = eta ** 2
    total = float(sq.sum())
    if total == 0.0:
        return np.array([], dtype=int)
    if marker == "max":
        return np.flatnonzero(eta >= theta * eta.max())
    order = np.lexsort((np.arange(eta.size), -sq))
    csum = np.cumsum(sq[order])
    idx = int(np.searchsorted(csum, theta ** 2 * total))
    idx = min(idx, eta.size - 1)
    return np.sort(order[:idx + 1])


@dataclass
class LevelRecord:
    """Summary numbers for one mesh in a refinement study."""

    level: int
    vertices: int
    triangles: int
    h_max: float
    iterations: int
    converged: bool
    eta_l: float
    eta_d: float
    e_tot: float
    err: float = math.nan            # relative error, needs a reference
    err_u_l2: float = math.nan
    err_u_l3: float = math.nan
    err_grad_p_l32: float = math.nan
    ei: float = math.nan             # effectivity index
    marked: int = 0


@dataclass
class LevelState:
    """Full state of one adaptive level (kept for rendering and tests)."""

    mesh: Mesh
    result: SolveResult
    record: LevelRecord


def _record_level(level: int, mesh: Mesh, problem: ProblemSpec,
                  result: SolveResult) -> LevelRecord:
    ind = result.indicators
    rec = LevelRecord(
        level=level, vertices=mesh.n_vertices, triangles=mesh.n_triangles,
        h_max=mesh.h_max, iterations=result.iterations,
        converged=result.converged, eta_l=ind.eta_l_total,
        eta_d=ind.eta_d_total,
        e_tot=total_relative_indicator(ind, result.u, result.p))
    if problem.has_exact():
        err = true_error(mesh, problem, result.u, result.p)
        rec.err = err.relative
        rec.err_u_l2 = err.u_l2
        rec.err_u_l3 = err.u_l3
        rec.err_grad_p_l32 = err.grad_p_l32
        rec.ei = effectivity_index(ind, err.u_l3, err.grad_p_l32)
    return rec


def adaptive_loop(problem: ProblemSpec, levels: int = 7, initial_n: int = 10,
                  solver: SolverConfig | None = None,
                  adapt: AdaptConfig | None = None,
                  mesh: Mesh | None = None) -> list[LevelState]:
    """Run ``levels`` solve-estimate-mark-refine rounds.

    The solver defaults to the indicator-balanced stopping rule with the
    linear solution as initial guess on every level.  The returned list has
    one entry per level, coarsest first; the last level is solved but not
    refined.
    """
    cfg = solver or SolverConfig(stopping="indicator_balance",
                                 initial_guess="darcy")
    acfg = adapt or AdaptConfig()
    current = mesh if mesh is not None else initial_mesh(problem, initial_n)

    states: list[LevelState] = []
    for level in range(levels):
        result = solve(current, problem, cfg)
        record = _record_level(level, current, problem, result)
        state = LevelState(mesh=current, result=result, record=record)
        states.append(state)
        if level == levels - 1:
            break
        marked = mark(result.indicators.eta_d, acfg.theta, acfg.marker)
        record.marked = int(marked.size)
        if marked.size == 0:
            break
        current = refine(current, marked)
    return states


def uniform_study(problem: ProblemSpec, ns, solver: SolverConfig | None = None
                  ) -> list[LevelState]:
    """Solve on a family of structured meshes (one per subdivision count)."""
    cfg = solver or SolverConfig(initial_guess="darcy")
    states = []
    for i, n in enumerate(ns):
        m = initial_mesh(problem, int(n))
        result = solve(m, problem, cfg)
        states.append(LevelState(mesh=m, result=result,
                                 record=_record_level(i, m, problem, result)))
    return states


def observed_orders(errors, hs) -> list[float]:
    """Convergence rates from successive (error, h) pairs."""
    rates = []
    for (e0, h0), (e1, h1) in zip(zip(errors, hs), zip(errors[1:], hs[1:])):
        rates.append(math.log(e0 / e1) / math.log(h0 / h1))
    return rates


def pick_by_budget(records: list[LevelRecord], budget: int) -> LevelRecord | None:
    """Last record whose vertex count fits the budget (None if none do)."""
    fitting = [r for r in records if r.vertices <= budget]
    return fitting[-1] if fitting else None


@dataclass
class BudgetComparison:
    """Best adaptive and uniform records under one vertex budget."""

    budget: int
    adaptive: LevelRecord | None
    uniform: LevelRecord | None

    def measure(self, record: LevelRecord) -> float:
        """Comparison quantity: the true relative error when a reference
        solution exists, the relative total indicator otherwise."""
        return record.err if math.isfinite(record.err) else record.e_tot

    @property
    def adaptive_wins(self) -> bool:
        if self.adaptive is None or self.uniform is None:
            return False
        return self.measure(self.adaptive) < self.measure(self.uniform)


def compare_adaptive_uniform(adaptive_records: list[LevelRecord],
                             uniform_records: list[LevelRecord],
                             budgets) -> list[BudgetComparison]:
    """Line up the two refinement strategies at matched vertex budgets."""
    return [BudgetComparison(budget=int(b),
                             adaptive=pick_by_budget(adaptive_records, int(b)),
                             uniform=pick_by_budget(uniform_records, int(b)))
            for b in budgets]
