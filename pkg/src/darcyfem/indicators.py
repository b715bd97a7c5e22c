"""Residual a-posteriori indicators for the fixed-point iteration.

Two families are computed on every element k:

* linearization indicator  eta_L_k = |k|^(1/2) |u_new_k - u_prev_k|,
  measuring how far the fixed point still moves;
* discretization indicators
  eta_D1_k = || f_h + div-free residual of the momentum step ||_L2(k),
  eta_D2_k = h_k ||b_h||_L3(k) + sum over edges h_e^(1/3) ||flux jump||_L3(e),
  measuring the mesh error of the current step.

Data enters through piecewise-polynomial surrogates (element means f_h, b_h
and edge means g_h); the distance to the true data is returned separately as
oscillation terms.  All totals aggregate in root-sum-of-squares.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh
from .problems import ProblemSpec, eval_k_inverse
from .spaces import (
    P0VectorField,
    P1ScalarField,
    edge_points,
    edge_rule,
    gradient_lp_norm,
    lp_norm,
    p0_error_element_norms,
    p1_gradients,
    physical_points,
    triangle_rule,
)


@dataclass
class ElementIndicators:
    """Per-element indicator and oscillation values, one float per triangle."""

    eta_l: np.ndarray
    eta_d1: np.ndarray
    eta_d2: np.ndarray
    osc_f: np.ndarray
    osc_b: np.ndarray
    osc_g: np.ndarray

    @property
    def eta_d(self) -> np.ndarray:
        """Combined per-element discretization indicator."""
        return np.sqrt(self.eta_d1 ** 2 + self.eta_d2 ** 2)

    @property
    def eta_l_total(self) -> float:
        return float(np.sqrt((self.eta_l ** 2).sum()))

    @property
    def eta_d_total(self) -> float:
        return float(np.sqrt((self.eta_d1 ** 2 + self.eta_d2 ** 2).sum()))

    @property
    def osc_total(self) -> float:
        return float(np.sqrt((self.osc_f ** 2 + self.osc_b ** 2
                              + self.osc_g ** 2).sum()))


def edge_flux(mesh: Mesh, u_values: np.ndarray, g_h: np.ndarray) -> np.ndarray:
    """Normal-flux defect per edge.

    Interior edges carry half the jump of u.n across the edge; boundary
    edges carry u.n - g_h.  Signs follow the edge's stored normal, which is
    irrelevant for the indicators (only magnitudes enter).
    """
    first = mesh.edge_tris[:, 0]
    second = mesh.edge_tris[:, 1]
    un_first = np.einsum("ed,ed->e", u_values[first], mesh.edge_normals)
    flux = un_first - g_h
    interior = second >= 0
    un_second = np.einsum("ed,ed->e", u_values[second[interior]],
                          mesh.edge_normals[interior])
    flux[interior] = 0.5 * (un_first[interior] - un_second)
    return flux


class IndicatorContext:
    """Mesh- and data-bound precomputations reused across iterations.

    Holds the element means of f and b, the boundary edge means of g, the
    oscillation terms (fixed once per mesh) and the permeability samples
    needed by the momentum residual.
    """

    def __init__(self, mesh: Mesh, problem: ProblemSpec,
                 volume_degree: int = 4, oscillation_degree: int = 10,
                 edge_quad_points: int = 8):
        self.mesh = mesh
        self.problem = problem
        areas = mesh.areas

        rule = triangle_rule(oscillation_degree)
        pts = physical_points(mesh, rule)
        w = rule.weights
        shape = pts.shape[:2]

        fx = np.broadcast_to(problem.f(pts[..., 0], pts[..., 1])[0], shape)
        fy = np.broadcast_to(problem.f(pts[..., 0], pts[..., 1])[1], shape)
        self.f_means = np.stack([fx @ w, fy @ w], axis=1)
        df = (fx - self.f_means[:, :1]) ** 2 + (fy - self.f_means[:, 1:]) ** 2
        self.osc_f = np.sqrt(areas * (df @ w))

        bv = np.broadcast_to(problem.b(pts[..., 0], pts[..., 1]), shape)
        self.b_means = bv @ w
        self.osc_b = mesh.h_tri * np.cbrt(
            areas * (np.abs(bv - self.b_means[:, None]) ** 3 @ w))

        # boundary data: edge means and edge oscillation, scattered to the
        # (unique) triangle owning each boundary edge
        ts, ews = edge_rule(edge_quad_points)
        bedges = mesh.boundary_edges
        self.g_h = np.zeros(mesh.n_edges)
        self.osc_g = np.zeros(mesh.n_triangles)
        if bedges.size:
            epts = edge_points(mesh, bedges, ts)
            for j, e in enumerate(bedges):
                gv = np.broadcast_to(
                    problem.g(epts[j, :, 0], epts[j, :, 1],
                              mesh.edge_normals[e]), ts.shape)
                mean = float(gv @ ews)
                self.g_h[e] = mean
                le = mesh.edge_lengths[e]
                osc = le ** (1.0 / 3.0) * np.cbrt(
                    le * float(np.abs(gv - mean) ** 3 @ ews))
                self.osc_g[mesh.edge_tris[e, 0]] += osc

        # permeability samples for the momentum residual
        self._res_rule = triangle_rule(volume_degree)
        if problem.k_constant:
            self.k_const = eval_k_inverse(
                problem, np.zeros(1), np.zeros(1))[..., 0]
            self.k_samples = None
        else:
            rpts = physical_points(mesh, self._res_rule)
            self.k_const = None
            self.k_samples = eval_k_inverse(problem, rpts[..., 0], rpts[..., 1])

        self._b_l3 = mesh.h_tri * np.abs(self.b_means) * np.cbrt(areas)
        self._edge_weight = mesh.edge_lengths ** (2.0 / 3.0)

    def compute(self, u_new: P0VectorField, u_prev: P0VectorField,
                p_new: P1ScalarField, alpha: float) -> ElementIndicators:
        """Evaluate all indicators for one completed fixed-point step."""
        mesh = self.mesh
        pr = self.problem
        areas = mesh.areas
        un = u_new.values
        up = u_prev.values
        du = un - up

        eta_l = np.sqrt(areas) * np.linalg.norm(du, axis=1)

        grads = p1_gradients(p_new)
        speed = np.linalg.norm(up, axis=1)
        c = self.f_means - grads - alpha * du \
            - (pr.beta / pr.rho) * speed[:, None] * un
        if self.k_const is not None:
            r = c - (pr.mu / pr.rho) * un @ self.k_const.T
            eta_d1 = np.sqrt(areas) * np.linalg.norm(r, axis=1)
        else:
            ku = np.einsum("abmq,mb->mqa", self.k_samples, un)
            r = c[:, None, :] - (pr.mu / pr.rho) * ku
            sq = np.einsum("mqa,mqa->mq", r, r)
            eta_d1 = np.sqrt(areas * (sq @ self._res_rule.weights))

        flux = edge_flux(mesh, un, self.g_h)
        edge_term = self._edge_weight * np.abs(flux)
        eta_d2 = self._b_l3 + edge_term[mesh.tri_edges].sum(axis=1)

        return ElementIndicators(eta_l=eta_l, eta_d1=eta_d1, eta_d2=eta_d2,
                                 osc_f=self.osc_f, osc_b=self.osc_b,
                                 osc_g=self.osc_g)


def compute_indicators(mesh: Mesh, problem: ProblemSpec,
                       u_new: P0VectorField, u_prev: P0VectorField,
                       p_new: P1ScalarField, alpha: float,
                       context: IndicatorContext | None = None) -> ElementIndicators:
    """One-shot indicator evaluation (builds a throwaway context)."""
    if context is None:
        context = IndicatorContext(mesh, problem)
    return context.compute(u_new, u_prev, p_new, alpha)


def effectivity_index(ind: ElementIndicators, u_exact_err_l3: float,
                      p_exact_grad_err_l32: float) -> float:
    """Estimated-over-true error ratio.

    The numerator is the full computable upper bound: indicator aggregates
    plus the data-oscillation total.  On coarse meshes with sharp data the
    oscillation part dominates, which is what makes the ratio an honest
    reliability gauge rather than an indicator-only one.
    """
    err = u_exact_err_l3 + p_exact_grad_err_l32
    estimated = ind.eta_l_total + ind.eta_d_total + ind.osc_total
    if err == 0.0:
        return float("inf") if estimated > 0.0 else 0.0
    return estimated / err


@dataclass
class LowerBoundReport:
    """Elementwise check of eta_L against the two-sided velocity error."""

    eta_l: np.ndarray
    bound: np.ndarray            # ||u - u_prev||_L2(k) + ||u - u_new||_L2(k)
    ok: np.ndarray

    @property
    def all_ok(self) -> bool:
        return bool(self.ok.all())


def lower_bound_check(mesh: Mesh, problem: ProblemSpec,
                      u_new: P0VectorField, u_prev: P0VectorField,
                      degree: int = 10, slack: float = 1e-10) -> LowerBoundReport:
    """Verify eta_L_k <= ||u - u_prev||_L2(k) + ||u - u_new||_L2(k).

    A triangle inequality, so it holds for any pair of iterates; running it
    guards the indicator's scaling against regressions.  Needs the problem's
    reference velocity.
    """
    if problem.exact_u is None:
        raise ValueError(f"problem {problem.name!r} has no reference velocity")
    rule = triangle_rule(degree)
    err_new = p0_error_element_norms(u_new, problem.exact_u, 2.0, rule)
    err_prev = p0_error_element_norms(u_prev, problem.exact_u, 2.0, rule)
    eta_l = np.sqrt(mesh.areas) * np.linalg.norm(
        u_new.values - u_prev.values, axis=1)
    bound = err_prev + err_new
    return LowerBoundReport(eta_l=eta_l, bound=bound,
                            ok=eta_l <= bound * (1.0 + slack) + slack)


def total_relative_indicator(ind: ElementIndicators, u: P0VectorField,
                             p: P1ScalarField) -> float:
    """eta_D scaled by the size of the discrete solution itself.

    The scale-invariant quantity tracked on problems without a reference
    solution: eta_D / (||u||_L3 + ||grad p||_L3/2).
    """
    denom = lp_norm(u, 3.0) + gradient_lp_norm(p, 1.5)
    if denom == 0.0:
        return float("inf") if ind.eta_d_total > 0.0 else 0.0
    return ind.eta_d_total / denom
