"""Assembly of the guaranteed energy-norm error bound.

The total estimator is

    eta^2 = sum_K [ eta_K + osc_K(f) + sum_{gamma in Gamma_N of K} osc_gamma(g_N) ]^2

with eta_K built from one of the two flux reconstructions. Two per-element
selection strategies are provided: 'tau' picks the polynomial variant where
kappa*rho <= 1 and the layer variant elsewhere; 'taustar' additionally computes
both indicators and keeps the smaller one (the polynomial variant is mandatory
where kappa = 0, where its divergence condition is required for the bound).
Both choices give guaranteed upper bounds up to round-off.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .equilibration import equilibrate
from .errors import NegativeDifference
from .fem import (FemSolution, ProblemData, project_element_bulk,
                  project_facet)
from .geometry import NEUMANN, Mesh
from .quadrature import integrate_facet, rule_for
from . import reconstruction as rec

TRUE_ERROR_DEGREE = 10


# ---------------------------------------------------------------------------
# trace constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceConstants:
    """Squared constants of the two facet trace inequalities on a simplex.

    ``ct2`` bounds ||v||_gamma^2 / |||v|||_K^2 (undefined for kappa = 0, stored
    as None); ``cbar2`` bounds ||v - mean_gamma v||_gamma^2 / |||v|||_K^2.
    ``min2`` = min of the available squared constants, the weight of the
    Neumann data oscillation.
    """

    ct2: float | None
    cbar2: float

    @property
    def min2(self) -> float:
        return self.cbar2 if self.ct2 is None else min(self.ct2, self.cbar2)


def trace_constants(d: int, h: float, volume: float, facet_measure: float,
                    kappa: float) -> TraceConstants:
    """Closed-form trace constants of a d-simplex w.r.t. one of its facets."""
    ratio = facet_measure / (d * volume)
    if kappa > 0:
        ct2 = ratio / kappa * math.hypot(2 * h, d / kappa)
    else:
        ct2 = None
    m = h / math.pi if kappa == 0 else min(h / math.pi, 1.0 / kappa)
    cbar2 = ratio * m * (2 * h + d * m)
    return TraceConstants(ct2=ct2, cbar2=cbar2)


def verify_trace_inequality(vertices, kappa: float, samples: int,
                            rng: np.random.Generator):
    """Max observed trace ratios over random quadratic polynomials, per facet.

    Returns ``(max_plain, max_mean_free, quantities)``: arrays over the d+1
    facets of max ||v||_gamma / |||v|||_K (zero entries when kappa = 0, where
    the inequality is not stated) and max ||v - mean_gamma v||_gamma / |||v|||_K.
    Each entry must stay below the corresponding closed-form constant.
    """
    from .geometry import geometric_quantities
    vertices = np.asarray(vertices, dtype=float)
    d = vertices.shape[1]
    q = geometric_quantities(vertices)
    rule_k = rule_for(d, 4)
    rule_f = rule_for(d - 1, 4)
    xk = rule_k.points @ vertices
    coef = rng.standard_normal((samples, 1 + d + d * d))

    def eval_v(x):
        quad = np.einsum("sij,pi,pj->sp", coef[:, 1 + d:].reshape(samples, d, d), x, x)
        return coef[:, :1] + coef[:, 1:1 + d] @ x.T + quad

    def eval_grad_sq(x):
        qmat = coef[:, 1 + d:].reshape(samples, d, d)
        g = coef[:, None, 1:1 + d] + np.einsum("sij,pj->spi", qmat + qmat.transpose(0, 2, 1), x)
        return (g ** 2).sum(axis=2)

    vk = eval_v(xk)
    energy2 = ((eval_grad_sq(xk) + kappa ** 2 * vk ** 2) @ rule_k.weights
               * q.volume * math.factorial(d))
    max_plain = np.zeros(d + 1)
    max_freed = np.zeros(d + 1)
    for i in range(d + 1):
        fverts = np.delete(vertices, i, axis=0)
        meas = q.facet_measures[i]
        xf = rule_f.points @ fverts
        vf = eval_v(xf)
        w = rule_f.weights * meas * math.factorial(d - 1)
        norm2 = vf ** 2 @ w
        mean = (vf @ w) / meas
        freed2 = ((vf - mean[:, None]) ** 2) @ w
        if kappa > 0:
            max_plain[i] = float(np.sqrt(norm2 / energy2).max())
        max_freed[i] = float(np.sqrt(freed2 / energy2).max())
    return max_plain, max_freed, q


# ---------------------------------------------------------------------------
# data oscillation
# ---------------------------------------------------------------------------

def oscillation_f(mesh: Mesh, f: Callable, degree: int = 8) -> np.ndarray:
    """osc_K(f) = min(h_K/pi, 1/kappa_K) ||f - Pi_K f||_K per element."""
    d = mesh.dim
    proj = project_element_bulk(mesh, f, degree)
    rule = rule_for(d, degree)
    pts = mesh.points[mesh.simplices]
    acc = np.zeros(mesh.n_elements)
    for lam, w in zip(rule.points, rule.weights):
        x = np.einsum("j,ejd->ed", lam, pts)
        diff = np.asarray(f(x)) - proj @ lam
        acc += w * diff ** 2
    norm = np.sqrt(np.maximum(acc * mesh.volumes * math.factorial(d), 0.0))
    with np.errstate(divide="ignore"):
        weight = np.where(mesh.kappa > 0,
                          np.minimum(mesh.diameters / math.pi,
                                     1.0 / np.where(mesh.kappa > 0, mesh.kappa, 1.0)),
                          mesh.diameters / math.pi)
    return weight * norm


def oscillation_gN(mesh: Mesh, g_N: Callable | None, degree: int = 8) -> np.ndarray:
    """(nf,) per-facet osc_gamma(g_N); nonzero only on Neumann facets."""
    out = np.zeros(mesh.n_facets)
    if g_N is None:
        return out
    neu = np.flatnonzero(mesh.facet_tag == NEUMANN)
    for fi in neu:
        e, i = mesh.facet_elems[fi, 0], mesh.facet_local[fi, 0]
        fverts = mesh.points[mesh.facets[fi]]
        proj = project_facet(g_N, fverts, degree)

        def residual_sq(x, proj=proj, fverts=fverts):
            mu = np.linalg.lstsq(
                (fverts[1:] - fverts[0]).T, (x - fverts[0]).T, rcond=None)[0].T
            lam = np.column_stack([1.0 - mu.sum(axis=1), mu])
            return (np.asarray(g_N(x)) - lam @ proj) ** 2

        norm2 = integrate_facet(residual_sq, fverts, degree)
        tc = trace_constants(mesh.dim, mesh.diameters[e], mesh.volumes[e],
                             mesh.facet_measures[fi], mesh.kappa[e])
        out[fi] = math.sqrt(tc.min2) * math.sqrt(max(norm2, 0.0))
    return out


# ---------------------------------------------------------------------------
# the error report
# ---------------------------------------------------------------------------

@dataclass
class ErrorReport:
    """Per-element indicators, totals, and effectivity indices."""

    strategy: str
    eta_k_tau: np.ndarray | None        # per-element eta_K of the tau selection
    eta_k_taustar: np.ndarray | None
    variant_tau: np.ndarray | None      # 1 or 2 per element
    variant_taustar: np.ndarray | None
    osc_f: np.ndarray                   # per element
    osc_gn: np.ndarray                  # per element (sum over its Neumann facets)
    eta_tau: float | None
    eta_taustar: float | None
    true_error: float | None = None
    true_error_direct: float | None = None
    ieff_tau: float | None = None
    ieff_taustar: float | None = None
    ndof: int = 0
    solver_iterations: int = 0
    audits: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        def conv(x):
            if isinstance(x, np.ndarray):
                return x.tolist()
            return x
        return {k: conv(v) for k, v in self.__dict__.items()}

    def dump_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)


def _total(eta_k, osc_f, osc_gn) -> float:
    return float(np.sqrt(((eta_k + osc_f + osc_gn) ** 2).sum()))


def estimate(mesh: Mesh, sol: FemSolution, data: ProblemData,
             strategy: str = "both", exact=None, *,
             eta1_degree: int = rec.ETA1_DEGREE, eta2_degree: int = rec.ETA2_DEGREE,
             osc_degree: int = 8, trace_degree: int = 4,
             check_conformity: bool = False,
             patch_report_path: str | None = None) -> ErrorReport:
    """Equilibrate, reconstruct, and evaluate the guaranteed error bound.

    ``strategy`` is 'tau', 'taustar' or 'both'. When ``exact`` is given (an
    object with vectorized ``value``/``gradient`` and optionally the analytic
    ``energy2`` = F(u)), the true energy error and effectivity indices are
    reported.
    """
    if strategy not in ("tau", "taustar", "both"):
        raise ValueError(f"unknown strategy {strategy!r}")
    d = mesh.dim
    fluxes = equilibrate(mesh, sol, data, patch_report_path=patch_report_path)
    R = rec.facet_residuals(mesh, fluxes, sol.grad)
    pf_vals = project_element_bulk(mesh, data.f, data.data_degree)
    u_loc = sol.u[mesh.simplices]
    r_vals = pf_vals - mesh.kappa[:, None] ** 2 * u_loc

    v1 = rec.variant1_bulk(mesh, R, r_vals)
    eta1_first, resid_const = rec.eta1_terms(mesh, v1, eta1_degree)
    audit_worst = rec.divergence_audit(mesh, resid_const, pf_vals, u_loc)
    kapparho = mesh.kappa * mesh.inradii
    pos = mesh.kappa > 0
    second = np.zeros(mesh.n_elements)
    over = kapparho > 1.0
    second[over] = (mesh.volumes[over] * resid_const[over] ** 2
                    / mesh.kappa[over] ** 2)
    eta1_sq = eta1_first + second   # divergence term only counted where kappa*rho > 1

    need2 = over if strategy == "tau" else pos
    sel = np.flatnonzero(need2)
    eta2_sq = np.full(mesh.n_elements, np.inf)
    if len(sel):
        first2, second2 = rec.eta2_terms(mesh, R, r_vals, sel, eta2_degree)
        eta2_sq[sel] = first2 + second2 / mesh.kappa[sel] ** 2

    osc_f = oscillation_f(mesh, data.f, osc_degree)
    osc_facet = oscillation_gN(mesh, data.g_N, osc_degree)
    osc_gn = np.zeros(mesh.n_elements)
    neu = np.flatnonzero(mesh.facet_tag == NEUMANN)
    if len(neu):
        np.add.at(osc_gn, mesh.facet_elems[neu, 0], osc_facet[neu])

    report = ErrorReport(
        strategy=strategy, eta_k_tau=None, eta_k_taustar=None,
        variant_tau=None, variant_taustar=None,
        osc_f=osc_f, osc_gn=osc_gn, eta_tau=None, eta_taustar=None,
        ndof=sol.ndof, solver_iterations=sol.iterations,
        audits={"divergence_residual": audit_worst,
                "equilibration_residual": fluxes.eps_max_rel},
    )

    variant_tau = np.where(over, 2, 1).astype(np.int8)
    if strategy in ("tau", "both"):
        eta_k = np.sqrt(np.where(over, eta2_sq, eta1_sq))
        report.eta_k_tau = eta_k
        report.variant_tau = variant_tau
        report.eta_tau = _total(eta_k, osc_f, osc_gn)
    if strategy in ("taustar", "both"):
        pick2 = pos & (eta2_sq < eta1_sq)
        eta_k = np.sqrt(np.where(pick2, eta2_sq, eta1_sq))
        report.eta_k_taustar = eta_k
        report.variant_taustar = np.where(pick2, 2, 1).astype(np.int8)
        report.eta_taustar = _total(eta_k, osc_f, osc_gn)

    if check_conformity:
        variant = report.variant_tau if report.variant_tau is not None \
            else report.variant_taustar
        trace, _ = rec.facet_trace_values(mesh, sol.grad, v1, R, variant, trace_degree)
        scale = np.maximum(1.0, np.abs(fluxes.gplus).max(axis=1))
        report.audits["hdiv_mismatch"] = rec.trace_mismatch(mesh, trace, scale)

    if exact is not None:
        direct, pyth = true_error(mesh, sol, exact)
        err = pyth if pyth is not None else direct
        report.true_error = err
        report.true_error_direct = direct
        if err > 0:
            if report.eta_tau is not None:
                report.ieff_tau = report.eta_tau / err
            if report.eta_taustar is not None:
                report.ieff_taustar = report.eta_taustar / err
    return report


def true_error(mesh: Mesh, sol: FemSolution, exact, degree: int = TRUE_ERROR_DEGREE):
    """Energy-norm error by two routes: direct quadrature and energy differences.

    Route (a) integrates |grad(u - u_h)|^2 + kappa^2 (u - u_h)^2 elementwise.
    Route (b) uses F(u) - 2 F(u_h) + |||u_h|||^2, which equals the Pythagoras
    difference |||u|||^2 - |||u_h|||^2 under exact Galerkin orthogonality; it
    needs ``exact.energy2`` (the analytic value of F(u)) and is exact up to
    round-off, free of boundary-layer quadrature error. Returns (a, b);
    b is None when energy2 is unavailable.
    """
    u_of = exact.value
    gu_of = exact.gradient

    # evaluate u_h and its gradient elementwise at quadrature points
    d = mesh.dim
    rule = rule_for(d, degree)
    pts = mesh.points[mesh.simplices]
    uloc = sol.u[mesh.simplices]
    acc = np.zeros(mesh.n_elements)
    k2 = mesh.kappa ** 2
    for lam, w in zip(rule.points, rule.weights):
        x = np.einsum("j,ejd->ed", lam, pts)
        du = np.asarray(gu_of(x)) - sol.grad
        dv = np.asarray(u_of(x)) - uloc @ lam
        acc += w * ((du ** 2).sum(axis=1) + k2 * dv ** 2)
    direct = math.sqrt(max(float(acc @ (mesh.volumes * math.factorial(d))), 0.0))

    energy2 = getattr(exact, "energy2", None)
    if energy2 is None:
        return direct, None
    radicand = float(energy2) - 2.0 * sol.compliance + sol.energy2
    if radicand < -1e-12 * max(abs(float(energy2)), 1.0):
        raise NegativeDifference(
            f"energy-difference radicand {radicand:.3e} is negative beyond round-off")
    return direct, math.sqrt(max(radicand, 0.0))
