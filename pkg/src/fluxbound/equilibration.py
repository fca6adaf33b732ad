"""Robustly equilibrated boundary fluxes.

Every facet carries one affine flux g_K, realized as

    g_K = <du_h/dn_K>  +  sigma_{K,gamma} * sum_m alpha_gamma^m psi_gamma^m,

where the psi_gamma^m are the dual basis of the facet hat functions. Sharing
the coefficients across the two sides with opposite orientation signs makes
g_K + g_K' = 0 identically; on Neumann facets the coefficients are fixed so
that g_K equals the facet projection of the Neumann data.

The free coefficients are determined per mesh vertex: on patch elements with
kappa_K * rho_K <= 1 the residual of u_h against the vertex hat function must
vanish exactly; on the remaining elements the residual against an approximate
minimum-energy extension (a hat collapsing over a layer of width ~ 1/kappa)
is minimized in the least-squares sense, with minimal-norm tie-breaking.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleConstraints
from .fem import (FemSolution, ProblemData, _mass_inverse_times,
                  element_loads, element_stiffness_mass, neumann_loads)
from .geometry import NEUMANN, Mesh, barycentric_gradients, simplex_volume
from .quadrature import rule_for

RANK_TOL = 1e-12        # relative singular value cutoff in the patch solves
CONSTRAINT_TOL = 1e-9   # residual threshold (times local scale) for feasibility

EXTENSION_DEGREE = 2    # quadrature degree for the extension volume terms


def facet_average_and_jump(mesh: Mesh, grad: np.ndarray):
    """Average and jump of the normal flux of u_h per facet, seen from the plus side.

    Boundary facets use the one-sided convention: average = own flux, jump = 0.
    """
    ep, lp = mesh.facet_elems[:, 0], mesh.facet_local[:, 0]
    g = mesh.bary_grads[ep, lp]
    n_plus = -g / np.linalg.norm(g, axis=1, keepdims=True)
    flux_plus = np.einsum("fd,fd->f", n_plus, grad[ep])
    interior = mesh.facet_elems[:, 1] >= 0
    em = mesh.facet_elems[interior, 1]
    flux_minus = np.einsum("fd,fd->f", n_plus[interior], grad[em])
    avg = flux_plus.copy()
    jump = np.zeros_like(flux_plus)
    avg[interior] = 0.5 * (flux_plus[interior] + flux_minus)
    jump[interior] = flux_plus[interior] - flux_minus
    return avg, jump


def dual_basis(facet_vertices) -> np.ndarray:
    """Rows are the vertex values of the facet dual functions psi^m.

    psi^m is affine on the facet with int_gamma psi^m theta_n = delta_{mn};
    the matrix is the inverse of the facet P1 mass matrix.
    """
    facet_vertices = np.asarray(facet_vertices, dtype=float)
    d = facet_vertices.shape[1]
    v = facet_vertices[1:] - facet_vertices[0]
    meas = math.sqrt(max(np.linalg.det(v @ v.T), 0.0)) / math.factorial(d - 1)
    return _mass_inverse_times(np.eye(d), meas, d - 1)


# ---------------------------------------------------------------------------
# approximate minimum-energy extensions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtensionFunction:
    """The hat function of vertex n, or its collapsed piecewise-affine extension.

    For kappa * rho > 1 the interior value is pulled to zero at a point x_P
    close to vertex n (barycentric delta = min(1, 1/(kappa*rho))/d on the other
    vertices), making the support of the gradient a layer of width ~ 1/kappa.
    The extension agrees with the plain hat on the element boundary.
    """

    vertices: np.ndarray
    vertex_index: int
    kappa: float
    plain: bool
    delta: float | None = None
    x_p: np.ndarray | None = None
    subsimplices: np.ndarray | None = None   # (d+1, d+1, d), x_P is the last vertex
    subvalues: np.ndarray | None = None      # (d+1, d+1)

    def evaluate(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.plain:
            g = barycentric_gradients(self.vertices)
            lam = (x - self.vertices[0]) @ g[self.vertex_index]
            if self.vertex_index == 0:
                lam += 1.0
            return lam
        out = np.full(len(x), np.nan)
        best = np.full(len(x), -np.inf)
        for sub, vals in zip(self.subsimplices, self.subvalues):
            g = barycentric_gradients(sub)
            lam = (x - sub[0]) @ g.T
            lam[:, 0] += 1.0
            lo = lam.min(axis=1)
            better = lo > best
            out[better] = lam[better] @ vals
            best[better] = lo[better]
        return out

    def l2_norm_sq(self) -> float:
        """int_K (theta*)^2, exact (the integrand is piecewise quadratic)."""
        if self.plain:
            d = self.vertices.shape[1]
            vol = simplex_volume(self.vertices)
            return 2.0 * vol / ((d + 1) * (d + 2))
        total = 0.0
        d = self.vertices.shape[1]
        for sub, vals in zip(self.subsimplices, self.subvalues):
            vol = abs(np.linalg.det(sub[1:] - sub[0])) / math.factorial(d)
            total += vol * (vals @ vals + vals.sum() ** 2) / ((d + 1) * (d + 2))
        return total


def extension(vertices, kappa: float, n: int) -> ExtensionFunction:
    """Approximate minimum-energy extension of the hat of local vertex n."""
    vertices = np.asarray(vertices, dtype=float)
    d = vertices.shape[1]
    from .geometry import geometric_quantities
    q = geometric_quantities(vertices)
    if kappa * q.inradius <= 1.0:
        return ExtensionFunction(vertices=vertices, vertex_index=n, kappa=kappa, plain=True)
    delta = min(1.0, 1.0 / (kappa * q.inradius)) / d
    coeff = np.full(d + 1, delta)
    coeff[n] = 1.0 - d * delta
    x_p = coeff @ vertices
    subs = np.empty((d + 1, d + 1, d))
    vals = np.zeros((d + 1, d + 1))
    hat = np.zeros(d + 1)
    hat[n] = 1.0
    for i in range(d + 1):
        subs[i, :d] = np.delete(vertices, i, axis=0)
        subs[i, d] = x_p
        vals[i, :d] = np.delete(hat, i)
    return ExtensionFunction(vertices=vertices, vertex_index=n, kappa=kappa, plain=False,
                             delta=delta, x_p=x_p, subsimplices=subs, subvalues=vals)


# ---------------------------------------------------------------------------
# residual functionals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualData:
    """Per-(element, vertex) residuals entering the patch problems.

    ``D[e, n]`` is the data residual of the hat function of local vertex n with
    the average flux as boundary term; adding sigma-signed alpha coefficients of
    the non-Neumann facets containing the vertex gives the full residual.
    ``Dstar`` is the same with the collapsed extension (equal to D where
    kappa*rho <= 1). ``scale`` tracks the magnitudes for tolerance scaling.
    """

    D: np.ndarray
    Dstar: np.ndarray
    scale: np.ndarray
    gn_loads: np.ndarray
    avg: np.ndarray
    jump: np.ndarray
    kapparho: np.ndarray


def residual_functionals(mesh: Mesh, sol: FemSolution, data: ProblemData,
                         avg_jump=None) -> ResidualData:
    d = mesh.dim
    ne = mesh.n_elements
    if avg_jump is None:
        avg_jump = facet_average_and_jump(mesh, sol.grad)
    avg, jump = avg_jump

    F1 = element_loads(mesh, data.f, data.data_degree)
    gnl = neumann_loads(mesh, data.g_N, data.data_degree)

    _, mass = element_stiffness_mass(mesh)
    uloc = sol.u[mesh.simplices]
    b_stiff = np.einsum("ed,end->en", sol.grad, mesh.bary_grads) * mesh.volumes[:, None]
    b_mass = mesh.kappa[:, None] ** 2 * np.einsum("eij,ej->ei", mass, uloc)

    slot = mesh.elem_facet_slot                       # (ne, d+1, d+1)
    fids = mesh.elem_facets
    tags = mesh.facet_tag[fids]                       # (ne, d+1)
    valid = slot >= 0

    gather = gnl[fids[:, :, None], np.clip(slot, 0, d - 1)]   # (ne, d+1, d+1)
    Fg = np.where(valid & (tags[:, :, None] == NEUMANN), gather, 0.0).sum(axis=1)

    per_facet = np.where(tags != NEUMANN,
                         mesh.elem_sigma * avg[fids] * mesh.facet_measures[fids] / d, 0.0)
    avgterm = per_facet.sum(axis=1, keepdims=True) - per_facet

    D = F1 + Fg - b_stiff - b_mass + avgterm
    scale = (np.abs(F1) + np.abs(Fg) + np.abs(b_stiff) + np.abs(b_mass)
             + np.abs(per_facet).sum(axis=1, keepdims=True))

    kapparho = mesh.kappa * mesh.inradii
    Dstar = D.copy()
    sel = np.flatnonzero(kapparho > 1.0)
    if len(sel):
        Dstar[sel] = (_extension_volume_terms(mesh, sol, data, sel)
                      + Fg[sel] + avgterm[sel])
    return ResidualData(D=D, Dstar=Dstar, scale=scale, gn_loads=gnl,
                        avg=avg, jump=jump, kapparho=kapparho)


def _extension_volume_terms(mesh: Mesh, sol: FemSolution, data: ProblemData,
                            sel: np.ndarray) -> np.ndarray:
    """int_K f theta* - B_K(u_h, theta*) for the collapsed extensions, per vertex."""
    d = mesh.dim
    pts = mesh.points[mesh.simplices[sel]]            # (k, d+1, d)
    uloc = sol.u[mesh.simplices[sel]]
    grad_u = sol.grad[sel]
    k2 = mesh.kappa[sel] ** 2
    delta = 1.0 / (d * mesh.kappa[sel] * mesh.inradii[sel])  # kappa*rho > 1 on sel
    rule = rule_for(d, EXTENSION_DEGREE)
    out = np.zeros((len(sel), d + 1))
    others = [np.delete(np.arange(d + 1), i) for i in range(d + 1)]
    dfact = math.factorial(d)
    for n in range(d + 1):
        coeff = np.full((len(sel), d + 1), delta[:, None])
        coeff[:, n] = 1.0 - d * delta
        x_p = np.einsum("kj,kjd->kd", coeff, pts)
        u_p = np.einsum("kj,kj->k", coeff, uloc)
        for i in range(d + 1):
            if i == n:
                continue   # theta* vanishes on the subsimplex opposite its vertex
            keep = others[i]
            sverts = np.concatenate([pts[:, keep], x_p[:, None, :]], axis=1)
            edges = np.swapaxes(sverts[:, 1:] - sverts[:, :1], 1, 2)
            svol = np.abs(np.linalg.det(edges)) / dfact
            inv = np.linalg.inv(edges)
            sgrads = np.empty_like(sverts)
            sgrads[:, 1:] = inv
            sgrads[:, 0] = -inv.sum(axis=1)
            local_slot = int(np.searchsorted(keep, n))
            svals = np.zeros(d + 1)
            svals[local_slot] = 1.0
            su = np.concatenate([uloc[:, keep], u_p[:, None]], axis=1)
            # int f theta* by quadrature; the remaining terms are exact
            ft = np.zeros(len(sel))
            for lam, w in zip(rule.points, rule.weights):
                x = np.einsum("j,kjd->kd", lam, sverts)
                ft += w * np.asarray(data.f(x)) * lam[local_slot]
            ft *= svol * dfact
            stiff = svol * np.einsum("kd,kd->k", grad_u, sgrads[:, local_slot])
            mass = (svol / ((d + 1) * (d + 2)) * k2
                    * (su.sum(axis=1) + su[:, local_slot]))
            out[:, n] += ft - stiff - mass
    return out


# ---------------------------------------------------------------------------
# patch solves and assembly
# ---------------------------------------------------------------------------

def _min_norm_lstsq(A: np.ndarray, b: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Minimal-norm least squares with the rank cutoff floored at `floor`.

    The floor matters in the reduced problem E Z: when an objective row lies in
    the constraint row space, E Z is pure round-off noise and a cutoff relative
    to its own largest singular value would happily invert it, producing a huge
    coefficient vector that wrecks the constraints.
    """
    if A.size == 0:
        return np.zeros(A.shape[1])
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    cutoff = RANK_TOL * max(s[0] if len(s) else 0.0, floor)
    keep = s > cutoff
    if not np.any(keep):
        return np.zeros(A.shape[1])
    return vt[keep].T @ ((u[:, keep].T @ b) / s[keep])

def solve_vertex_patch(mesh: Mesh, v: int, resid: ResidualData):
    """Coefficients for the non-Neumann facets containing vertex v.

    Returns ``(facet_ids, alphas, info)``; info carries the constraint residual
    and objective value for diagnostics. Raises InfeasibleConstraints when the
    equality constraints cannot be met.
    """
    els, locs = mesh.vertex_patch(v)
    fids, _ = mesh.vertex_facets(v)
    unknown = fids[mesh.facet_tag[fids] != NEUMANN]
    nu = len(unknown)
    k = len(els)
    if k == 0:
        return unknown, np.zeros(nu), (0, nu, 0.0, 0.0)

    fac = mesh.elem_facets[els]
    sig = mesh.elem_sigma[els]
    keep = np.ones_like(fac, dtype=bool)
    keep[np.arange(k), locs] = False
    keep &= mesh.facet_tag[fac] != NEUMANN
    M = np.zeros((k, nu))
    rr, cc = np.nonzero(keep)
    M[rr, np.searchsorted(unknown, fac[rr, cc])] = sig[rr, cc]

    cons = resid.kapparho[els] <= 1.0
    C, c = M[cons], -resid.D[els[cons], locs[cons]]
    E, e = M[~cons], -resid.Dstar[els[~cons], locs[~cons]]
    scale = float(resid.scale[els, locs].max()) if k else 0.0
    tol = CONSTRAINT_TOL * max(scale, 1e-300)

    if nu == 0:
        bad = np.abs(c).max() if len(c) else 0.0
        if bad > tol:
            raise InfeasibleConstraints(
                f"vertex {v}: constraint residual {bad:.3e} with no free coefficients")
        return unknown, np.zeros(0), (len(c), 0, 0.0, float(bad))

    if len(c) == 0:
        alpha = _min_norm_lstsq(E, e) if len(e) else np.zeros(nu)
        obj = float(np.sum((E @ alpha - e) ** 2)) if len(e) else 0.0
        return unknown, alpha, (0, nu, obj, 0.0)

    u_svd, s, vt = np.linalg.svd(C, full_matrices=True)
    rank = int(np.sum(s > RANK_TOL * s[0])) if len(s) and s[0] > 0 else 0
    if rank:
        alpha0 = vt[:rank].T @ ((u_svd[:, :rank].T @ c) / s[:rank])
    else:
        alpha0 = np.zeros(nu)
    res = float(np.abs(C @ alpha0 - c).max())
    if res > tol:
        raise InfeasibleConstraints(
            f"vertex {v}: equality-constraint residual {res:.3e} exceeds {tol:.3e}")
    Z = vt[rank:].T
    if len(e) and Z.shape[1]:
        beta = _min_norm_lstsq(E @ Z, e - E @ alpha0,
                               floor=float(np.linalg.norm(E, 2)))
        alpha = alpha0 + Z @ beta
        res = float(np.abs(C @ alpha - c).max())
        if res > tol:
            raise InfeasibleConstraints(
                f"vertex {v}: constraints degraded to {res:.3e} by the objective step")
    else:
        alpha = alpha0
    obj = float(np.sum((E @ alpha - e) ** 2)) if len(e) else 0.0
    return unknown, alpha, (len(c), nu, obj, res)


@dataclass(frozen=True)
class BoundaryFluxSet:
    """Solved facet fluxes; ``gplus`` holds g_K of the plus side in canonical order."""

    gplus: np.ndarray       # (nf, d) facet-vertex values seen from the plus side
    alphas: np.ndarray      # (nf, d) coefficients (fixed on Neumann facets)
    avg: np.ndarray         # (nf,) plus-side average normal flux
    jump: np.ndarray        # (nf,) plus-side flux jump
    eps_max_rel: float      # worst scaled equality residual over constrained elements

    def g_on(self, mesh: Mesh, e: int, local_facet: int) -> np.ndarray:
        """g_K of element e on its local facet, in canonical facet-vertex order."""
        fid = mesh.elem_facets[e, local_facet]
        return mesh.elem_sigma[e, local_facet] * self.gplus[fid]


def equilibration_residuals(mesh: Mesh, resid: ResidualData, alphas: np.ndarray):
    """Assembled residuals eps[e, n] = D[e, n] + sum sigma * alpha over the vertex's facets."""
    d = mesh.dim
    slot = mesh.elem_facet_slot
    fids = mesh.elem_facets
    tags = mesh.facet_tag[fids]
    gathered = alphas[fids[:, :, None], np.clip(slot, 0, d - 1)]
    mask = (slot >= 0) & (tags[:, :, None] != NEUMANN)
    return resid.D + np.where(mask, mesh.elem_sigma[:, :, None] * gathered, 0.0).sum(axis=1)


def equilibrate(mesh: Mesh, sol: FemSolution, data: ProblemData, *,
                patch_report_path: str | None = None) -> BoundaryFluxSet:
    """Solve all vertex-patch problems and assemble the boundary fluxes.

    Postcondition (audited): on every element with kappa*rho <= 1 the assembled
    residuals vanish to 1e-9 relative to the local data scale, which is the
    exact equilibration property against affine functions.
    """
    d = mesh.dim
    resid = residual_functionals(mesh, sol, data)
    alphas = np.zeros((mesh.n_facets, d))

    neu = np.flatnonzero(mesh.facet_tag == NEUMANN)
    if len(neu):
        alphas[neu] = resid.gn_loads[neu] - resid.avg[neu, None] * \
            (mesh.facet_measures[neu] / d)[:, None]

    report = [] if patch_report_path else None
    slot_cache = mesh._vertex_facet_data
    offsets = mesh._vertex_facet_offsets
    for v in range(mesh.n_points):
        unknown, alpha, info = solve_vertex_patch(mesh, v, resid)
        if len(unknown):
            rows = slot_cache[offsets[v]:offsets[v + 1]]
            keep = mesh.facet_tag[rows[:, 0]] != NEUMANN
            alphas[rows[keep, 0], rows[keep, 1]] = alpha
        if report is not None:
            report.append((v, *info))

    gplus = resid.avg[:, None] + _mass_inverse_times(
        alphas, mesh.facet_measures[:, None], d - 1)
    if len(neu):
        gplus[neu] = _mass_inverse_times(
            resid.gn_loads[neu], mesh.facet_measures[neu, None], d - 1)

    eps = equilibration_residuals(mesh, resid, alphas)
    constrained = resid.kapparho <= 1.0
    rel = np.abs(eps[constrained]) / np.maximum(resid.scale[constrained], 1e-300)
    eps_max_rel = float(rel.max()) if rel.size else 0.0
    if eps_max_rel > CONSTRAINT_TOL:
        raise InfeasibleConstraints(
            f"assembled equilibration residual {eps_max_rel:.3e} exceeds {CONSTRAINT_TOL:g}")

    if patch_report_path:
        with open(patch_report_path, "w", encoding="utf-8") as fh:
            fh.write("vertex,n_constraints,n_unknowns,objective,constraint_residual\n")
            for row in report:
                fh.write(f"{row[0]},{row[1]},{row[2]},{row[3]:.6e},{row[4]:.6e}\n")

    return BoundaryFluxSet(gplus=gplus, alphas=alphas, avg=resid.avg,
                           jump=resid.jump, eps_max_rel=eps_max_rel)
