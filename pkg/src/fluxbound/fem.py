"""P1 conforming finite elements for -lap(u) + kappa^2 u = f with mixed BCs.

Homogeneous Dirichlet conditions are imposed by row/column elimination, which
keeps the reduced system symmetric positive definite and the Galerkin identity
exact. Data callables are vectorized: they map an (n, d) array of points to
(n,) values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import NoConvergence, UnsolvableProblem
from .geometry import NEUMANN, Mesh
from .quadrature import rule_for

DENSE_CUTOFF = 200


@dataclass(frozen=True)
class ProblemData:
    """Source term, Neumann data and the quadrature degree used to integrate them.

    ``f`` and ``g_N`` map (n, d) point arrays to (n,) values; ``g_N=None`` means
    homogeneous Neumann data. The Dirichlet value is fixed to zero.
    """

    f: Callable
    g_N: Callable | None = None
    data_degree: int = 8


def element_stiffness_mass(mesh: Mesh):
    """Per-element stiffness |K| G G^T and unit mass |K| (1 + I) / ((d+1)(d+2))."""
    d = mesh.dim
    g = mesh.bary_grads
    stiff = np.einsum("eid,ejd->eij", g, g) * mesh.volumes[:, None, None]
    one = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    mass = mesh.volumes[:, None, None] * one
    return stiff, mass


def element_loads(mesh: Mesh, f: Callable, degree: int) -> np.ndarray:
    """(ne, d+1) array of the integrals of f against the element hat functions."""
    d = mesh.dim
    rule = rule_for(d, degree)
    pts = mesh.points[mesh.simplices]           # (ne, d+1, d)
    acc = np.zeros((mesh.n_elements, d + 1))
    for lam, w in zip(rule.points, rule.weights):
        x = np.einsum("j,ejd->ed", lam, pts)
        acc += (w * np.asarray(f(x)))[:, None] * lam
    return acc * (mesh.volumes * math.factorial(d))[:, None]


def neumann_loads(mesh: Mesh, g_N: Callable | None, degree: int) -> np.ndarray:
    """(nf, d) integrals of g_N against facet hat functions; nonzero only on Neumann facets."""
    out = np.zeros((mesh.n_facets, mesh.dim))
    if g_N is None:
        return out
    idx = np.flatnonzero(mesh.facet_tag == NEUMANN)
    if len(idx) == 0:
        return out
    d = mesh.dim
    rule = rule_for(d - 1, degree)
    pts = mesh.points[mesh.facets[idx]]         # (k, d, d)
    acc = np.zeros((len(idx), d))
    for lam, w in zip(rule.points, rule.weights):
        x = np.einsum("j,ejd->ed", lam, pts)
        acc += (w * np.asarray(g_N(x)))[:, None] * lam
    out[idx] = acc * (mesh.facet_measures[idx] * math.factorial(d - 1))[:, None]
    return out


@dataclass(frozen=True)
class LinearSystem:
    """Reduced SPD system over the non-Dirichlet vertices."""

    A: sp.csr_matrix
    b: np.ndarray
    free: np.ndarray           # vertex ids of the dofs
    vertex_to_dof: np.ndarray  # (n_points,), -1 on Dirichlet vertices


def assemble(mesh: Mesh, data: ProblemData) -> LinearSystem:
    """Assemble the P1 Galerkin system; raises UnsolvableProblem when it cannot be SPD."""
    dir_vertices = mesh.dirichlet_vertices
    if np.all(mesh.kappa == 0) and len(dir_vertices) == 0:
        raise UnsolvableProblem(
            "kappa vanishes everywhere and there is no Dirichlet boundary")
    n_pts = mesh.n_points
    vertex_to_dof = np.full(n_pts, -1, dtype=np.int64)
    free = np.setdiff1d(np.arange(n_pts), dir_vertices)
    vertex_to_dof[free] = np.arange(len(free))

    stiff, mass = element_stiffness_mass(mesh)
    local = stiff + mesh.kappa[:, None, None] ** 2 * mass
    dofs = vertex_to_dof[mesh.simplices]        # (ne, d+1)
    rows = np.repeat(dofs, mesh.dim + 1, axis=1).ravel()
    cols = np.tile(dofs, (1, mesh.dim + 1)).ravel()
    vals = local.ravel()
    keep = (rows >= 0) & (cols >= 0)
    n = len(free)
    A = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()

    b = np.zeros(n)
    loads = element_loads(mesh, data.f, data.data_degree)
    np.add.at(b, dofs.ravel()[dofs.ravel() >= 0], loads.ravel()[dofs.ravel() >= 0])
    gl = neumann_loads(mesh, data.g_N, data.data_degree)
    idx = np.flatnonzero(mesh.facet_tag == NEUMANN)
    if len(idx):
        fdofs = vertex_to_dof[mesh.facets[idx]].ravel()
        fvals = gl[idx].ravel()
        sel = fdofs >= 0
        np.add.at(b, fdofs[sel], fvals[sel])
    return LinearSystem(A=A, b=b, free=free, vertex_to_dof=vertex_to_dof)


def solve(A, b, tol: float = 1e-12, max_iter: int | None = None):
    """Solve an SPD system: dense Cholesky below 200 unknowns, Jacobi-PCG above.

    Returns ``(x, iterations, relative_residual)`` with
    ||b - A x|| <= tol * ||b|| whenever that is attainable in float64; when the
    round-off floor eps * || |A| |x| || lies above the target the iteration
    stops there and reports the achieved residual instead of stalling. Raises
    NoConvergence after max_iter (default 10n) and UnsolvableProblem when the
    SPD precheck fails.
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    if n == 0:
        return np.zeros(0), 0, 0.0
    A = sp.csr_matrix(A)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise UnsolvableProblem("matrix has a nonpositive diagonal entry")
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        return np.zeros(n), 0, 0.0
    if n < DENSE_CUTOFF:
        dense = A.toarray()
        try:
            c, low = scipy.linalg.cho_factor(dense, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise UnsolvableProblem(f"dense Cholesky failed: {exc}") from None
        x = scipy.linalg.cho_solve((c, low), b, check_finite=False)
        res = float(np.linalg.norm(b - A @ x)) / nb
        return x, 1, res

    if max_iter is None:
        max_iter = 10 * n
    inv_diag = 1.0 / diag
    abs_A = None
    eps = np.finfo(float).eps
    x = np.zeros(n)
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    best = np.inf
    strikes = 0
    for it in range(1, max_iter + 1):
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * nb or it % 64 == 0:
            true_r = b - A @ x   # recurrence drift check
            res = float(np.linalg.norm(true_r))
            if abs_A is None:
                abs_A = abs(A)
            floor = 128.0 * eps * (float(np.linalg.norm(abs_A @ np.abs(x))) + nb)
            if res <= max(tol * nb, floor):
                return x, it, res / nb
            # a plateau at the round-off floor counts as converged; a plateau
            # well above it is a genuine failure
            strikes = strikes + 1 if res > 0.5 * best else 0
            best = min(best, res)
            if strikes >= 3:
                if res <= 64.0 * floor:
                    return x, it, res / nb
                raise NoConvergence(
                    f"PCG stagnated at relative residual {res / nb:.3e}")
            r = true_r
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NoConvergence(f"PCG did not reach {tol:g} within {max_iter} iterations")


@dataclass(frozen=True)
class FemSolution:
    """Nodal P1 solution with its per-element gradient and solver diagnostics."""

    mesh: Mesh
    u: np.ndarray              # (n_points,), zero on Dirichlet vertices
    grad: np.ndarray           # (ne, d), constant per element
    iterations: int
    residual: float
    ndof: int
    energy2: float             # x . A x  =  |||u_h|||^2 (exact up to round-off)
    compliance: float          # b . x    =  F(u_h) up to data-quadrature error

    @classmethod
    def from_vertex_values(cls, mesh: Mesh, values) -> "FemSolution":
        """Wrap arbitrary nodal values (for reconstruction on non-Galerkin u_h)."""
        u = np.asarray(values, dtype=float)
        grad = np.einsum("eid,ei->ed", mesh.bary_grads, u[mesh.simplices])
        return cls(mesh=mesh, u=u, grad=grad, iterations=0, residual=0.0,
                   ndof=0, energy2=float("nan"), compliance=float("nan"))


def solve_problem(mesh: Mesh, data: ProblemData, tol: float = 1e-12,
                  max_iter: int | None = None) -> FemSolution:
    """Assemble and solve; the returned solution carries the Galerkin energies."""
    system = assemble(mesh, data)
    x, iters, res = solve(system.A, system.b, tol=tol, max_iter=max_iter)
    u = np.zeros(mesh.n_points)
    u[system.free] = x
    grad = np.einsum("eid,ei->ed", mesh.bary_grads, u[mesh.simplices])
    return FemSolution(mesh=mesh, u=u, grad=grad, iterations=iters, residual=res,
                       ndof=len(system.free), energy2=float(x @ (system.A @ x)),
                       compliance=float(system.b @ x))


# ---------------------------------------------------------------------------
# L2 projections onto affine functions
# ---------------------------------------------------------------------------

def _mass_inverse_times(values: np.ndarray, measure, k: int):
    # inverse of the P1 mass matrix of a k-simplex: (I + 11^T)^-1 = I - 11^T/(k+2)
    scale = (k + 1) * (k + 2) / measure
    return scale * (values - values.sum(axis=-1, keepdims=True) / (k + 2))


def project_element(f: Callable, vertices, degree: int = 8) -> np.ndarray:
    """Vertex values of the L2(K)-orthogonal projection of f onto affine functions."""
    vertices = np.asarray(vertices, dtype=float)
    d = vertices.shape[1]
    rule = rule_for(d, degree)
    x = rule.points @ vertices
    from .geometry import simplex_volume
    vol = simplex_volume(vertices)
    rhs = (rule.weights[:, None] * rule.points * np.asarray(f(x))[:, None]).sum(axis=0)
    rhs *= vol * math.factorial(d)
    return _mass_inverse_times(rhs, vol, d)


def project_facet(g: Callable, vertices, degree: int = 8) -> np.ndarray:
    """Facet-vertex values of the L2(gamma)-orthogonal projection onto affine functions."""
    vertices = np.asarray(vertices, dtype=float)
    d = vertices.shape[1]
    rule = rule_for(d - 1, degree)
    x = rule.points @ vertices
    v = vertices[1:] - vertices[0]
    meas = math.sqrt(max(np.linalg.det(v @ v.T), 0.0)) / math.factorial(d - 1)
    rhs = (rule.weights[:, None] * rule.points * np.asarray(g(x))[:, None]).sum(axis=0)
    rhs *= meas * math.factorial(d - 1)
    return _mass_inverse_times(rhs, meas, d - 1)


def project_element_bulk(mesh: Mesh, f: Callable, degree: int = 8) -> np.ndarray:
    """(ne, d+1) vertex values of the elementwise projection of f."""
    loads = element_loads(mesh, f, degree)
    return _mass_inverse_times(loads, mesh.volumes[:, None], mesh.dim)


# ---------------------------------------------------------------------------
# energy norms
# ---------------------------------------------------------------------------

def energy_norm(mesh: Mesh, v: Callable, grad_v: Callable, degree: int) -> float:
    """Energy norm sqrt(sum_K int |grad v|^2 + kappa_K^2 v^2) by quadrature.

    ``grad_v`` maps (n, d) points to (n, d) gradients.
    """
    d = mesh.dim
    rule = rule_for(d, degree)
    pts = mesh.points[mesh.simplices]
    acc = np.zeros(mesh.n_elements)
    k2 = mesh.kappa ** 2
    for lam, w in zip(rule.points, rule.weights):
        x = np.einsum("j,ejd->ed", lam, pts)
        gv = np.asarray(grad_v(x))
        vv = np.asarray(v(x))
        acc += w * ((gv ** 2).sum(axis=1) + k2 * vv ** 2)
    total = acc @ (mesh.volumes * math.factorial(d))
    return math.sqrt(max(total, 0.0))


def energy_norm_fe(sol: FemSolution) -> float:
    """Exact energy norm of a P1 finite element function."""
    mesh = sol.mesh
    _, mass = element_stiffness_mass(mesh)
    uloc = sol.u[mesh.simplices]
    grad_part = (sol.grad ** 2).sum(axis=1) * mesh.volumes
    mass_part = mesh.kappa ** 2 * np.einsum("ei,eij,ej->e", uloc, mass, uloc)
    return math.sqrt(max(float((grad_part + mass_part).sum()), 0.0))
