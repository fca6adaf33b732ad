"""Exact-degree quadrature on simplices of any dimension.

Rules come from the Grundmann-Moller family: the rule of index s integrates
polynomials of total degree 2s+1 exactly on the unit simplex. Nodes are stored
as barycentric coordinates, weights sum to the reference-simplex volume 1/d!,
so an integral over a physical simplex K is

    sum_q  w_q * |K| * d! * f(x_q).

Weights of the family alternate in sign; only exactness is guaranteed to
callers, not node placement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import UnsupportedDegree

MAX_DEGREE = 12


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes (barycentric) and weights for one simplex dimension.

    ``degree`` is the guaranteed exactness degree (may exceed the requested one,
    the family only provides odd degrees 2s+1).
    """

    dim: int
    degree: int
    points: np.ndarray   # (nq, dim+1) barycentric coordinates
    weights: np.ndarray  # (nq,), sum to 1/dim!

    def __post_init__(self):
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def n_points(self) -> int:
        return len(self.weights)


def _compositions(total: int, parts: int):
    """All tuples of `parts` nonnegative integers summing to `total`."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for tail in _compositions(total - head, parts - 1):
            yield (head,) + tail


@lru_cache(maxsize=None)
def rule_for(dim: int, degree: int) -> QuadratureRule:
    """Return a rule exact for polynomials of total degree <= `degree` on a dim-simplex."""
    if dim < 1:
        raise ValueError(f"simplex dimension must be >= 1, got {dim}")
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    if degree > MAX_DEGREE:
        raise UnsupportedDegree(f"degree {degree} exceeds the supported maximum {MAX_DEGREE}")
    s = max(0, math.ceil((degree - 1) / 2))
    exact = 2 * s + 1
    pts, wts = [], []
    for i in range(s + 1):
        denom = dim + 1 + 2 * (s - i)
        w = ((-1.0) ** i * 0.5 ** (2 * s) * float(denom) ** exact
             / (math.factorial(i) * math.factorial(exact + dim - i)))
        for beta in _compositions(s - i, dim + 1):
            pts.append([(2 * b + 1) / denom for b in beta])
            wts.append(w)
    return QuadratureRule(dim, exact, np.array(pts, dtype=float), np.array(wts, dtype=float))


def _measure(vertices: np.ndarray) -> float:
    """k-volume of the simplex spanned by k+1 vertices embedded in R^d (Gram determinant)."""
    v = vertices[1:] - vertices[0]
    k = len(vertices) - 1
    gram = v @ v.T
    det = np.linalg.det(gram)
    return math.sqrt(max(det, 0.0)) / math.factorial(k)


def _integrate(f: Callable, vertices: np.ndarray, k: int, degree: int) -> float:
    rule = rule_for(k, degree)
    x = rule.points @ vertices
    vals = np.asarray(f(x), dtype=float)
    return float(rule.weights @ vals) * _measure(vertices) * math.factorial(k)


def integrate(f: Callable, vertices, degree: int) -> float:
    """Integrate ``f`` over the full-dimensional simplex with the given vertices.

    ``f`` maps an (nq, d) array of points to (nq,) values; exact when f is a
    polynomial of total degree <= `degree`.
    """
    vertices = np.asarray(vertices, dtype=float)
    d = vertices.shape[1]
    if vertices.shape[0] != d + 1:
        raise ValueError("expected d+1 vertices for a d-simplex")
    return _integrate(f, vertices, d, degree)


def integrate_facet(f: Callable, vertices, degree: int) -> float:
    """Integrate ``f`` over a (d-1)-simplex facet embedded in R^d (d vertices)."""
    vertices = np.asarray(vertices, dtype=float)
    d = vertices.shape[1]
    if vertices.shape[0] != d:
        raise ValueError("expected d vertices for a facet in R^d")
    return _integrate(f, vertices, d - 1, degree)
