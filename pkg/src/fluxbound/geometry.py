"""Simplicial meshes in arbitrary dimension d >= 2 with cached geometry.

Conventions used throughout the package:

* element vertex ids are sorted ascending per element and elements are sorted
  lexicographically (canonical form, makes every downstream computation
  independent of the input ordering);
* a local facet index i refers to the facet opposite local vertex i;
* facet vertex ids are stored sorted ascending ("canonical facet order") and
  per-facet vertex data (flux values, residuals) follows that order;
* each facet carries an orientation sign: +1 for the incident element with the
  smaller element id (the "plus side"), -1 for the other.

Mesh text format (whitespace separated, '#' comments):

    DIM d
    POINTS n        followed by n lines of d coordinates
    CELLS m         followed by m lines of d+1 vertex ids and kappa
    BOUNDARY k      followed by k lines of d vertex ids and a tag D or N
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateSimplex, KappaJumpWarning, MeshFormatError,
                     NonConformingMesh)

INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2

DEGENERACY_FACTOR = 1e-14  # reject elements with volume < factor * h^d


# ---------------------------------------------------------------------------
# single-simplex operations
# ---------------------------------------------------------------------------

def _diameter(pts: np.ndarray) -> float:
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff ** 2).sum(-1)).max())


def simplex_volume(pts) -> float:
    """Volume |det(p_1-p_0, ..., p_d-p_0)| / d! of a non-degenerate d-simplex."""
    pts = np.asarray(pts, dtype=float)
    d = pts.shape[1]
    vol = abs(np.linalg.det(pts[1:] - pts[0])) / math.factorial(d)
    h = _diameter(pts)
    if vol < DEGENERACY_FACTOR * h ** d:
        raise DegenerateSimplex(f"volume {vol:.3e} below threshold for h={h:.3e}")
    return vol


def barycentric_gradients(pts) -> np.ndarray:
    """Gradients of the d+1 barycentric coordinates; rows sum to zero."""
    pts = np.asarray(pts, dtype=float)
    simplex_volume(pts)  # degeneracy guard
    edges = (pts[1:] - pts[0]).T  # columns are edge vectors
    ginv = np.linalg.inv(edges)   # row i-1 is grad(lambda_i)
    grads = np.empty_like(pts)
    grads[1:] = ginv
    grads[0] = -ginv.sum(axis=0)
    return grads


def _facet_measures_single(pts: np.ndarray) -> np.ndarray:
    d = pts.shape[1]
    meas = np.empty(d + 1)
    for i in range(d + 1):
        fpts = np.delete(pts, i, axis=0)
        v = fpts[1:] - fpts[0]
        meas[i] = math.sqrt(max(np.linalg.det(v @ v.T), 0.0)) / math.factorial(d - 1)
    return meas


@dataclass(frozen=True)
class GeometricQuantities:
    volume: float
    diameter: float          # h_K
    inradius: float          # rho_K
    incentre: np.ndarray
    centroid: np.ndarray
    facet_measures: np.ndarray  # |gamma_i|, facet opposite vertex i
    altitudes: np.ndarray       # d |K| / |gamma_i|


def geometric_quantities(pts) -> GeometricQuantities:
    """Diameter, inradius, incentre, centroid, facet measures and altitudes of a simplex."""
    pts = np.asarray(pts, dtype=float)
    d = pts.shape[1]
    vol = simplex_volume(pts)
    meas = _facet_measures_single(pts)
    total = meas.sum()
    rho = d * vol / total
    incentre = (meas[:, None] * pts).sum(axis=0) / total
    return GeometricQuantities(
        volume=vol,
        diameter=_diameter(pts),
        inradius=rho,
        incentre=incentre,
        centroid=pts.mean(axis=0),
        facet_measures=meas,
        altitudes=d * vol / meas,
    )


def local_facet_frame(pts, facet_index: int):
    """Orthonormal frame attached to facet `facet_index` (opposite that vertex).

    Returns ``(origin, frame)`` where frame rows e_1..e_{d-1} span the facet
    plane and e_d is the unit normal pointing into the simplex, so that
    x_d = (x - origin) . e_d is >= 0 on K, zero on the facet, and equals the
    inradius at the incentre.
    """
    pts = np.asarray(pts, dtype=float)
    d = pts.shape[1]
    grads = barycentric_gradients(pts)
    e_d = grads[facet_index] / np.linalg.norm(grads[facet_index])
    fpts = np.delete(pts, facet_index, axis=0)
    edges = (fpts[1:] - fpts[0]).T  # (d, d-1)
    q, _ = np.linalg.qr(edges)
    frame = np.empty((d, d))
    frame[:d - 1] = q.T
    frame[d - 1] = e_d
    return fpts[0].copy(), frame


# ---------------------------------------------------------------------------
# facet adjacency
# ---------------------------------------------------------------------------

def build_facet_adjacency(simplices: np.ndarray):
    """Facet table of a conforming element list.

    Returns ``(facets, facet_elems, facet_local, elem_facets, elem_sigma)``:
    facets (nf, d) canonical vertex ids; facet_elems (nf, 2) element ids with -1
    for the missing side of a boundary facet; facet_local the matching local
    facet indices; elem_facets (ne, d+1) the inverse map; elem_sigma (ne, d+1)
    the orientation signs (+1 on the smaller incident element id).
    """
    ne, dp1 = simplices.shape
    d = dp1 - 1
    faces = np.empty((ne * dp1, d), dtype=simplices.dtype)
    for i in range(dp1):
        faces[i::dp1] = np.delete(simplices, i, axis=1)
    owner_elem = np.repeat(np.arange(ne), dp1)
    owner_local = np.tile(np.arange(dp1), ne)

    order = np.lexsort(faces.T[::-1])
    faces_sorted = faces[order]
    new_group = np.ones(len(faces_sorted), dtype=bool)
    new_group[1:] = np.any(faces_sorted[1:] != faces_sorted[:-1], axis=1)
    group_ids = np.cumsum(new_group) - 1
    nf = group_ids[-1] + 1 if len(group_ids) else 0
    counts = np.bincount(group_ids, minlength=nf)
    if np.any(counts > 2):
        bad = np.flatnonzero(counts > 2)[0]
        verts = faces_sorted[np.searchsorted(group_ids, bad)]
        raise NonConformingMesh(
            f"facet {tuple(int(v) for v in verts)} is shared by {counts[bad]} elements")

    facets = faces_sorted[new_group]
    facet_elems = np.full((nf, 2), -1, dtype=np.int64)
    facet_local = np.full((nf, 2), -1, dtype=np.int64)
    elems_sorted = owner_elem[order]
    locals_sorted = owner_local[order]
    starts = np.flatnonzero(new_group)
    # within a group, order sides by element id so side 0 is the plus side
    first_e = elems_sorted[starts]
    facet_elems[:, 0] = first_e
    facet_local[:, 0] = locals_sorted[starts]
    two = counts == 2
    second_e = elems_sorted[starts[two] + 1]
    second_l = locals_sorted[starts[two] + 1]
    swap = second_e < facet_elems[two, 0]
    fe = facet_elems[two]
    fl = facet_local[two]
    fe[:, 1] = np.where(swap, fe[:, 0], second_e)
    fl[:, 1] = np.where(swap, fl[:, 0], second_l)
    fe[:, 0] = np.where(swap, second_e, fe[:, 0])
    fl[:, 0] = np.where(swap, second_l, fl[:, 0])
    facet_elems[two] = fe
    facet_local[two] = fl

    elem_facets = np.empty((ne, dp1), dtype=np.int64)
    elem_sigma = np.empty((ne, dp1), dtype=np.int8)
    for side in (0, 1):
        mask = facet_elems[:, side] >= 0
        elem_facets[facet_elems[mask, side], facet_local[mask, side]] = np.flatnonzero(mask)
        elem_sigma[facet_elems[mask, side], facet_local[mask, side]] = 1 if side == 0 else -1
    return facets, facet_elems, facet_local, elem_facets, elem_sigma


def _csr(keys: np.ndarray, n_keys: int, *payloads):
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    offsets = np.searchsorted(sorted_keys, np.arange(n_keys + 1))
    return offsets, tuple(p[order] for p in payloads)


# ---------------------------------------------------------------------------
# the mesh
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mesh:
    """Immutable conforming simplicial mesh with boundary tags and per-element kappa.

    All geometric quantities the estimator needs are precomputed; queries are
    pure reads and safe for concurrent use.
    """

    dim: int
    points: np.ndarray          # (n_points, d)
    simplices: np.ndarray       # (ne, d+1), canonical
    kappa: np.ndarray           # (ne,)
    facets: np.ndarray          # (nf, d), canonical vertex order
    facet_elems: np.ndarray     # (nf, 2), -1 for missing side
    facet_local: np.ndarray     # (nf, 2)
    facet_tag: np.ndarray       # (nf,), INTERIOR / DIRICHLET / NEUMANN
    elem_facets: np.ndarray     # (ne, d+1)
    elem_sigma: np.ndarray      # (ne, d+1)
    elem_facet_slot: np.ndarray  # (ne, d+1, d+1) position of vertex n in facet i, -1 on diagonal
    volumes: np.ndarray         # (ne,)
    bary_grads: np.ndarray      # (ne, d+1, d)
    facet_measures: np.ndarray  # (nf,)
    diameters: np.ndarray       # (ne,) h_K
    inradii: np.ndarray         # (ne,) rho_K
    incentres: np.ndarray       # (ne, d)
    centroids: np.ndarray       # (ne, d)
    _vertex_elem_offsets: np.ndarray = field(repr=False)
    _vertex_elem_data: np.ndarray = field(repr=False)   # (k, 2): element, local vertex
    _vertex_facet_offsets: np.ndarray = field(repr=False)
    _vertex_facet_data: np.ndarray = field(repr=False)  # (k, 2): facet, slot

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            val = getattr(self, name)
            if isinstance(val, np.ndarray):
                val.setflags(write=False)

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_elements(self) -> int:
        return len(self.simplices)

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    @property
    def dirichlet_vertices(self) -> np.ndarray:
        return np.unique(self.facets[self.facet_tag == DIRICHLET])

    def vertex_patch(self, v: int):
        """(element ids, local vertex indices) of the elements sharing vertex v."""
        lo, hi = self._vertex_elem_offsets[v], self._vertex_elem_offsets[v + 1]
        data = self._vertex_elem_data[lo:hi]
        return data[:, 0], data[:, 1]

    def vertex_facets(self, v: int):
        """(facet ids, slots) of the facets containing vertex v."""
        lo, hi = self._vertex_facet_offsets[v], self._vertex_facet_offsets[v + 1]
        data = self._vertex_facet_data[lo:hi]
        return data[:, 0], data[:, 1]

    def facet_points(self, facet_ids) -> np.ndarray:
        return self.points[self.facets[facet_ids]]

    def element_points(self, elem_ids) -> np.ndarray:
        return self.points[self.simplices[elem_ids]]

    def outward_normals(self) -> np.ndarray:
        """(ne, d+1, d) unit outward normal of the facet opposite each local vertex."""
        g = self.bary_grads
        return -g / np.linalg.norm(g, axis=2, keepdims=True)


def _bulk_geometry(points: np.ndarray, simplices: np.ndarray):
    d = points.shape[1]
    pts = points[simplices]                      # (ne, d+1, d)
    edges = np.swapaxes(pts[:, 1:] - pts[:, :1], 1, 2)  # (ne, d, d), columns = edges
    det = np.linalg.det(edges)
    volumes = np.abs(det) / math.factorial(d)
    diff = pts[:, :, None, :] - pts[:, None, :, :]
    diameters = np.sqrt((diff ** 2).sum(-1)).max(axis=(1, 2))
    bad = volumes < DEGENERACY_FACTOR * diameters ** d
    if np.any(bad):
        e = int(np.flatnonzero(bad)[0])
        raise DegenerateSimplex(f"element {e} is degenerate (volume {volumes[e]:.3e})")
    inv = np.linalg.inv(edges)                  # (ne, d, d), row i-1 = grad lambda_i
    grads = np.empty((len(simplices), d + 1, d))
    grads[:, 1:] = inv
    grads[:, 0] = -inv.sum(axis=1)
    # |gamma_i| = d |K| |grad lambda_i|
    gnorm = np.linalg.norm(grads, axis=2)
    facet_meas_local = d * volumes[:, None] * gnorm
    total = facet_meas_local.sum(axis=1)
    inradii = d * volumes / total
    incentres = (facet_meas_local[:, :, None] * pts).sum(axis=1) / total[:, None]
    centroids = pts.mean(axis=1)
    return volumes, grads, facet_meas_local, diameters, inradii, incentres, centroids


def _facet_slots(simplices: np.ndarray, facets: np.ndarray, elem_facets: np.ndarray):
    # slot[e, i, n]: index of global vertex simplices[e, n] within facet elem_facets[e, i]
    fverts = facets[elem_facets]                    # (ne, d+1, d)
    gids = simplices[:, None, :, None]              # (ne, 1, d+1, 1)
    slot = (fverts[:, :, None, :] < gids).sum(axis=3).astype(np.int8)
    dp1 = simplices.shape[1]
    diag = np.arange(dp1)
    slot[:, diag, diag] = -1
    return slot


def build_mesh(points, cells, kappa, boundary, *, kappa_jump_warn: float = 100.0) -> Mesh:
    """Construct a canonical immutable mesh.

    ``boundary`` is either a dict mapping sorted boundary-facet vertex tuples to
    'D'/'N', or a callable receiving the (k, d) centroids of the discovered
    boundary facets and returning a boolean array (True = Dirichlet).
    Dirichlet and Neumann facets must cover the whole boundary.
    """
    points = np.ascontiguousarray(points, dtype=float)
    if points.ndim != 2:
        raise ValueError("points must be an (n, d) array")
    d = points.shape[1]
    if d < 2:
        raise ValueError("only d >= 2 is supported")
    if not np.all(np.isfinite(points)):
        raise ValueError("points contain non-finite entries")
    cells = np.ascontiguousarray(cells, dtype=np.int64)
    if cells.ndim != 2 or cells.shape[1] != d + 1:
        raise ValueError("cells must be an (ne, d+1) array")
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (len(cells),)).copy()
    if np.any(kappa < 0) or not np.all(np.isfinite(kappa)):
        raise ValueError("kappa must be finite and nonnegative")

    # canonical form: sorted vertex ids per element, elements sorted lexicographically
    cells = np.sort(cells, axis=1)
    if np.any(cells[:, :-1] == cells[:, 1:]):
        raise ValueError("an element repeats a vertex id")
    order = np.lexsort(cells.T[::-1])
    cells = cells[order]
    kappa = kappa[order]

    facets, facet_elems, facet_local, elem_facets, elem_sigma = build_facet_adjacency(cells)

    boundary_mask = facet_elems[:, 1] < 0
    facet_tag = np.full(len(facets), INTERIOR, dtype=np.int8)
    bidx = np.flatnonzero(boundary_mask)
    if callable(boundary):
        cent = points[facets[bidx]].mean(axis=1)
        isdir = np.asarray(boundary(cent), dtype=bool)
        if isdir.shape != (len(bidx),):
            raise ValueError("boundary rule must return one flag per boundary facet")
        facet_tag[bidx] = np.where(isdir, DIRICHLET, NEUMANN)
    else:
        tags = dict(boundary)
        for fi in bidx:
            key = tuple(int(v) for v in facets[fi])
            try:
                t = tags.pop(key)
            except KeyError:
                raise MeshFormatError(f"boundary facet {key} has no D/N tag") from None
            if t not in ("D", "N"):
                raise MeshFormatError(f"unknown boundary tag {t!r} for facet {key}")
            facet_tag[fi] = DIRICHLET if t == "D" else NEUMANN
        if tags:
            key = next(iter(tags))
            raise MeshFormatError(f"tagged facet {key} is not a boundary facet of the mesh")

    volumes, grads, fml, diameters, inradii, incentres, centroids = _bulk_geometry(points, cells)
    facet_measures = np.zeros(len(facets))
    facet_measures[elem_facets.ravel()] = fml.ravel()

    ne, dp1 = cells.shape
    veo, (ve_elem, ve_loc) = _csr(cells.ravel(), len(points),
                                  np.repeat(np.arange(ne), dp1), np.tile(np.arange(dp1), ne))
    nf = len(facets)
    vfo, (vf_fac, vf_slot) = _csr(facets.ravel(), len(points),
                                  np.repeat(np.arange(nf), d), np.tile(np.arange(d), nf))

    _warn_kappa_jumps(cells, kappa, veo, ve_elem, kappa_jump_warn)

    return Mesh(
        dim=d, points=points, simplices=cells, kappa=kappa,
        facets=facets, facet_elems=facet_elems, facet_local=facet_local,
        facet_tag=facet_tag, elem_facets=elem_facets, elem_sigma=elem_sigma,
        elem_facet_slot=_facet_slots(cells, facets, elem_facets),
        volumes=volumes, bary_grads=grads, facet_measures=facet_measures,
        diameters=diameters, inradii=inradii, incentres=incentres, centroids=centroids,
        _vertex_elem_offsets=veo, _vertex_elem_data=np.column_stack([ve_elem, ve_loc]),
        _vertex_facet_offsets=vfo, _vertex_facet_data=np.column_stack([vf_fac, vf_slot]),
    )


def _warn_kappa_jumps(cells, kappa, offsets, elems_sorted, threshold):
    if threshold is None or not np.isfinite(threshold):
        return
    pos = kappa > 0
    if not np.any(pos):
        return
    kmax = np.zeros(len(offsets) - 1)
    kmin = np.full(len(offsets) - 1, np.inf)
    keys = np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))
    kv = kappa[elems_sorted]
    sel = kv > 0
    np.maximum.at(kmax, keys[sel], kv[sel])
    np.minimum.at(kmin, keys[sel], kv[sel])
    with np.errstate(invalid="ignore", divide="ignore"):
        ratios = np.where(kmax > 0, kmax / kmin, 1.0)
    worst = np.nanmax(ratios) if len(ratios) else 1.0
    if worst > threshold:
        warnings.warn(
            f"reaction coefficient jumps by a factor {worst:.3g} within a vertex patch "
            f"(warning threshold {threshold:g}); robustness assumptions may be stretched",
            KappaJumpWarning, stacklevel=3)


# ---------------------------------------------------------------------------
# structured cube mesh (Kuhn / Freudenthal triangulation)
# ---------------------------------------------------------------------------

def build_cube_mesh(M: int, dim: int, kappa_fn, boundary_rule=None, *,
                    kappa_jump_warn: float = 100.0) -> Mesh:
    """Mesh of the cube (-1, 1)^dim: M^dim subcubes, each split into dim! simplices.

    The Kuhn (sort-based) triangulation is used, which is conforming across
    subcube faces and shares the main diagonal of each subcube. ``kappa_fn``
    maps element centroids (ne, d) to kappa values (a scalar is broadcast).
    ``boundary_rule`` maps boundary-facet centroids to a Dirichlet mask; the
    default tags the faces x_1 = +-1 Dirichlet and the rest Neumann.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if dim < 2:
        raise ValueError("dim must be >= 2")
    grid = np.stack(np.meshgrid(*([np.arange(M + 1)] * dim), indexing="ij"), axis=-1)
    points = -1.0 + 2.0 * grid.reshape(-1, dim) / M
    shape = (M + 1,) * dim

    corners = np.stack(np.meshgrid(*([np.arange(M)] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    steps = np.eye(dim, dtype=np.int64)
    cell_blocks = []
    for perm in itertools.permutations(range(dim)):
        offsets = np.concatenate([np.zeros((1, dim), dtype=np.int64),
                                  np.cumsum(steps[list(perm)], axis=0)])
        multi = corners[:, None, :] + offsets[None, :, :]       # (Mc, d+1, d)
        cell_blocks.append(np.ravel_multi_index(np.moveaxis(multi, -1, 0), shape))
    cells = np.concatenate(cell_blocks, axis=0)

    centroids = points[cells].mean(axis=1)
    kappa = kappa_fn(centroids) if callable(kappa_fn) else kappa_fn

    if boundary_rule is None:
        boundary_rule = lambda c: np.abs(np.abs(c[:, 0]) - 1.0) < 1e-12
    return build_mesh(points, cells, kappa, boundary_rule, kappa_jump_warn=kappa_jump_warn)


# ---------------------------------------------------------------------------
# mesh text format
# ---------------------------------------------------------------------------

def _tokens(text: str):
    for line in text.splitlines():
        body = line.split("#", 1)[0]
        yield from body.split()


def read_mesh(path_or_text, **kwargs) -> Mesh:
    """Parse the mesh text format; accepts a filesystem path or raw text."""
    text = str(path_or_text)
    if "\n" not in text and not text.lstrip().startswith("DIM"):
        with open(text, "r", encoding="utf-8") as fh:
            text = fh.read()
    toks = list(_tokens(text))
    pos = 0

    def expect(kw):
        nonlocal pos
        if pos >= len(toks) or toks[pos] != kw:
            got = toks[pos] if pos < len(toks) else "<eof>"
            raise MeshFormatError(f"expected {kw}, got {got}")
        pos += 1

    def take(n, conv):
        nonlocal pos
        if pos + n > len(toks):
            raise MeshFormatError("unexpected end of file")
        try:
            out = [conv(t) for t in toks[pos:pos + n]]
        except ValueError as exc:
            raise MeshFormatError(str(exc)) from None
        pos += n
        return out

    expect("DIM")
    d = take(1, int)[0]
    if d < 2:
        raise MeshFormatError(f"DIM must be >= 2, got {d}")
    expect("POINTS")
    n = take(1, int)[0]
    points = np.array(take(n * d, float)).reshape(n, d)
    expect("CELLS")
    m = take(1, int)[0]
    raw = take(m * (d + 2), str)
    cells = np.array([[int(v) for v in raw[i * (d + 2):i * (d + 2) + d + 1]]
                      for i in range(m)], dtype=np.int64).reshape(m, d + 1)
    kappa = np.array([float(raw[i * (d + 2) + d + 1]) for i in range(m)])
    expect("BOUNDARY")
    k = take(1, int)[0]
    boundary = {}
    for _ in range(k):
        row = take(d + 1, str)
        key = tuple(sorted(int(v) for v in row[:d]))
        boundary[key] = row[d]
    if pos != len(toks):
        raise MeshFormatError(f"trailing tokens starting at {toks[pos]!r}")
    if np.any(cells < 0) or np.any(cells >= n):
        raise MeshFormatError("cell vertex id out of range")
    return build_mesh(points, cells, kappa, boundary, **kwargs)


def write_mesh(mesh: Mesh, path: str) -> None:
    """Write a mesh in the text format (see module docstring)."""
    lines = [f"DIM {mesh.dim}", f"POINTS {mesh.n_points}"]
    lines += [" ".join(f"{c:.17g}" for c in p) for p in mesh.points]
    lines.append(f"CELLS {mesh.n_elements}")
    lines += [" ".join(str(v) for v in s) + f" {k:.17g}"
              for s, k in zip(mesh.simplices, mesh.kappa)]
    bidx = np.flatnonzero(mesh.facet_tag != INTERIOR)
    lines.append(f"BOUNDARY {len(bidx)}")
    for fi in bidx:
        tag = "D" if mesh.facet_tag[fi] == DIRICHLET else "N"
        lines.append(" ".join(str(v) for v in mesh.facets[fi]) + f" {tag}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
