"""Conforming triangulations of polygonal domains.

The mesh is stored struct-of-arrays style (vertex coordinates, triangle
connectivity, derived edge tables) with small dataclass views for individual
entities.  Triangles are counter-clockwise and carry their refinement edge
positionally: the refinement edge of triangle ``(v0, v1, v2)`` is ``(v0, v1)``.
On input meshes the refinement edge is seeded as the longest edge; refinement
follows newest-vertex bisection with conforming closure, so each bisection
hands the two old non-refinement edges down to the children.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed."""


class MeshConformityError(ValueError):
    """Raised when a triangulation is not a conforming mesh."""


@dataclass(frozen=True)
class Vertex:
    id: int
    x: float
    y: float
    on_boundary: bool


@dataclass(frozen=True)
class Triangle:
    id: int
    vertices: tuple[int, int, int]
    edges: tuple[int, int, int]
    refinement_edge: int
    area: float
    h: float


@dataclass(frozen=True)
class Edge:
    id: int
    vertices: tuple[int, int]
    triangles: tuple[int, ...]
    length: float
    normal: tuple[float, float]
    on_boundary: bool


@dataclass
class Mesh:
    """Conforming triangulation.

    Attributes
    ----------
    xy : (n, 2) float array
        Vertex coordinates.
    tris : (m, 3) int array
        Vertex indices per triangle, counter-clockwise; the local refinement
        edge is ``(tris[k, 0], tris[k, 1])``.
    tri_edges : (m, 3) int array
        Edge ids per triangle; local edge ``i`` joins local vertices ``i`` and
        ``(i + 1) % 3``, so the refinement edge is ``tri_edges[k, 0]``.
    edge_vertices : (E, 2) int array
        Edge endpoints as first traversed (by the first adjacent triangle).
    edge_tris : (E, 2) int array
        Adjacent triangles, ``-1`` in the second slot on the boundary.
    edge_normals : (E, 2) float array
        Unit normals pointing out of the first adjacent triangle; on boundary
        edges this is the outward normal of the domain.

    The remaining arrays cache areas, element diameters, edge lengths, P1 hat
    function gradients and boundary flags.  Instances are treated as
    immutable; refinement returns a new mesh.
    """

    xy: np.ndarray
    tris: np.ndarray
    tri_edges: np.ndarray
    edge_vertices: np.ndarray
    edge_tris: np.ndarray
    areas: np.ndarray
    h_tri: np.ndarray
    grads: np.ndarray
    edge_lengths: np.ndarray
    edge_normals: np.ndarray
    vertex_on_boundary: np.ndarray
    _vertex_tris: list[list[int]] | None = field(default=None, repr=False)

    # -- basic counts ------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return self.xy.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.tris.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edge_vertices.shape[0]

    @property
    def boundary_edge_mask(self) -> np.ndarray:
        return self.edge_tris[:, 1] < 0

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_edge_mask)

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_edge_mask)

    @property
    def h_max(self) -> float:
        return float(self.h_tri.max())

    @property
    def refinement_edges(self) -> np.ndarray:
        """Local refinement-edge index per triangle (always edge 0)."""
        return np.zeros(self.n_triangles, dtype=np.int8)

    def domain_area(self) -> float:
        return float(self.areas.sum())

    def shape_ratios(self) -> np.ndarray:
        """Diameter over inscribed-circle diameter, per triangle."""
        a, b, c = (self.tris[:, i] for i in range(3))
        per = (np.linalg.norm(self.xy[b] - self.xy[a], axis=1)
               + np.linalg.norm(self.xy[c] - self.xy[b], axis=1)
               + np.linalg.norm(self.xy[a] - self.xy[c], axis=1))
        return self.h_tri * per / (4.0 * self.areas)

    # -- entity views ------------------------------------------------------

    def vertex(self, i: int) -> Vertex:
        return Vertex(i, float(self.xy[i, 0]), float(self.xy[i, 1]),
                      bool(self.vertex_on_boundary[i]))

    def triangle(self, k: int) -> Triangle:
        return Triangle(k, tuple(int(v) for v in self.tris[k]),
                        tuple(int(e) for e in self.tri_edges[k]),
                        0, float(self.areas[k]), float(self.h_tri[k]))

    def edge(self, e: int) -> Edge:
        ts = tuple(int(t) for t in self.edge_tris[e] if t >= 0)
        return Edge(e, tuple(int(v) for v in self.edge_vertices[e]), ts,
                    float(self.edge_lengths[e]),
                    (float(self.edge_normals[e, 0]), float(self.edge_normals[e, 1])),
                    bool(self.edge_tris[e, 1] < 0))

    def vertex_triangles(self) -> list[list[int]]:
        """Triangle ids incident to each vertex."""
        if self._vertex_tris is None:
            inc: list[list[int]] = [[] for _ in range(self.n_vertices)]
            for k, tri in enumerate(self.tris):
                for v in tri:
                    inc[v].append(k)
            self._vertex_tris = inc
        return self._vertex_tris

    def element_patch(self, k: int) -> list[int]:
        """Ids of all triangles sharing at least a vertex with triangle k."""
        inc = self.vertex_triangles()
        patch: set[int] = set()
        for v in self.tris[k]:
            patch.update(inc[v])
        return sorted(patch)

    def tri_coords(self) -> np.ndarray:
        """Vertex coordinates per triangle, shape (m, 3, 2)."""
        return self.xy[self.tris]


# ---------------------------------------------------------------------------
# Construction and validation
# ---------------------------------------------------------------------------

def _rotate_longest_edge_first(xy, tris):
    """Cyclically reorder each triangle so its longest edge comes first.

    Ties go to the smallest local edge index, so the labeling is
    deterministic.  Cyclic rotation keeps the orientation.
    """
    p = xy[tris]                              # (m, 3, 2)
    lengths = np.stack([
        np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
        np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
        np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
    ], axis=1)
    k = np.argmax(lengths, axis=1)
    rolled = tris.copy()
    for shift in (1, 2):
        sel = k == shift
        rolled[sel] = np.roll(tris[sel], -shift, axis=1)
    return rolled


def _build(xy, tris, seed_refinement_edges=False) -> Mesh:
    xy = np.ascontiguousarray(np.asarray(xy, dtype=np.float64))
    tris = np.ascontiguousarray(np.asarray(tris, dtype=np.int64))
    if xy.ndim != 2 or xy.shape[1] != 2:
        raise MeshFormatError("vertex array must have shape (n, 2)")
    if tris.ndim != 2 or tris.shape[1] != 3:
        raise MeshFormatError("triangle array must have shape (m, 3)")
    n = xy.shape[0]
    m = tris.shape[0]
    if m == 0:
        raise MeshConformityError("mesh has no triangles")
    if tris.min() < 0 or tris.max() >= n:
        k = int(np.flatnonzero((tris < 0).any(axis=1) | (tris >= n).any(axis=1))[0])
        raise MeshConformityError(f"triangle {k} references a vertex out of range")
    for k in range(m):
        if len(set(tris[k])) != 3:
            raise MeshConformityError(f"triangle {k} has a repeated vertex")

    used = np.zeros(n, dtype=bool)
    used[tris.ravel()] = True
    if not used.all():
        raise MeshConformityError(f"dangling vertex {int(np.flatnonzero(~used)[0])}")

    p = xy[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    if (signed <= 0.0).any():
        k = int(np.flatnonzero(signed <= 0.0)[0])
        kind = "degenerate" if signed[k] == 0.0 else "inverted (clockwise)"
        raise MeshConformityError(f"triangle {k} is {kind}")

    if seed_refinement_edges:
        tris = _rotate_longest_edge_first(xy, tris)
        p = xy[tris]

    # Edge tables.  Edges get ids in order of first traversal; a conforming
    # mesh traverses every interior edge exactly twice, in opposite
    # directions, because all triangles are counter-clockwise.
    edge_id: dict[tuple[int, int], int] = {}
    first_dir: list[tuple[int, int]] = []
    edge_tris_list: list[list[int]] = []
    tri_edges = np.empty((m, 3), dtype=np.int64)
    for k in range(m):
        t = tris[k]
        for i in range(3):
            a, b = int(t[i]), int(t[(i + 1) % 3])
            key = (a, b) if a < b else (b, a)
            e = edge_id.get(key)
            if e is None:
                e = len(first_dir)
                edge_id[key] = e
                first_dir.append((a, b))
                edge_tris_list.append([k, -1])
            else:
                if edge_tris_list[e][1] != -1:
                    raise MeshConformityError(
                        f"edge {key} is shared by more than two triangles")
                if first_dir[e] == (a, b):
                    raise MeshConformityError(
                        f"edge {key} is traversed twice in the same direction "
                        f"(triangles {edge_tris_list[e][0]} and {k} overlap or "
                        f"one of them is misoriented)")
                edge_tris_list[e][1] = k
            tri_edges[k, i] = e

    edge_vertices = np.array(first_dir, dtype=np.int64)
    edge_tris = np.array(edge_tris_list, dtype=np.int64)

    areas = signed
    l0 = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    l1 = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
    l2 = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
    h_tri = np.maximum(np.maximum(l0, l1), l2)

    # P1 hat gradients: grad(lambda_i) = rot90(p_{i+2} - p_{i+1}) / (2A)
    grads = np.empty((m, 3, 2))
    for i in range(3):
        d = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
        grads[:, i, 0] = -d[:, 1]
        grads[:, i, 1] = d[:, 0]
    grads /= (2.0 * areas)[:, None, None]

    dvec = xy[edge_vertices[:, 1]] - xy[edge_vertices[:, 0]]
    edge_lengths = np.linalg.norm(dvec, axis=1)
    edge_normals = np.stack([dvec[:, 1], -dvec[:, 0]], axis=1) / edge_lengths[:, None]

    vertex_on_boundary = np.zeros(n, dtype=bool)
    bnd = edge_tris[:, 1] < 0
    vertex_on_boundary[edge_vertices[bnd].ravel()] = True

    return Mesh(xy=xy, tris=tris, tri_edges=tri_edges,
                edge_vertices=edge_vertices, edge_tris=edge_tris,
                areas=areas, h_tri=h_tri, grads=grads,
                edge_lengths=edge_lengths, edge_normals=edge_normals,
                vertex_on_boundary=vertex_on_boundary)


def from_arrays(xy, tris) -> Mesh:
    """Build a mesh from raw arrays, seeding refinement edges (longest edge)."""
    return _build(xy, tris, seed_refinement_edges=True)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def generate_structured(n: int, rect=((0.0, 0.0), (1.0, 1.0))) -> Mesh:
    """Structured triangulation of an axis-aligned rectangle.

    The rectangle is split into ``n x n`` cells, each cut along the
    bottom-left/top-right diagonal, giving ``2 n^2`` triangles and
    ``(n + 1)^2`` vertices with diameter ``h = sqrt(dx^2 + dy^2)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    (x0, y0), (x1, y1) = rect
    if not (x1 > x0 and y1 > y0):
        raise ValueError("rectangle corners must be ordered")
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    gx, gy = np.meshgrid(xs, ys)
    xy = np.stack([gx.ravel(), gy.ravel()], axis=1)

    tris = []
    for j in range(n):
        for i in range(n):
            bl = j * (n + 1) + i
            br = bl + 1
            tl = bl + (n + 1)
            tr = tl + 1
            tris.append((bl, br, tr))
            tris.append((bl, tr, tl))
    return _build(xy, np.array(tris), seed_refinement_edges=True)


def generate_lshape(n: int, size: float = 2.0) -> Mesh:
    """Structured triangulation of the L-shaped polygon
    (0,0), (s,0), (s,s/2), (s/2,s/2), (s/2,s), (0,s) with ``s = size``.

    The grid spacing is ``size / (2 n)``; cells in the removed quadrant
    (x > s/2 and y > s/2) are dropped.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    step = size / (2 * n)
    idx = -np.ones((2 * n + 1, 2 * n + 1), dtype=np.int64)
    coords = []
    for j in range(2 * n + 1):
        for i in range(2 * n + 1):
            if i > n and j > n:
                continue        # strictly inside the notch
            idx[j, i] = len(coords)
            coords.append((i * step, j * step))
    xy = np.array(coords)

    tris = []
    for j in range(2 * n):
        for i in range(2 * n):
            if i >= n and j >= n:
                continue        # cell lies in the notch
            bl = idx[j, i]
            br = idx[j, i + 1]
            tl = idx[j + 1, i]
            tr = idx[j + 1, i + 1]
            tris.append((bl, br, tr))
            tris.append((bl, tr, tl))
    return _build(xy, np.array(tris), seed_refinement_edges=True)


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------

def load_mesh(text: str) -> Mesh:
    """Parse the plain-text mesh format.

    The format is line based: a ``vertices <n>`` header followed by ``n``
    lines of ``x y boundary_flag``, then a ``triangles <m>`` header followed
    by ``m`` lines of three 0-based vertex ids (counter-clockwise).  ``#``
    starts a comment.  Boundary edges are re-detected from connectivity, so
    the vertex flags are informational.
    """
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if stripped:
            lines.append((lineno, stripped))
    pos = 0

    def take(expect: str) -> tuple[int, list[str]]:
        nonlocal pos
        if pos >= len(lines):
            raise MeshFormatError(f"unexpected end of file, expected '{expect}'")
        lineno, content = lines[pos]
        pos += 1
        return lineno, content.split()

    lineno, head = take("vertices <n>")
    if len(head) != 2 or head[0] != "vertices":
        raise MeshFormatError(f"line {lineno}: expected 'vertices <n>'")
    try:
        n = int(head[1])
    except ValueError:
        raise MeshFormatError(f"line {lineno}: vertex count is not an integer") from None

    xy = np.empty((n, 2))
    for i in range(n):
        lineno, parts = take("x y boundary_flag")
        if len(parts) != 3:
            raise MeshFormatError(
                f"line {lineno}: vertex {i} needs 'x y boundary_flag'")
        try:
            xy[i, 0] = float(parts[0])
            xy[i, 1] = float(parts[1])
            int(parts[2])
        except ValueError:
            raise MeshFormatError(f"line {lineno}: vertex {i} is malformed") from None

    lineno, head = take("triangles <m>")
    if len(head) != 2 or head[0] != "triangles":
        raise MeshFormatError(f"line {lineno}: expected 'triangles <m>'")
    try:
        m = int(head[1])
    except ValueError:
        raise MeshFormatError(f"line {lineno}: triangle count is not an integer") from None

    tris = np.empty((m, 3), dtype=np.int64)
    for k in range(m):
        lineno, parts = take("v0 v1 v2")
        if len(parts) != 3:
            raise MeshFormatError(f"line {lineno}: triangle {k} needs three vertex ids")
        try:
            tris[k] = [int(v) for v in parts]
        except ValueError:
            raise MeshFormatError(f"line {lineno}: triangle {k} is malformed") from None

    if pos != len(lines):
        lineno, _ = lines[pos]
        raise MeshFormatError(f"line {lineno}: trailing content after triangle list")

    return _build(xy, tris, seed_refinement_edges=True)


def save_mesh(mesh: Mesh) -> str:
    """Serialize a mesh to the plain-text format accepted by load_mesh."""
    out = [f"vertices {mesh.n_vertices}"]
    for i in range(mesh.n_vertices):
        flag = 1 if mesh.vertex_on_boundary[i] else 0
        out.append(f"{float(mesh.xy[i, 0])!r} {float(mesh.xy[i, 1])!r} {flag}")
    out.append(f"triangles {mesh.n_triangles}")
    for k in range(mesh.n_triangles):
        t = mesh.tris[k]
        out.append(f"{t[0]} {t[1]} {t[2]}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Newest-vertex bisection with conforming closure
# ---------------------------------------------------------------------------

def refine(mesh: Mesh, marked: "np.ndarray | list[int]") -> Mesh:
    """Bisect the marked triangles, closing the mesh to stay conforming.

    Marking a triangle marks its refinement edge for splitting; the closure
    then marks the refinement edge of every triangle that has any marked
    edge, until stable.  Each triangle is bisected according to which of its
    edges are marked (1, 2 or 3 marked edges give 2, 3 or 4 children), the
    refinement edge always first, so the result has no hanging nodes.  New
    midpoint vertices are appended in edge-id order; children replace their
    parent in triangle order, making the output deterministic.
    """
    marked = np.asarray(list(marked), dtype=np.int64)
    if marked.size == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.n_triangles:
        raise ValueError("marked triangle id out of range")

    edge_marked = np.zeros(mesh.n_edges, dtype=bool)
    edge_marked[mesh.tri_edges[marked, 0]] = True

    # Closure: a triangle with any marked edge must split its refinement edge.
    while True:
        has_marked = edge_marked[mesh.tri_edges].any(axis=1)
        need = has_marked & ~edge_marked[mesh.tri_edges[:, 0]]
        if not need.any():
            break
        edge_marked[mesh.tri_edges[need, 0]] = True

    n = mesh.n_vertices
    midpoint = -np.ones(mesh.n_edges, dtype=np.int64)
    split_edges = np.flatnonzero(edge_marked)
    midpoint[split_edges] = n + np.arange(split_edges.size)
    mid_xy = 0.5 * (mesh.xy[mesh.edge_vertices[split_edges, 0]]
                    + mesh.xy[mesh.edge_vertices[split_edges, 1]])
    new_xy = np.vstack([mesh.xy, mid_xy])

    new_tris: list[tuple[int, int, int]] = []
    for k in range(mesh.n_triangles):
        z1, z2, z3 = (int(v) for v in mesh.tris[k])
        e0, e1, e2 = (int(e) for e in mesh.tri_edges[k])
        if not edge_marked[e0]:
            new_tris.append((z1, z2, z3))
            continue
        m01 = int(midpoint[e0])
        # First bisection: children (z3, z1, m01) and (z2, z3, m01) inherit
        # the parent's other edges as their refinement edges.
        if edge_marked[e2]:
            m20 = int(midpoint[e2])
            new_tris.append((m01, z3, m20))
            new_tris.append((z1, m01, m20))
        else:
            new_tris.append((z3, z1, m01))
        if edge_marked[e1]:
            m12 = int(midpoint[e1])
            new_tris.append((m01, z2, m12))
            new_tris.append((z3, m01, m12))
        else:
            new_tris.append((z2, z3, m01))

    return _build(new_xy, np.array(new_tris), seed_refinement_edges=False)


def refine_uniform(mesh: Mesh, rounds: int = 1) -> Mesh:
    """Bisect every triangle, ``rounds`` times."""
    for _ in range(rounds):
        mesh = refine(mesh, np.arange(mesh.n_triangles))
    return mesh
