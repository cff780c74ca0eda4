"""2.5D Delaunay TIN by incremental (Bowyer-Watson) insertion.

The triangulation is built in the xy plane with a "ghost" vertex at
infinity: every convex-hull edge carries a ghost triangle, so points
outside the current hull are inserted by the same cavity procedure as
interior ones. Predicates are exact (see :mod:`.predicates`) and
cocircular ties are broken symbolically by vertex index, which makes the
result a unique function of the vertex list: insertion order only
affects speed, never the output.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from ..core.cloud import PointCloud
from ..errors import DegenerateGeometryError, FormatError
from .predicates import incircle_perturbed, orient2d

GHOST = -1
XY_DUPLICATE_TOL = 1e-9


def merge_xy_duplicates(xyz: np.ndarray, tol: float = XY_DUPLICATE_TOL) -> np.ndarray:
    """Indices of points kept after merging xy-duplicates, in input order.

    Points whose xy positions lie within ``tol`` of each other (transitively)
    form one group; the lowest point of the group survives, ties going to
    the earliest index.
    """
    n = len(xyz)
    if n == 0:
        return np.empty(0, dtype=np.intp)
    pairs = cKDTree(xyz[:, :2]).query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return np.arange(n)
    parent = np.arange(n)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(n)])
    order = np.lexsort((np.arange(n), xyz[:, 2], roots))
    first = np.ones(n, dtype=bool)
    first[1:] = roots[order][1:] != roots[order][:-1]
    return np.sort(order[first])


def hilbert_order(xy: np.ndarray, bits: int = 16) -> np.ndarray:
    """Permutation visiting points along a Hilbert curve (stable on ties)."""
    n = len(xy)
    if n == 0:
        return np.empty(0, dtype=np.intp)
    lo = xy.min(axis=0)
    span = float((xy.max(axis=0) - lo).max()) or 1.0
    side = (1 << bits) - 1
    q = np.floor((xy - lo) / span * side).astype(np.int64)
    x, y = q[:, 0].copy(), q[:, 1].copy()
    d = np.zeros(n, dtype=np.int64)
    s = 1 << (bits - 1)
    while s > 0:
        rx = ((x & s) > 0).astype(np.int64)
        ry = ((y & s) > 0).astype(np.int64)
        d += s * s * ((3 * rx) ^ ry)
        flip = ry == 0
        swap_x = flip & (rx == 1)
        x = np.where(swap_x, side - x, x)
        y = np.where(swap_x, side - y, y)
        x, y = np.where(flip, y, x), np.where(flip, x, y)
        s >>= 1
    return np.argsort(d, kind="stable")


class _Builder:
    """Mutable triangle soup with adjacency; triangles are flat-list triples."""

    def __init__(self, xs, ys):
        self.x = xs
        self.y = ys
        self.v = []       # 3 vertex ids per triangle, counter-clockwise
        self.n = []       # neighbour opposite each vertex
        self.alive = []
        self.free = []

    def orient(self, a, b, c) -> int:
        x, y = self.x, self.y
        return orient2d(x[a], y[a], x[b], y[b], x[c], y[c])

    def new_tri(self, a, b, c) -> int:
        if self.free:
            t = self.free.pop()
            self.v[3 * t:3 * t + 3] = [a, b, c]
            self.n[3 * t:3 * t + 3] = [GHOST, GHOST, GHOST]
            self.alive[t] = True
        else:
            t = len(self.alive)
            self.v.extend((a, b, c))
            self.n.extend((GHOST, GHOST, GHOST))
            self.alive.append(True)
        return t

    def kill(self, t):
        self.alive[t] = False
        self.free.append(t)

    def is_ghost(self, t) -> bool:
        v = self.v
        return v[3 * t] == GHOST or v[3 * t + 1] == GHOST or v[3 * t + 2] == GHOST

    def hull_edge(self, t):
        a, b, c = self.v[3 * t:3 * t + 3]
        if c == GHOST:
            return a, b
        if a == GHOST:
            return b, c
        return c, a

    def conflicts(self, t, p) -> bool:
        a, b, c = self.v[3 * t:3 * t + 3]
        if a != GHOST and b != GHOST and c != GHOST:
            return incircle_perturbed(self.x, self.y, a, b, c, p) > 0
        u, w = self.hull_edge(t)
        s = self.orient(u, w, p)
        if s != 0:
            return s > 0
        # collinear with the hull edge: conflict only on the open segment
        x, y = self.x, self.y
        if x[u] != x[w]:
            return min(x[u], x[w]) < x[p] < max(x[u], x[w])
        return min(y[u], y[w]) < y[p] < max(y[u], y[w])

    def start(self, a, b, c):
        if self.orient(a, b, c) < 0:
            b, c = c, b
        t = self.new_tri(a, b, c)
        g0 = self.new_tri(c, b, GHOST)   # across edge b-c (opposite a)
        g1 = self.new_tri(a, c, GHOST)   # across edge c-a (opposite b)
        g2 = self.new_tri(b, a, GHOST)   # across edge a-b (opposite c)
        n = self.n
        n[3 * t:3 * t + 3] = [g0, g1, g2]
        # ghost (u, w, G): opposite u is edge (w, G), opposite w is (G, u)
        n[3 * g0:3 * g0 + 3] = [g2, g1, t]
        n[3 * g1:3 * g1 + 3] = [g0, g2, t]
        n[3 * g2:3 * g2 + 3] = [g1, g0, t]
        return t

    def locate(self, p, t) -> int:
        v, n = self.v, self.n
        while True:
            if self.is_ghost(t):
                return t
            for i in range(3):
                a = v[3 * t + (i + 1) % 3]
                b = v[3 * t + (i + 2) % 3]
                if self.orient(a, b, p) < 0:
                    t = n[3 * t + i]
                    break
            else:
                return t

    def insert(self, p, hint) -> int:
        v, n = self.v, self.n
        t0 = self.locate(p, hint)
        cavity = [t0]
        in_cavity = {t0}
        rejected = set()
        boundary = []
        k = 0
        while k < len(cavity):
            t = cavity[k]
            k += 1
            for i in range(3):
                nb = n[3 * t + i]
                if nb in in_cavity:
                    continue
                if nb not in rejected:
                    if self.conflicts(nb, p):
                        in_cavity.add(nb)
                        cavity.append(nb)
                        continue
                    rejected.add(nb)
                boundary.append((v[3 * t + (i + 1) % 3], v[3 * t + (i + 2) % 3], nb))
        for t in cavity:
            self.kill(t)
        starts = {}
        ends = {}
        created = []
        for a, b, outside in boundary:
            t = self.new_tri(a, b, p)
            n[3 * t + 2] = outside
            ov = v[3 * outside:3 * outside + 3]
            for j in range(3):
                if ov[j] != a and ov[j] != b:
                    n[3 * outside + j] = t
                    break
            starts[a] = t
            ends[b] = t
            created.append(t)
        for t in created:
            a, b = v[3 * t], v[3 * t + 1]
            n[3 * t] = starts[b]
            n[3 * t + 1] = ends[a]
        for t in created:
            if not self.is_ghost(t):
                return t
        raise AssertionError("insertion produced no finite triangle")


@dataclass(frozen=True, eq=False)
class TriangulatedSurface:
    """A 2.5D TIN.

    Attributes:
        vertices: ``(M, 3)`` coordinates.
        triangles: ``(T, 3)`` vertex indices, counter-clockwise in xy.
        neighbors: ``(T, 3)`` triangle across the edge opposite each
            vertex, ``-1`` on the convex hull.
        source_index: for each vertex, its row in the input cloud.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    neighbors: np.ndarray
    source_index: np.ndarray

    @property
    def hull_edge_count(self) -> int:
        return int(np.count_nonzero(self.neighbors == GHOST))

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))

    def vertex_triangle(self) -> np.ndarray:
        """One incident triangle for every vertex."""
        vt = np.full(len(self.vertices), -1, dtype=np.intp)
        flat = self.triangles.reshape(-1)
        vt[flat[::-1]] = np.repeat(np.arange(len(self.triangles)), 3)[::-1]
        return vt


def _canonical(tris: np.ndarray) -> np.ndarray:
    """Rotate each triangle so its smallest index leads, then sort rows."""
    if len(tris) == 0:
        return tris.reshape(0, 3)
    shift = np.argmin(tris, axis=1)
    idx = (shift[:, None] + np.arange(3)) % 3
    rot = np.take_along_axis(tris, idx, axis=1)
    order = np.lexsort((rot[:, 2], rot[:, 1], rot[:, 0]))
    return rot[order]


def _adjacency(tris: np.ndarray) -> np.ndarray:
    nbr = np.full(tris.shape, GHOST, dtype=np.intp)
    edges = {}
    for t, (a, b, c) in enumerate(tris.tolist()):
        for i, (u, w) in enumerate(((b, c), (c, a), (a, b))):
            edges[(u, w)] = (t, i)
    for (u, w), (t, i) in edges.items():
        other = edges.get((w, u))
        if other is not None:
            nbr[t, i] = other[0]
    return nbr


def delaunay(cloud: PointCloud | np.ndarray) -> TriangulatedSurface:
    """Delaunay TIN of a cloud's xy projection, carrying each vertex's z.

    xy-duplicates (within 1e-9 m) are merged first, keeping the lowest z.
    Cocircular ties resolve towards the diagonal through the lowest vertex
    index, so the output depends only on the input order.
    """
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    keep = merge_xy_duplicates(xyz)
    verts = xyz[keep]
    m = len(verts)
    if m < 3:
        raise DegenerateGeometryError(f"degenerate input: {m} distinct xy positions, need at least 3")
    xs = verts[:, 0].tolist()
    ys = verts[:, 1].tolist()
    order = hilbert_order(verts[:, :2]).tolist()
    b = _Builder(xs, ys)

    first, second = order[0], order[1]
    third_pos = None
    for pos in range(2, m):
        if b.orient(first, second, order[pos]) != 0:
            third_pos = pos
            break
    if third_pos is None:
        raise DegenerateGeometryError("degenerate input: all points are collinear in xy")
    hint = b.start(first, second, order[third_pos])
    for pos in range(2, m):
        if pos != third_pos:
            hint = b.insert(order[pos], hint)

    tris = [b.v[3 * t:3 * t + 3] for t in range(len(b.alive)) if b.alive[t] and not b.is_ghost(t)]
    tris = _canonical(np.array(tris, dtype=np.intp))
    return TriangulatedSurface(
        vertices=verts.copy(),
        triangles=tris,
        neighbors=_adjacency(tris),
        source_index=keep,
    )


def _barycentric_z(tin: TriangulatedSurface, t: int, x: float, y: float) -> float:
    (ax, ay, az), (bx, by, bz), (cx, cy, cz) = tin.vertices[tin.triangles[t]].tolist()

    def area2(px, py, qx, qy, rx, ry):
        return (qx - px) * (ry - py) - (qy - py) * (rx - px)

    wa = area2(bx, by, cx, cy, x, y) / area2(bx, by, cx, cy, ax, ay)
    wb = area2(cx, cy, ax, ay, x, y) / area2(cx, cy, ax, ay, bx, by)
    wc = area2(ax, ay, bx, by, x, y) / area2(ax, ay, bx, by, cx, cy)
    return wa * az + wb * bz + wc * cz


class TinLocator:
    """Point location and z interpolation on a finished TIN."""

    def __init__(self, tin: TriangulatedSurface):
        self.tin = tin
        self.xs = tin.vertices[:, 0].tolist()
        self.ys = tin.vertices[:, 1].tolist()
        self.tris = tin.triangles.tolist()
        self.nbrs = tin.neighbors.tolist()
        self._vt = tin.vertex_triangle()
        self._tree = cKDTree(tin.vertices[:, :2])

    def locate(self, x: float, y: float) -> Optional[int]:
        """Index of a triangle containing (x, y) (closed), or None outside the hull."""
        xs, ys = self.xs, self.ys
        _, vi = self._tree.query((x, y))
        t = int(self._vt[vi])
        while True:
            tri = self.tris[t]
            for i in range(3):
                a = tri[(i + 1) % 3]
                b = tri[(i + 2) % 3]
                if orient2d(xs[a], ys[a], xs[b], ys[b], x, y) < 0:
                    t = self.nbrs[t][i]
                    break
            else:
                return t
            if t == GHOST:
                return None

    def interpolate(self, x: float, y: float) -> Optional[float]:
        t = self.locate(float(x), float(y))
        if t is None:
            return None
        return _barycentric_z(self.tin, t, float(x), float(y))


def interpolate_z(tin: TriangulatedSurface, x: float, y: float) -> Optional[float]:
    """Linear z at (x, y) within the TIN, or None outside its convex hull."""
    return TinLocator(tin).interpolate(x, y)


def triangle_z(tin: TriangulatedSurface, t: int, x: float, y: float) -> float:
    """Linear z of the plane through triangle ``t`` evaluated at (x, y)."""
    return _barycentric_z(tin, t, float(x), float(y))


def export_obj(tin: TriangulatedSurface, path) -> None:
    """Wavefront OBJ: ``v x y z`` lines then 1-based ``f i j k`` lines."""
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in tin.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in tin.triangles.tolist()]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    """Vertices and 0-based triangle indices from a triangle-only OBJ file."""
    verts, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise FormatError("vertex needs 3 coordinates", path, lineno)
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise FormatError("only triangular faces are supported", path, lineno)
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:]])
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.intp).reshape(-1, 3)
