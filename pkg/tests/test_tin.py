from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survscan.core import PointCloud
from survscan.errors import DegenerateGeometryError
from survscan.tin import (
    delaunay,
    export_obj,
    incircle,
    incircle_perturbed,
    interpolate_z,
    merge_xy_duplicates,
    orient2d,
    read_obj,
    triangle_z,
)


# --- independent oracles (exact rational arithmetic) -----------------------

def _q(v):
    return Fraction(float(v))


def orient_oracle(a, b, c):
    ax, ay, bx, by, cx, cy = map(_q, (*a, *b, *c))
    d = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    return (d > 0) - (d < 0)


def strictly_in_circumcircle(a, b, c, d):
    """Exact test whether d is strictly inside the circle through ccw a, b, c."""
    ax, ay, bx, by, cx, cy, dx, dy = map(_q, (*a, *b, *c, *d))
    rows = [(ax - dx, ay - dy), (bx - dx, by - dy), (cx - dx, cy - dy)]
    m = [(x, y, x * x + y * y) for x, y in rows]
    det = (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
           - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
           + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))
    return det > 0


def hull_vertex_count(xy):
    """Andrew's monotone chain keeping collinear boundary points."""
    pts = sorted(set(map(tuple, xy.tolist())))
    if len(pts) < 3:
        return len(pts)

    def chain(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and orient_oracle(out[-2], out[-1], p) < 0:
                out.pop()
            out.append(p)
        return out

    lower = chain(pts)
    upper = chain(reversed(pts))
    return len(set(lower[:-1] + upper[:-1]))


def check_delaunay(tin):
    """Brute force over every (triangle, vertex) pair.

    A float determinant screens the pairs; anything not clearly outside
    is re-checked with exact rationals.
    """
    v = tin.vertices[:, :2]
    for a, b, c in tin.triangles.tolist():
        assert orient_oracle(v[a], v[b], v[c]) > 0
        rel = v[[a, b, c]][None, :, :] - v[:, None, :]
        lift = (rel ** 2).sum(axis=2)
        det = (lift[:, 0] * (rel[:, 1, 0] * rel[:, 2, 1] - rel[:, 2, 0] * rel[:, 1, 1])
               + lift[:, 1] * (rel[:, 2, 0] * rel[:, 0, 1] - rel[:, 0, 0] * rel[:, 2, 1])
               + lift[:, 2] * (rel[:, 0, 0] * rel[:, 1, 1] - rel[:, 1, 0] * rel[:, 0, 1]))
        scale = (lift.max(axis=1) * (np.abs(rel).max(axis=(1, 2)) ** 2)) + 1e-300
        suspect = np.flatnonzero(det > -1e-9 * scale)
        for d in suspect.tolist():
            if d in (a, b, c):
                continue
            assert not strictly_in_circumcircle(v[a], v[b], v[c], v[d]), (a, b, c, d)


def polygon_area(xy):
    """Shoelace area of a strict monotone-chain hull."""
    pts = sorted(map(tuple, xy.tolist()))

    def chain(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and orient_oracle(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    h = chain(pts)[:-1] + chain(reversed(pts))[:-1]
    x = np.array([p[0] for p in h])
    y = np.array([p[1] for p in h])
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


# --- predicates -----------------------------------------------------------

def test_orient_and_incircle_basic():
    assert orient2d(0, 0, 1, 0, 0, 1) == 1
    assert orient2d(0, 0, 0, 1, 1, 0) == -1
    assert orient2d(0, 0, 1, 1, 2, 2) == 0
    assert incircle(0, 0, 1, 0, 0, 1, 0.5, 0.5) == 1
    assert incircle(0, 0, 1, 0, 0, 1, 1, 1) == 0
    assert incircle(0, 0, 1, 0, 0, 1, 2, 2) == -1


def test_orient_near_degenerate_exact(rng):
    # points nearly on a line at large georeferenced coordinates
    base = np.array([512345.123, 5612345.456])
    for _ in range(500):
        t = rng.uniform(0, 1)
        a = base
        b = base + [1.0, 0.7]
        c = a + t * (b - a) + rng.integers(-2, 3) * np.array([1e-10, 0.0])
        assert orient2d(*a, *b, *c) == orient_oracle(a, b, c)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=8, max_size=8))
def test_incircle_matches_rational_oracle(ints):
    p = [v * 0.5 + 1e6 for v in ints]
    a, b, c, d = (p[0], p[1]), (p[2], p[3]), (p[4], p[5]), (p[6], p[7])
    if orient_oracle(a, b, c) <= 0:
        return
    ax, ay, bx, by, cx, cy, dx, dy = map(_q, (*a, *b, *c, *d))
    m = [(x - dx, y - dy) for x, y in ((ax, ay), (bx, by), (cx, cy))]
    m = [(x, y, x * x + y * y) for x, y in m]
    det = (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
           - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
           + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))
    assert incircle(*a, *b, *c, *d) == (det > 0) - (det < 0)


def test_perturbed_incircle_never_zero_on_square():
    xs, ys = [0.0, 1.0, 1.0, 0.0], [0.0, 0.0, 1.0, 1.0]
    s1 = incircle_perturbed(xs, ys, 1, 2, 3, 0)
    s2 = incircle_perturbed(xs, ys, 0, 1, 2, 3)
    assert s1 != 0 and s2 != 0
    # the lowest index of the cocircular quadruple counts as inside
    assert s1 == 1 and s2 == -1


# --- triangulation ------------------------------------------------------

def test_three_points_one_triangle():
    tin = delaunay(np.array([[0.0, 0, 1], [1.0, 0, 2], [0.0, 1, 3]]))
    assert tin.triangles.tolist() == [[0, 1, 2]]


def test_unit_square_diagonal_through_vertex_zero():
    tin = delaunay(np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 1, 0], [0.0, 1, 0]]))
    assert tin.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]
    rolled = delaunay(np.array([[1.0, 0, 0], [1.0, 1, 0], [0.0, 1, 0], [0.0, 0, 0]]))
    # vertex 0 is now (1, 0): the other diagonal
    assert rolled.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]
    assert {tuple(rolled.vertices[i, :2]) for i in (0, 2)} == {(1.0, 0.0), (0.0, 1.0)}


@pytest.mark.parametrize("seed", range(3))
def test_random_200_empty_circumcircle(seed):
    rng = np.random.default_rng(seed)
    tin = delaunay(rng.uniform(0, 10, size=(200, 3)))
    check_delaunay(tin)


def test_grid_cocircular_is_deterministic_and_valid():
    g = np.array([[x, y, 0.0] for y in range(8) for x in range(8)])
    a = delaunay(g)
    b = delaunay(g)
    assert np.array_equal(a.triangles, b.triangles)
    check_delaunay(a)
    assert len(a.triangles) == 2 * 64 - 28 - 2


def test_euler_with_collinear_hull_points(rng):
    pts = [[x, 0.0, 0.0] for x in range(6)] + [[x, 5.0, 0.0] for x in range(6)]
    pts += rng.uniform(0.5, 4.5, size=(30, 3)).tolist()
    xyz = np.array(pts)
    tin = delaunay(xyz)
    h = hull_vertex_count(xyz[:, :2])
    assert len(tin.triangles) == 2 * len(tin.vertices) - h - 2
    assert tin.hull_edge_count == h


def test_area_equals_hull_area(rng):
    xyz = rng.normal(size=(300, 3))
    tin = delaunay(xyz)
    areas = tin.triangle_areas()
    assert (areas > 0).all()
    assert areas.sum() == pytest.approx(polygon_area(xyz[:, :2]), rel=1e-9)


def test_degenerate_inputs():
    with pytest.raises(DegenerateGeometryError, match="degenerate input"):
        delaunay(np.array([[0.0, 0, 0], [1.0, 1, 0]]))
    with pytest.raises(DegenerateGeometryError, match="degenerate input"):
        delaunay(np.array([[0.0, 0, 0], [1.0, 1, 0], [2.0, 2, 5], [3.0, 3, 1]]))
    with pytest.raises(DegenerateGeometryError, match="degenerate input"):
        delaunay(np.array([[0.0, 0, 0], [0.0, 0, 1], [1.0, 1, 0], [1.0, 1, 2]]))


def test_xy_duplicates_keep_lowest_z():
    xyz = np.array([[0.0, 0, 5], [1.0, 0, 0], [0.0, 1, 0], [0.0, 0, 2], [1e-10, 0, 2]])
    keep = merge_xy_duplicates(xyz)
    assert keep.tolist() == [1, 2, 3]
    tin = delaunay(PointCloud(xyz))
    assert len(tin.vertices) == 3
    assert sorted(tin.vertices[:, 2].tolist()) == [0.0, 0.0, 2.0]


def test_large_coordinates(rng):
    xy = rng.uniform(0, 20, size=(400, 2)) + [512000.0, 5612000.0]
    xy = np.round(xy, 3)
    tin = delaunay(np.column_stack([xy, np.zeros(len(xy))]))
    check_delaunay(tin)


# --- interpolation ------------------------------------------------------

def plane(x, y):
    return 2 * x + 3 * y + 1


def test_plane_reproduced(rng):
    xy = rng.uniform(0, 10, size=(300, 2))
    tin = delaunay(np.column_stack([xy, plane(xy[:, 0], xy[:, 1])]))
    q = rng.uniform(0, 10, size=(500, 2))
    for x, y in q:
        z = interpolate_z(tin, x, y)
        if z is not None:
            assert z == pytest.approx(plane(x, y), abs=1e-9)


def test_vertex_query_exact(rng):
    xyz = rng.uniform(0, 10, size=(100, 3))
    tin = delaunay(xyz)
    for x, y, z in tin.vertices.tolist():
        assert interpolate_z(tin, x, y) == z


def test_outside_hull_absent():
    tin = delaunay(np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]]))
    assert interpolate_z(tin, 2.0, 2.0) is None
    assert interpolate_z(tin, -0.1, 0.5) is None


def test_edge_continuity(rng):
    tin = delaunay(rng.uniform(0, 10, size=(150, 3)))
    checked = 0
    for t, (a, b, c) in enumerate(tin.triangles.tolist()):
        for i, (u, w) in enumerate(((b, c), (c, a), (a, b))):
            other = tin.neighbors[t, i]
            if other < 0:
                continue
            s = rng.uniform(0.1, 0.9)
            x, y = tin.vertices[u, :2] * s + tin.vertices[w, :2] * (1 - s)
            assert abs(triangle_z(tin, t, x, y) - triangle_z(tin, other, x, y)) <= 1e-12
            checked += 1
    assert checked > 100


# --- OBJ ----------------------------------------------------------------

def test_one_triangle_obj(tmp_path):
    tin = delaunay(np.array([[0.0, 0, 1], [1.0, 0, 2], [0.0, 1, 3]]))
    p = tmp_path / "t.obj"
    export_obj(tin, p)
    lines = p.read_text().splitlines()
    assert [ln.split()[0] for ln in lines] == ["v", "v", "v", "f"]
    assert lines[3] == "f 1 2 3"


def test_obj_round_trip_and_precision(tmp_path, rng):
    xyz = rng.uniform(0, 50, size=(200, 3)) + [512345.0, 5612345.0, 100.0]
    tin = delaunay(xyz)
    p = tmp_path / "r.obj"
    export_obj(tin, p)
    verts, faces = read_obj(p)
    assert np.array_equal(faces, tin.triangles)
    assert np.array_equal(verts, tin.vertices)
    first = p.read_text().splitlines()[0].split()[1]
    assert len(first.replace(".", "").lstrip("0")) >= 9
