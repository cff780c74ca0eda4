import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survscan.core import GROUND, NON_GROUND, PointCloud, RigidTransform, concatenate, is_georeferenced
from survscan.errors import DegenerateGeometryError, FormatError, InsufficientPointsError, ValidationError
from survscan.preprocess import (
    Box,
    CorrespondencePair,
    Polygon,
    classify_ground,
    crop,
    deduplicate,
    estimate_rigid,
    georeference,
    icp_refine,
    knn_mean_distances,
    outlier_mask,
    read_correspondences,
    remove_outliers,
    write_correspondences,
)
from tests.conftest import grid_cloud, random_rotation


# --- oracles ------------------------------------------------------------

def dedup_oracle(xyz, tol):
    """Dictionary cell hash, first point per cell wins."""
    seen = {}
    for i, p in enumerate(xyz):
        key = tuple(int(math.floor(v / tol)) for v in p)
        seen.setdefault(key, i)
    return sorted(seen.values())


def outlier_oracle(xyz, k, alpha):
    n = len(xyz)
    dbar = []
    for i in range(n):
        d = sorted(math.dist(xyz[i], xyz[j]) for j in range(n) if j != i)
        dbar.append(sum(d[:k]) / k)
    mu = sum(dbar) / n
    sd = math.sqrt(sum((v - mu) ** 2 for v in dbar) / n)
    return [v > mu + alpha * sd for v in dbar]


def ray_cast(poly, x, y):
    """Textbook even-odd test; callers avoid boundary points."""
    inside = False
    n = len(poly)
    for i in range(n):
        (x1, y1), (x2, y2) = poly[i], poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xc:
                inside = not inside
    return inside


def make_pairs(src, dst):
    return [CorrespondencePair(f"p{i}", tuple(s), tuple(d)) for i, (s, d) in enumerate(zip(src, dst))]


# --- deduplicate --------------------------------------------------------

def test_exact_duplicates_halved(rng):
    xyz = rng.uniform(0, 10, size=(200, 3))
    c = PointCloud(np.vstack([xyz, xyz]))
    kept, removed = deduplicate(c, 0.001)
    assert removed == 200
    assert np.array_equal(kept.xyz, xyz)


def test_well_separated_points_untouched():
    c = grid_cloud(10, 10, 0.01)
    kept, removed = deduplicate(c, 0.001)
    assert removed == 0 and len(kept) == 100


@pytest.mark.parametrize("seed", range(10))
def test_dedup_matches_cell_hash_oracle(seed):
    rng = np.random.default_rng(seed)
    xyz = rng.uniform(-0.05, 0.05, size=(int(rng.integers(1, 1000)), 3))
    kept, removed = deduplicate(PointCloud(xyz), 0.01)
    expect = dedup_oracle(xyz, 0.01)
    assert kept.xyz.tolist() == xyz[expect].tolist()
    assert removed == len(xyz) - len(expect)


def test_dedup_rejects_bad_tolerance():
    with pytest.raises(ValidationError):
        deduplicate(PointCloud(np.zeros((1, 3))), 0.0)


# --- outliers -----------------------------------------------------------

def test_planted_outliers_removed(rng):
    plane = grid_cloud(100, 100, 0.01)
    idx = rng.choice(len(plane), 10, replace=False)
    spikes = plane.xyz[idx] + np.array([0.0, 0.0, 1.0])
    cloud = concatenate([plane, PointCloud(spikes)])
    kept, removed = remove_outliers(cloud, 8, 3.0)
    mask = outlier_mask(cloud, 8, 3.0)
    assert mask[-10:].all()
    assert (~mask[:-10]).sum() >= 0.99 * len(plane)
    assert len(kept) + len(removed) == len(cloud)


def test_regular_grid_nothing_removed():
    # every point of an infinite lattice sees the same neighbourhood; on a
    # finite grid that holds for the single nearest neighbour
    kept, removed = remove_outliers(grid_cloud(20, 20, 0.1), 1, 3.0)
    assert len(removed) == 0


@pytest.mark.parametrize("seed", range(8))
def test_outlier_decision_matches_brute_force(seed):
    rng = np.random.default_rng(100 + seed)
    n = 500 if seed == 0 else int(rng.integers(20, 300))
    xyz = rng.normal(size=(n, 3))
    xyz[: n // 50] *= 6
    k = int(rng.integers(1, 12))
    alpha = float(rng.uniform(0.5, 3.0))
    assert outlier_mask(PointCloud(xyz), k, alpha).tolist() == outlier_oracle(xyz, k, alpha)


def test_knn_mean_distances_brute_force(rng):
    xyz = rng.uniform(size=(80, 3))
    got = knn_mean_distances(PointCloud(xyz), 4)
    d = np.sqrt(((xyz[:, None] - xyz[None]) ** 2).sum(-1))
    np.fill_diagonal(d, np.inf)
    assert np.allclose(got, np.sort(d, axis=1)[:, :4].mean(axis=1), atol=1e-15)


def test_outliers_need_more_than_k_points():
    with pytest.raises(InsufficientPointsError, match="insufficient points for k-neighborhood"):
        remove_outliers(PointCloud(np.zeros((8, 3))), 8, 3.0)


def test_outliers_partition_input(rng):
    c = PointCloud(rng.normal(size=(400, 3)))
    kept, removed = remove_outliers(c, 5, 1.0)
    assert len(kept) + len(removed) == 400
    merged = np.vstack([kept.xyz, removed.xyz])
    assert sorted(map(tuple, merged)) == sorted(map(tuple, c.xyz))


# --- crop ---------------------------------------------------------------

def test_box_crop_identity_and_disjoint(rng):
    c = PointCloud(rng.uniform(0, 1, size=(100, 3)))
    assert len(crop(c, Box((0, 0, 0), (1, 1, 1)))) == 100
    assert len(crop(c, Box((5, 5, 5), (6, 6, 6)))) == 0


def test_box_includes_boundary():
    c = PointCloud(np.array([[0.0, 0, 0], [1.0, 1, 1], [1.0 + 1e-12, 0.5, 0.5]]))
    assert len(crop(c, Box((0, 0, 0), (1, 1, 1)))) == 2


def test_polygon_matches_ray_casting(rng):
    poly = [(0, 0), (4, 0), (4, 3), (2, 1), (0, 3)]
    xy = rng.uniform(-1, 5, size=(3000, 2))
    cloud = PointCloud(np.column_stack([xy, np.zeros(len(xy))]))
    got = Polygon(poly).contains(cloud.xyz)
    expect = [ray_cast(poly, x, y) for x, y in xy]
    assert got.tolist() == expect
    assert len(crop(cloud, Polygon(poly))) == sum(expect)


def test_polygon_boundary_points_are_inside():
    pts = np.array([[0, 0, 0], [2, 0, 0], [4, 1.5, 0], [2, 3, 0], [4, 3, 0]], dtype=float)
    assert Polygon([(0, 0), (4, 0), (4, 3), (0, 3)]).contains(pts).all()


def test_degenerate_polygons_rejected():
    with pytest.raises(DegenerateGeometryError):
        Polygon([(0, 0), (1, 1), (2, 2)])
    with pytest.raises(DegenerateGeometryError):
        Polygon([(0, 0), (1, 0)])
    with pytest.raises(DegenerateGeometryError):
        Polygon([(0, 0), (2, 2), (2, 0), (0, 2)])


# --- ground -------------------------------------------------------------

def test_flat_plane_all_ground():
    out = classify_ground(grid_cloud(20, 20, 0.1, z=3.0), 0.5, 0.1)
    assert (out.classification == GROUND).all()


def test_box_above_plane_is_non_ground():
    plane = grid_cloud(40, 40, 0.05)
    box = grid_cloud(6, 6, 0.05, z=1.5, origin=(0.7, 0.7))
    box_top = PointCloud(box.xyz)
    out = classify_ground(concatenate([plane, box_top]), 0.5, 0.1)
    assert (out.classification[: len(plane)] == GROUND).all()
    assert (out.classification[len(plane):] == NON_GROUND).all()
    assert np.array_equal(out.xyz, concatenate([plane, box_top]).xyz)


def test_single_point_per_cell_is_ground(rng):
    c = grid_cloud(5, 5, 1.0)
    c = PointCloud(c.xyz + np.array([0.5, 0.5, 0.0]) + np.column_stack([np.zeros((25, 2)), rng.normal(size=25)]))
    assert (classify_ground(c, 1.0, 0.01).classification == GROUND).all()


def test_ground_monotone_in_threshold(rng):
    c = PointCloud(rng.uniform(0, 5, size=(2000, 3)))
    prev = None
    for h in (0.05, 0.2, 0.5, 1.0, 3.0):
        g = classify_ground(c, 0.5, h).classification == GROUND
        if prev is not None:
            assert (g | ~prev).all()
        prev = g


def test_classify_validates():
    with pytest.raises(ValidationError):
        classify_ground(PointCloud(np.zeros((1, 3))), 0.0, 0.1)
    with pytest.raises(ValidationError):
        classify_ground(PointCloud(np.zeros((1, 3))), 1.0, 0.0)


# --- estimate_rigid -----------------------------------------------------

def test_exact_recovery(rng):
    for _ in range(20):
        r = random_rotation(rng)
        t = rng.uniform(-100, 100, 3)
        src = rng.uniform(-20, 20, size=(int(rng.integers(3, 30)), 3))
        res = estimate_rigid(make_pairs(src, src @ r.T + t))
        assert np.abs(res.transform.rotation - r).max() < 1e-9
        assert np.abs(res.transform.translation - t).max() < 1e-9
        assert res.rms_residual < 1e-9
        assert res.iterations == 1


def test_antipodal_right_triangle():
    src = np.array([[0.0, 0, 0], [3.0, 0, 0], [0.0, 4, 0]])
    r = np.diag([-1.0, -1.0, 1.0])
    res = estimate_rigid(make_pairs(src, src @ r.T))
    assert np.linalg.det(res.transform.rotation) == pytest.approx(1.0, abs=1e-12)
    assert np.abs(res.transform.rotation - r).max() < 1e-9
    assert res.rms_residual < 1e-9


def test_noisy_rms_bound(rng):
    r = random_rotation(rng)
    src = rng.uniform(-10, 10, size=(20, 3))
    dst = src @ r.T + 5 + rng.normal(scale=0.001, size=(20, 3))
    res = estimate_rigid(make_pairs(src, dst))
    assert res.rms_residual <= 0.002
    norms = np.linalg.norm(res.transform.apply_points(src) - dst, axis=1)
    assert res.rms_residual == pytest.approx(math.sqrt(np.mean(norms ** 2)), rel=1e-12)
    assert set(res.per_pair_residuals) == {f"p{i}" for i in range(20)}


def test_order_invariance(rng):
    src = rng.uniform(-10, 10, size=(12, 3))
    dst = src @ random_rotation(rng).T + rng.normal(scale=0.01, size=(12, 3))
    pairs = make_pairs(src, dst)
    a = estimate_rigid(pairs)
    b = estimate_rigid(list(reversed(pairs)))
    assert np.abs(a.transform.as_matrix() - b.transform.as_matrix()).max() < 1e-9


def test_registration_errors():
    src = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])
    with pytest.raises(DegenerateGeometryError, match="degenerate configuration"):
        estimate_rigid(make_pairs(src, src))
    with pytest.raises(InsufficientPointsError):
        estimate_rigid(make_pairs(src[:2], src[:2]))
    dup = [CorrespondencePair("a", (0, 0, 0), (0, 0, 0))] * 3
    with pytest.raises(ValidationError):
        estimate_rigid(dup)


def test_georeference_translation_only(rng):
    cloud = PointCloud(rng.uniform(0, 10, size=(50, 3)))
    ctrl_src = np.array([[0.0, 0, 0], [10, 0, 0], [0, 10, 0], [0, 0, 5]])
    offset = np.array([500000.0, 5600000.0, 120.0])
    out, res = georeference(cloud, make_pairs(ctrl_src, ctrl_src + offset), "EPSG:32633")
    assert np.abs(out.xyz - (cloud.xyz + offset)).max() < 1e-6
    assert is_georeferenced(out.frame)
    assert max(res.per_pair_residuals.values()) < 1e-9


def test_georeference_noisy(rng):
    # per-axis sigma 2 mm; judged over the whole Monte-Carlo ensemble
    rms = []
    for _ in range(100):
        src = rng.uniform(-50, 50, size=(6, 3))
        dst = src @ random_rotation(rng).T + rng.uniform(-1e3, 1e3, 3) + rng.normal(scale=0.002, size=(6, 3))
        _, res = georeference(PointCloud(src), make_pairs(src, dst))
        rms.append(res.rms_residual)
    rms = np.array(rms)
    assert math.sqrt(np.mean(rms ** 2)) <= 0.004
    assert np.mean(rms <= 0.004) >= 0.95


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    n=st.integers(3, 15),
)
def test_exact_recovery_property(seed, n):
    rng = np.random.default_rng(seed)
    src = rng.uniform(-5, 5, size=(n, 3))
    r = random_rotation(rng)
    res = estimate_rigid(make_pairs(src, src @ r.T + 1.0))
    assert res.rms_residual < 1e-9


def test_correspondence_file_round_trip(tmp_path, rng):
    src = rng.normal(size=(4, 3))
    pairs = make_pairs(src, src + 1)
    p = tmp_path / "pairs.txt"
    write_correspondences(pairs, p)
    assert read_correspondences(p) == pairs


def test_correspondence_file_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("# c\na 0 0 0 1 1 1\nb 0 0 0 1 1\n")
    with pytest.raises(FormatError, match="line 3"):
        read_correspondences(p)
    p.write_text("a 0 0 0 1 1 1\na 1 0 0 1 1 1\n")
    with pytest.raises(FormatError, match="duplicate id"):
        read_correspondences(p)


# --- ICP ----------------------------------------------------------------

def road_patch(rng, n=6000, size=4.0):
    """Gently curved road surface with a crown and a pothole-like dip."""
    xy = rng.uniform(0, size, size=(n, 2))
    x, y = xy[:, 0], xy[:, 1]
    z = 0.05 * np.sin(1.3 * x) + 0.08 * np.cos(0.9 * y) - 0.03 * np.exp(-((x - 2) ** 2 + (y - 1.5) ** 2) * 4)
    return np.column_stack([x, y, z])


def test_icp_identity_converges_immediately(rng):
    c = PointCloud(road_patch(rng, 2000))
    res = icp_refine(c, c)
    assert res.iterations == 1 and res.converged
    assert res.rms_residual < 1e-12


def test_icp_recovers_5cm_displacement(rng):
    src = PointCloud(road_patch(rng))
    shift = np.array([0.05, -0.03, 0.01])
    shift *= 0.05 / np.linalg.norm(shift)
    dst = PointCloud(src.xyz + shift)
    res = icp_refine(src, dst, RigidTransform.identity(), max_iter=100, converge_tol=1e-9)
    assert np.linalg.norm(res.transform.translation - shift) <= 0.002
    hist = np.array(res.history)
    assert (np.diff(hist) <= 0).all()
    assert res.rms_residual <= hist[0]


def test_icp_non_overlapping_terminates(rng):
    a = PointCloud(road_patch(rng, 500))
    b = PointCloud(road_patch(rng, 500) + np.array([100.0, 0, 0]))
    res = icp_refine(a, b, max_iter=10)
    assert res.iterations <= 10
    assert not res.converged
    assert math.isfinite(res.rms_residual)


def test_icp_empty_cloud():
    with pytest.raises(InsufficientPointsError):
        icp_refine(PointCloud(np.empty((0, 3))), PointCloud(np.zeros((3, 3))))
