import numpy as np
import pytest

from voxmap.errors import ConfigurationError
from voxmap.esdf import EsdfConfig, new_esdf_layer, update_esdf
from voxmap.layer import TSDF, Layer
from voxmap.query import benchmark_queries, query_batch, sample_query_points

from worlds import dense_field, occupancy_layer, write_dense

VS = 0.05
N = 32
SITE = np.array([15, 16, 17])


@pytest.fixture(scope="module")
def point_obstacle():
    occ = np.zeros((N, N, N), bool)
    occ[tuple(SITE)] = True
    src = occupancy_layer(N // 8, VS)
    write_dense(src, occ)
    esdf = new_esdf_layer(VS)
    update_esdf(esdf, src, src.indices())
    return esdf


def nearest_oracle(esdf, pts):
    """Plain-Python nearest-voxel lookup on the dense field."""
    sqd = dense_field(esdf, "squared_distance", N).astype(np.float64)
    obs = dense_field(esdf, "observed", N).astype(bool)
    out = np.full(len(pts), np.nan)
    for i, p in enumerate(pts):
        v = np.floor(p / VS).astype(int)
        if (v < 0).any() or (v >= N).any() or not obs[tuple(v)]:
            continue
        out[i] = np.sqrt(sqd[tuple(v)]) * VS
    return out


def interior_points(rng, n):
    return rng.uniform(0.5 * VS, (N - 0.5) * VS, size=(n, 3))


def test_nearest_mode_matches_oracle(point_obstacle, rng):
    pts = interior_points(rng, 2000)
    res = query_batch(point_obstacle, pts, interpolation="nearest")
    want = nearest_oracle(point_obstacle, pts)
    assert res.valid.all()
    np.testing.assert_array_equal(res.distance, want)


def test_trilinear_and_gradient_against_point_obstacle(point_obstacle, rng):
    pts = interior_points(rng, 3000)
    res = query_batch(point_obstacle, pts)
    center = (SITE + 0.5) * VS
    true = np.linalg.norm(pts - center, axis=1)
    assert res.valid.all()
    assert np.abs(res.distance - true).max() <= VS
    far = true > 2 * VS
    radial = (pts[far] - center) / true[far, None]
    cos = np.sum(res.gradient[far] * radial, axis=1)
    assert np.degrees(np.arccos(np.clip(cos, -1, 1))).max() <= 15.0


def test_gradient_norms(point_obstacle, rng):
    res = query_batch(point_obstacle, interior_points(rng, 1000))
    norms = np.linalg.norm(res.gradient, axis=1)
    assert ((norms == 0) | (np.abs(norms - 1) <= 1e-3)).all()


def test_voxel_centers_read_stored_values(point_obstacle):
    idx = np.array([[3, 4, 5], [15, 16, 17], [20, 9, 30], [16, 16, 17]])
    pts = (idx + 0.5) * VS
    tri = query_batch(point_obstacle, pts, want_gradient=False)
    near = query_batch(point_obstacle, pts, want_gradient=False, interpolation="nearest")
    np.testing.assert_array_equal(tri.distance, near.distance)
    assert tri.distance[1] == 0.0
    assert tri.distance[3] == pytest.approx(VS)


def test_unknown_points(point_obstacle):
    pts = np.array([[10.0, 10.0, 10.0], [np.nan, 0.1, 0.1], [0.1, np.inf, 0.1], [-0.2, 0.1, 0.1]])
    res = query_batch(point_obstacle, pts)
    assert not res.valid.any()
    assert np.isnan(res.distance).all()
    assert (res.gradient == 0).all()


def test_order_and_batching_independence(point_obstacle, rng):
    pts = interior_points(rng, 1500)
    full = query_batch(point_obstacle, pts)
    perm = rng.permutation(len(pts))
    shuffled = query_batch(point_obstacle, pts[perm])
    np.testing.assert_array_equal(shuffled.distance, full.distance[perm])
    np.testing.assert_array_equal(shuffled.gradient, full.gradient[perm])
    parts = [query_batch(point_obstacle, c) for c in np.array_split(pts, 7)]
    np.testing.assert_array_equal(np.concatenate([p.distance for p in parts]), full.distance)
    np.testing.assert_array_equal(np.concatenate([p.gradient for p in parts]), full.gradient)


def test_sampling_is_seeded(point_obstacle):
    for mode in ("cor", "uncor"):
        a = sample_query_points(point_obstacle, 500, mode, seed=9)
        b = sample_query_points(point_obstacle, 500, mode, seed=9)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (500, 3)
    with pytest.raises(ConfigurationError):
        sample_query_points(point_obstacle, 10, "diagonal")


def test_benchmark_report(point_obstacle):
    rep = benchmark_queries(point_obstacle, 0)
    assert rep["count"] == 0 and rep["queries_per_second"] == 0.0
    rep = benchmark_queries(point_obstacle, 2000, "uncor", seed=1)
    assert rep["count"] == 2000 and rep["queries_per_second"] > 0
    assert 0 < rep["valid_fraction"] <= 1
    with pytest.raises(ConfigurationError):
        benchmark_queries(new_esdf_layer(VS), 10)


def test_wrong_layer_or_mode():
    with pytest.raises(ConfigurationError):
        query_batch(Layer(TSDF, VS), np.zeros((1, 3)))
    with pytest.raises(ConfigurationError):
        query_batch(new_esdf_layer(VS), np.zeros((1, 3)), interpolation="cubic")


def test_interior_distances_are_negative():
    occ = np.zeros((16, 16, 16), bool)
    occ[4:12, 4:12, 4:12] = True
    src = occupancy_layer(2, VS)
    write_dense(src, occ)
    cfg = EsdfConfig()
    esdf = new_esdf_layer(VS, cfg)
    update_esdf(esdf, src, src.indices(), cfg)
    pts = (np.array([[8, 8, 8], [5, 8, 8], [4, 8, 8], [2, 8, 8]]) + 0.5) * VS
    res = query_batch(esdf, pts, interpolation="nearest", want_gradient=False)
    np.testing.assert_allclose(res.distance, [-3 * VS, -VS, 0.0, 2 * VS])
