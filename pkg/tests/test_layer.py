import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from voxmap import _hash
from voxmap.errors import AllocationError, ConfigurationError
from voxmap.layer import (
    COLOR,
    ESDF,
    MAX_SQUARED_DISTANCE,
    OCCUPANCY,
    TSDF,
    Layer,
    LayerCake,
    linear_index,
    position_to_indices,
    sort_indices,
    voxel_center,
)


@pytest.mark.parametrize(
    "p, block, voxel",
    [
        ((0.0, 0.0, 0.0), (0, 0, 0), (0, 0, 0)),
        ((-0.01, 0.0, 0.0), (-1, 0, 0), (7, 0, 0)),
        ((0.43, 0.05, -0.40), (1, 0, -1), (0, 1, 0)),
    ],
)
def test_position_to_indices_examples(p, block, voxel):
    b, v = position_to_indices(np.array([p]), 0.05)
    assert tuple(b[0]) == block
    assert tuple(v[0]) == voxel


@pytest.mark.parametrize(
    "block, voxel, center",
    [((0, 0, 0), (0, 0, 0), (0.025, 0.025, 0.025)), ((-1, 0, 0), (7, 0, 0), (-0.025, 0.025, 0.025))],
)
def test_voxel_center_examples(block, voxel, center):
    c = voxel_center(np.array([block]), np.array([voxel]), 0.05)
    np.testing.assert_allclose(c[0], center, atol=1e-12)


def test_center_round_trip_1000(rng):
    g = rng.integers(-500, 500, size=(1000, 3))
    v = rng.integers(0, 8, size=(1000, 3))
    for vs in (0.01, 0.05, 0.3):
        b2, v2 = position_to_indices(voxel_center(g, v, vs), vs)
        assert np.array_equal(b2, g) and np.array_equal(v2, v)


@given(st.lists(st.floats(-100, 100), min_size=3, max_size=3), st.sampled_from([0.02, 0.05, 0.1]))
def test_point_inside_its_voxel(p, vs):
    p = np.array([p])
    b, v = position_to_indices(p, vs)
    assert np.all((v >= 0) & (v < 8))
    lo = (8 * b + v) * vs
    # floor arithmetic: the point is inside its voxel cube (up to rounding of the division)
    assert np.all(p >= lo - 1e-9) and np.all(p < lo + vs + 1e-9)


def test_linear_index_layout():
    assert linear_index(1, 0, 0) == 1
    assert linear_index(0, 1, 0) == 8
    assert linear_index(0, 0, 1) == 64
    assert linear_index(7, 7, 7) == 511


def test_allocate_idempotent_and_defaults():
    layer = Layer(TSDF, 0.05)
    s1 = layer.allocate((1, 2, 3))
    s2 = layer.allocate((1, 2, 3))
    assert s1 == s2 and layer.num_blocks == 1
    assert np.all(layer.data["weight"][s1] == 0)
    occ = Layer(OCCUPANCY, 0.05)
    assert np.all(occ.data["log_odds"][occ.allocate((0, 0, 0))] == 0)
    esdf = Layer(ESDF, 0.05)
    s = esdf.allocate((0, 0, 0))
    assert np.all(esdf.data["observed"][s] == 0)
    assert np.all(esdf.data["squared_distance"][s] == MAX_SQUARED_DISTANCE)


def test_allocate_4096_blocks(rng):
    layer = Layer(OCCUPANCY, 0.05)
    idx = np.stack(np.meshgrid(np.arange(16), np.arange(16), np.arange(16), indexing="ij"), -1).reshape(-1, 3) - 8
    slots, new = layer.allocate_many(idx)
    assert layer.num_blocks == 4096 and new.all()
    assert len(set(slots.tolist())) == 4096
    assert np.array_equal(layer.slots(idx), slots)
    slots2, new2 = layer.allocate_many(idx[::-1])
    assert not new2.any() and np.array_equal(slots2, slots[::-1])


def test_capacity_exhaustion_is_distinct_error():
    layer = Layer(TSDF, 0.05, max_blocks=2)
    layer.allocate((0, 0, 0))
    layer.allocate((1, 0, 0))
    with pytest.raises(AllocationError):
        layer.allocate((2, 0, 0))
    with pytest.raises(AllocationError):
        layer.allocate_many([(5, 5, 5), (6, 6, 6)])
    with pytest.raises(AllocationError):
        Layer(TSDF, 0.05).allocate((_hash.COORD_MAX + 1, 0, 0))


def test_hash_matches_dict_oracle(rng):
    h = _hash.BlockHash(4)
    ref = {}
    pts = rng.integers(-3000, 3000, size=(5000, 3))
    for i, p in enumerate(pts):
        key = tuple(int(c) for c in p)
        if key not in ref:
            ref[key] = i
            h.put(*key, i)
    for key, val in ref.items():
        assert h.get(*key) == val
    probe = rng.integers(-3000, 3000, size=(2000, 3))
    got = h.get_many(probe)
    want = [ref.get(tuple(int(c) for c in p), -1) for p in probe]
    assert got.tolist() == want


def test_iteration_order_is_deterministic():
    a, b = Layer(TSDF, 0.05), Layer(TSDF, 0.05)
    idx = [(3, 1, 0), (-1, 0, 2), (0, 0, 0), (3, 0, 5)]
    for i in idx:
        a.allocate(i)
    for i in reversed(idx):
        b.allocate(i)
    assert np.array_equal(a.indices(), b.indices())
    assert np.array_equal(a.indices(), sort_indices(idx))


def test_block_view_indexing():
    layer = Layer(TSDF, 0.05)
    s = layer.allocate((0, 0, 0))
    layer.data["distance"][s, linear_index(1, 2, 3)] = 7.0
    assert layer.block((0, 0, 0))["distance"][1, 2, 3] == 7.0


def test_records_round_trip(rng):
    layer = Layer(COLOR, 0.05)
    s = layer.allocate((0, 0, 0))
    layer.data["color"][s] = rng.integers(0, 255, (512, 3))
    layer.data["weight"][s] = rng.random(512)
    rec = layer.records(s)
    assert rec.dtype.itemsize == COLOR.record_size == 7
    other = Layer(COLOR, 0.05)
    t = other.allocate((0, 0, 0))
    other.set_records(t, rec)
    assert np.array_equal(other.data["color"][t], layer.data["color"][s])


def test_copy_is_independent():
    layer = Layer(TSDF, 0.05)
    s = layer.allocate((0, 0, 0))
    c = layer.copy()
    layer.data["distance"][s, 0] = 1.0
    assert c.data["distance"][c.slot((0, 0, 0)), 0] == 0.0


def test_layer_cake_rejects_mixed_voxel_sizes():
    cake = LayerCake(0.05)
    cake.add("tsdf", TSDF)
    cake.layers["bad"] = Layer(ESDF, 0.1)
    with pytest.raises(ConfigurationError):
        cake.validate()
