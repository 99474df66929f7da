import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal

from somtest.exceptions import MalformedDocumentError, ShapeError
from somtest.som import (
    MapGeometry,
    SomModel,
    TrainSchedule,
    bmu,
    bmus,
    deserialize,
    init_map,
    project_counts,
    serialize,
    train,
)


def identity_model(codebook, width=None, height=1):
    codebook = np.asarray(codebook, dtype=float)
    k, d = codebook.shape
    geometry = MapGeometry(width or k // height, height)
    return SomModel(geometry, codebook, np.zeros(d), np.ones(d))


@pytest.fixture
def blobs():
    rng = np.random.default_rng(7)
    return rng.normal(size=(300, 3)) * [1.0, 5.0, 0.2] + [0.0, 10.0, -3.0]


def test_geometry_positions_row_major():
    g = MapGeometry(3, 2)
    assert_array_equal(g.positions(), [[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1]])
    with pytest.raises(ValueError):
        MapGeometry(0, 3)
    with pytest.raises(ValueError):
        MapGeometry(3, 3, grid="hexagonal")


def test_schedule_validation():
    with pytest.raises(ValueError):
        TrainSchedule(epochs=0)
    with pytest.raises(ValueError):
        TrainSchedule(delta0=1.0, delta_final=2.0)
    with pytest.raises(ValueError):
        TrainSchedule(alpha0=0.0)
    radii = TrainSchedule(epochs=5).radii(MapGeometry(10, 6))
    assert_allclose(radii, [5.0, 4.0, 3.0, 2.0, 1.0])
    assert_allclose(TrainSchedule(epochs=3).radii(MapGeometry(1, 1)), [0.5, 0.5, 0.5])


@pytest.mark.parametrize("init", ["random", "pca"])
def test_init_constant_feature(init):
    rng = np.random.default_rng(0)
    data = np.column_stack([np.full(50, 5.0), rng.normal(size=50), rng.normal(size=50)])
    model = init_map(MapGeometry(4, 3), data, init, seed=1)
    assert model.feature_means[0] == 5.0
    assert model.feature_scales[0] == 1.0
    assert_allclose(model.codebook[:, 0], 0.0, atol=1e-12)


@pytest.mark.parametrize("init", ["random", "pca"])
def test_init_deterministic(blobs, init):
    a = init_map(MapGeometry(5, 4), blobs, init, seed=99)
    b = init_map(MapGeometry(5, 4), blobs, init, seed=99)
    assert a.codebook.tobytes() == b.codebook.tobytes()


def test_init_random_within_standardized_range(blobs):
    model = init_map(MapGeometry(6, 6), blobs, "random", seed=3)
    z = model.standardize(blobs)
    assert np.all(model.codebook >= z.min(axis=0))
    assert np.all(model.codebook <= z.max(axis=0))
    assert_allclose(model.feature_means, blobs.mean(axis=0))
    assert_allclose(model.feature_scales, blobs.std(axis=0))


def test_init_pca_on_diagonal_line():
    t = np.linspace(-3, 3, 40)
    data = np.column_stack([t, t])
    model = init_map(MapGeometry(5, 4), data, "pca")
    cb = model.codebook
    assert_allclose(cb[:, 0], cb[:, 1], atol=1e-9)
    # hand eigen-decomposition: standardized covariance [[1,1],[1,1]] -> axis (1,1)/sqrt(2), eigenvalue 2
    first_axis = cb[1] - cb[0]
    assert_allclose(first_axis / np.linalg.norm(first_axis), [1 / math.sqrt(2)] * 2, atol=1e-9)
    # width spans +/- 2 standard deviations (sqrt 2) along that axis
    assert_allclose(np.linalg.norm(cb[4] - cb[0]), 4 * math.sqrt(2), atol=1e-9)


def test_init_pca_one_dimensional():
    data = np.arange(10.0)[:, None]
    model = init_map(MapGeometry(3, 2), data, "pca")
    assert_allclose(model.codebook[:3, 0], model.codebook[3:, 0])


def test_init_errors():
    g = MapGeometry(2, 2)
    with pytest.raises(ValueError):
        init_map(g, np.empty((0, 2)))
    with pytest.raises(ValueError):
        init_map(g, [[1.0, 2.0]])
    with pytest.raises(ValueError):
        init_map(g, [[1.0, np.nan], [0.0, 1.0]])
    with pytest.raises(ShapeError):
        init_map(g, np.empty((5, 0)))
    with pytest.raises(ValueError):
        init_map(g, np.ones((5, 2)), "pca")


def test_bmu_examples():
    assert bmu(identity_model([[0, 0], [1, 1]]), [0.9, 0.8]) == 1
    cb = np.arange(12.0).reshape(6, 2)
    assert bmu(identity_model(cb), cb[3]) == 3
    assert bmu(identity_model([[0, 0], [0, 0]]), [5.0, -2.0]) == 0


def test_bmu_standardizes_input():
    model = SomModel(MapGeometry(2, 1), [[0.0], [1.0]], [10.0], [2.0])
    assert bmu(model, [11.9]) == 1
    assert bmu(model, [10.9]) == 0


def test_bmu_errors():
    model = identity_model([[0, 0], [1, 1]])
    with pytest.raises(ShapeError):
        bmu(model, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        bmu(model, [np.inf, 0.0])


@settings(max_examples=60)
@given(arrays(np.float64, (8, 3), elements=st.floats(-1e6, 1e6)),
       arrays(np.float64, 3, elements=st.floats(-1e9, 1e9)))
def test_bmu_index_in_range(codebook, x):
    model = identity_model(codebook, width=4, height=2)
    assert 0 <= bmu(model, x) < 8


def test_train_online_single_neuron():
    model = identity_model([[0.0, 0.0]])
    out = train(model, [[1.0, 1.0]], TrainSchedule(epochs=1, mode="online", alpha0=0.5))
    assert_allclose(out.codebook, [[0.5, 0.5]])
    assert_array_equal(model.codebook, [[0.0, 0.0]])


def test_train_batch_single_neuron():
    model = identity_model([[7.0, 7.0]])
    out = train(model, [[0.0, 0.0], [2.0, 0.0]], TrainSchedule(epochs=1, mode="batch", delta0=3.0))
    assert_allclose(out.codebook, [[1.0, 0.0]])


def test_train_batch_two_neurons_hand_value():
    model = identity_model([[0.0], [10.0]], width=1, height=2)
    schedule = TrainSchedule(epochs=1, mode="batch", delta0=0.5, delta_final=0.5)
    out = train(model, [[0.0], [10.0]], schedule)
    h = math.exp(-1.0 / (2 * 0.25))
    expected0 = (0 * 1 + 10 * h) / (1 + h)
    assert_allclose(out.codebook[:, 0], [expected0, 10 - expected0], atol=1e-12)
    assert_allclose(expected0, 1.1920, atol=1e-4)


def test_train_batch_keeps_unreached_neurons():
    # far neuron gets zero weight once exp underflows
    model = identity_model([[0.0], [1e3]], width=2)
    out = train(model, [[0.0], [0.5]], TrainSchedule(epochs=1, delta0=0.01, delta_final=0.01))
    assert_allclose(out.codebook[:, 0], [0.25, 1e3])


def test_train_errors():
    model = identity_model([[0.0, 0.0]])
    with pytest.raises(ShapeError):
        train(model, [[1.0, 2.0, 3.0]], TrainSchedule())
    with pytest.raises(ValueError):
        train(model, np.empty((0, 2)), TrainSchedule())


@settings(max_examples=60)
@given(arrays(np.float64, (6, 2), elements=st.floats(-100, 100)),
       arrays(np.float64, 2, elements=st.floats(-100, 100)),
       st.floats(0.01, 1.0), st.floats(0.1, 5.0))
def test_online_update_contracts_towards_sample(codebook, x, alpha, delta):
    model = identity_model(codebook, width=3, height=2)
    b = bmu(model, x)
    before = np.linalg.norm(model.codebook[b] - x)
    out = train(model, x[None, :], TrainSchedule(epochs=1, mode="online", alpha0=alpha,
                                                   delta0=delta, delta_final=delta))
    assert np.linalg.norm(out.codebook[b] - x) <= before + 1e-12


def test_batch_fixed_point(blobs):
    geometry = MapGeometry(4, 4)
    schedule = TrainSchedule(epochs=1, delta0=1.5, delta_final=1.5)
    model = init_map(geometry, blobs)
    for _ in range(200):
        nxt = train(model, blobs, schedule)
        if np.array_equal(nxt.codebook, model.codebook):
            break
        model = nxt
    again = train(model, blobs, schedule)
    assert_allclose(again.codebook, model.codebook, atol=1e-12, rtol=0)


@pytest.mark.parametrize("mode", ["batch", "online"])
def test_training_deterministic(blobs, mode):
    geometry = MapGeometry(5, 5)
    schedule = TrainSchedule(epochs=4, mode=mode, init="random", seed=17)
    runs = [train(init_map(geometry, blobs, "random", 17), blobs, schedule) for _ in range(2)]
    assert runs[0].codebook.tobytes() == runs[1].codebook.tobytes()


def test_training_changes_with_seed(blobs):
    geometry = MapGeometry(5, 5)
    a = train(init_map(geometry, blobs), blobs, TrainSchedule(mode="online", seed=1))
    b = train(init_map(geometry, blobs), blobs, TrainSchedule(mode="online", seed=2))
    assert not np.array_equal(a.codebook, b.codebook)


def test_project_counts():
    model = identity_model([[0.0], [10.0], [20.0]], width=3)
    X = [[0.1], [-0.4], [0.2]]
    grid = project_counts(model, X, np.empty((0, 1)))
    assert_array_equal(grid.R, [3, 0, 0])
    assert_array_equal(grid.S, [0, 0, 0])
    same = project_counts(model, [[1.0], [12.0], [25.0]], [[1.0], [12.0], [25.0]])
    assert_array_equal(same.R, same.S)
    assert same.n_x == 3 and same.n_z == 3


def test_project_counts_dimension_mismatch():
    model = identity_model([[0.0, 0.0], [1.0, 1.0]])
    with pytest.raises(ShapeError):
        project_counts(model, [[1.0, 2.0]], [[1.0, 2.0, 3.0]])


def test_serialize_round_trip(blobs):
    model = train(init_map(MapGeometry(6, 3), blobs), blobs, TrainSchedule())
    back = deserialize(serialize(model))
    assert back.geometry == model.geometry
    assert back.codebook.tobytes() == model.codebook.tobytes()
    assert back.feature_means.tobytes() == model.feature_means.tobytes()
    assert back.feature_scales.tobytes() == model.feature_scales.tobytes()
    probes = np.random.default_rng(5).normal(size=(100, 3)) * 6
    assert_array_equal(bmus(back, probes), bmus(model, probes))


def _doc(model):
    return json.loads(serialize(model))


def test_deserialize_shape_error():
    doc = _doc(identity_model([[0.0], [1.0], [2.0], [3.0]], width=2, height=2))
    doc["codebook"] = doc["codebook"][:3]
    with pytest.raises(ShapeError):
        deserialize(json.dumps(doc))


def test_deserialize_missing_field():
    doc = _doc(identity_model([[0.0], [1.0]]))
    del doc["feature_scales"]
    with pytest.raises(MalformedDocumentError):
        deserialize(json.dumps(doc))


def test_deserialize_version_and_garbage():
    doc = _doc(identity_model([[0.0], [1.0]]))
    doc["version"] = 99
    with pytest.raises(MalformedDocumentError):
        deserialize(json.dumps(doc))
    with pytest.raises(MalformedDocumentError):
        deserialize(b"{not json")


def test_model_invariants():
    with pytest.raises(ValueError):
        SomModel(MapGeometry(2, 1), [[0.0], [np.nan]], [0.0], [1.0])
    with pytest.raises(ValueError):
        SomModel(MapGeometry(2, 1), [[0.0], [1.0]], [0.0], [0.0])
    with pytest.raises(ShapeError):
        SomModel(MapGeometry(3, 1), [[0.0], [1.0]], [0.0], [1.0])


def adjacency_contrast(model, n_random=1000, seed=0):
    """Mean codebook distance of grid-adjacent pairs and of random non-adjacent pairs."""
    g = model.geometry
    pos = g.positions()
    cb = model.codebook
    adjacent = [(i, j) for i in range(g.n_neurons) for j in range(i + 1, g.n_neurons)
                if np.abs(pos[i] - pos[j]).sum() == 1]
    adj = np.mean([np.linalg.norm(cb[i] - cb[j]) for i, j in adjacent])
    rng = np.random.default_rng(seed)
    far = []
    while len(far) < n_random:
        i, j = rng.integers(g.n_neurons, size=2)
        if i != j and np.abs(pos[i] - pos[j]).sum() > 1:
            far.append(np.linalg.norm(cb[i] - cb[j]))
    return adj, float(np.mean(far))


@pytest.mark.parametrize("init", ["pca", "random"])
def test_topology_preserved_on_uniform_square(init):
    data = np.random.default_rng(11).uniform(size=(2000, 2))
    schedule = TrainSchedule(epochs=20, init=init, seed=3)
    model = train(init_map(MapGeometry(10, 10), data, init, 3), data, schedule)
    adj, far = adjacency_contrast(model)
    assert adj < far
