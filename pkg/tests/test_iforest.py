import json
import math

import numpy as np
import pytest

from drbfdd import iforest
from drbfdd.data import gaussian_blob_scenario
from drbfdd.errors import ShapeError
from drbfdd.evalkit import roc_auc


def test_harmonic_and_c():
    assert iforest.harmonic(1) == 1.0
    assert iforest.harmonic(4) == pytest.approx(25 / 12, rel=1e-15)
    assert iforest.average_path_length(1) == 0.0
    assert iforest.average_path_length(2) == pytest.approx(1.0)
    # 2 H(255) - 2 * 255 / 256
    assert iforest.average_path_length(256) == pytest.approx(2 * iforest.harmonic(255) - 2 * 255 / 256)


def test_two_points_single_split():
    f = iforest.fit(np.array([[0.0, 0.0], [1.0, 1.0]]), n_estimators=1, seed=0)
    t = f.trees[0]
    assert t.feature[0] >= 0 and t.feature.size == 3
    assert t.size[1:].tolist() == [1, 1]
    assert f.height_limit == 1


def test_same_seed_same_forest(rng):
    X = rng.normal(size=(300, 3))
    a, b = iforest.fit(X, 20, seed=5), iforest.fit(X, 20, seed=5)
    assert json.dumps(iforest.forest_to_dict(a)) == json.dumps(iforest.forest_to_dict(b))


def test_constant_feature_never_split(rng):
    X = np.column_stack([rng.normal(size=200), np.full(200, 3.0)])
    f = iforest.fit(X, 10, seed=0)
    for t in f.trees:
        assert 1 not in t.feature.tolist()
    g = iforest.fit(np.ones((50, 2)), 5, seed=0)
    assert all(t.feature.tolist() == [-1] for t in g.trees)
    assert np.all(iforest.score(g, np.ones((3, 2))) > 0)


def test_fixed_point_half():
    # a lone root leaf holding psi points gives E[h] = c(psi)
    g = iforest.fit(np.ones((64, 2)), 3, subsample=64, seed=0)
    assert iforest.score(g, np.array([1.0, 1.0])) == pytest.approx(0.5, rel=1e-15)


def test_outlier_scores_higher(rng):
    X = np.concatenate([rng.normal(size=(100, 2)) * 0.1, [[8.0, 8.0]]])
    f = iforest.fit(X, 100, seed=1)
    s = iforest.score(f, X)
    assert s[-1] > s[:-1].max()
    assert np.all((s > 0) & (s < 1))


def test_blob_auc():
    sc = gaussian_blob_scenario(500, 25, seed=2)
    f = iforest.fit(sc.normal, 100, seed=0)
    X = np.concatenate([sc.normal, sc.anomalous])
    truth = np.r_[np.zeros(500), np.ones(25)]
    assert roc_auc(iforest.score(f, X), truth) > 0.9


def test_leaf_invariant(rng):
    f = iforest.fit(rng.normal(size=(400, 3)), 30, seed=3)
    assert f.height_limit == 8
    for t in f.trees:
        leaves = t.feature == -1
        assert np.all((t.size[leaves] <= 1) | (t.depth[leaves] == f.height_limit))


def test_duplicate_clump_becomes_leaf():
    X = np.zeros((256, 2))
    X[0] = [5.0, 5.0]
    f = iforest.fit(X, 5, seed=0)
    for t in f.trees:
        leaves = t.feature == -1
        assert sorted(t.size[leaves].tolist()) == [1, 255]
        assert t.depth[leaves].max() == 1


def test_errors(rng):
    with pytest.raises(ValueError):
        iforest.fit(np.zeros((1, 2)))
    f = iforest.fit(rng.normal(size=(10, 2)), 2)
    with pytest.raises(ShapeError):
        iforest.score(f, np.zeros((1, 3)))


def test_json_round_trip(rng):
    X = rng.normal(size=(100, 2))
    f = iforest.fit(X, 10, seed=0)
    back = iforest.forest_from_dict(json.loads(json.dumps(iforest.forest_to_dict(f))))
    assert iforest.score(back, X).tobytes() == iforest.score(f, X).tobytes()
    assert math.ceil(math.log2(100)) == back.height_limit
