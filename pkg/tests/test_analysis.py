import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srulab.analysis import (
    ClassConditional,
    FeatureSet,
    box_stats,
    mahalanobis,
    pca_fit_project,
    read_feature_csv,
    success_by_distance,
)
from srulab.tensor import ContractError


# --- Mahalanobis --------------------------------------------------------------


@pytest.mark.parametrize("seed", range(10))
def test_identity_covariance_gives_euclidean(seed):
    rng = np.random.default_rng(seed)
    D = int(rng.integers(1, 12))
    mu = rng.normal(size=D)
    fs = FeatureSet(mu, np.eye(D))
    x = rng.normal(size=(7, D)) * 5
    np.testing.assert_allclose(mahalanobis(x, fs), np.linalg.norm(x - mu, axis=1), rtol=0, atol=1e-12)


def test_mahalanobis_at_mean_is_zero_and_single_query_is_scalar():
    fs = FeatureSet(np.array([1.0, 2.0]), np.diag([4.0, 9.0]))
    assert fs.mahalanobis(np.array([1.0, 2.0])) == 0.0
    assert fs.mahalanobis(np.array([3.0, 2.0])) == pytest.approx(1.0, abs=1e-15)
    assert fs.mahalanobis(np.array([1.0, -1.0])) == pytest.approx(1.0, abs=1e-15)


def test_mahalanobis_matches_explicit_inverse():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(5, 5))
    cov = A @ A.T + np.eye(5)
    mu = rng.normal(size=5)
    x = rng.normal(size=(20, 5))
    inv = np.linalg.inv(cov)
    expect = np.sqrt(np.einsum("ni,ij,nj->n", x - mu, inv, x - mu))
    np.testing.assert_allclose(mahalanobis(x, FeatureSet(mu, cov)), expect, rtol=1e-10)


def test_fit_uses_sample_covariance_and_trace_scaled_ridge():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(200, 3)) * [1.0, 2.0, 3.0]
    fs = FeatureSet.fit(X)
    np.testing.assert_allclose(fs.cov, np.cov(X, rowvar=False), rtol=1e-12)
    assert fs.ridge == pytest.approx(1e-6 * np.trace(fs.cov) / 3)


def test_singular_covariance_without_ridge_is_a_contract_error():
    X = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])  # rank one
    with pytest.raises(ContractError):
        FeatureSet.fit(X, ridge_scale=0.0).mahalanobis(np.zeros(2))
    d = FeatureSet.fit(X).mahalanobis(np.array([0.0, 1.0]))  # off the data line: large but finite
    assert np.isfinite(d) and d > 50


def test_featureset_validation():
    with pytest.raises(ValueError):
        FeatureSet(np.zeros(2), np.eye(3))
    with pytest.raises(ValueError):
        FeatureSet(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        FeatureSet.fit(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        mahalanobis(np.zeros(3), FeatureSet(np.zeros(2), np.eye(2)))


def test_class_conditional_takes_nearest_class():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(100, 2)) + [10, 0]
    b = rng.normal(size=(100, 2)) - [10, 0]
    cc = ClassConditional.fit(np.vstack([a, b]), [0] * 100 + [1] * 100)
    d = cc.mahalanobis(np.array([[10.0, 0.0], [-10.0, 0.0], [0.0, 0.0]]))
    assert d[0] < 0.5 and d[1] < 0.5 and d[2] > 5
    # the pooled single-Gaussian view sees the origin as typical
    assert FeatureSet.fit(np.vstack([a, b])).mahalanobis(np.zeros(2)) < 0.5


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_mahalanobis_invariant_under_affine_maps(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(50, 3))
    x = rng.normal(size=(4, 3))
    A = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    b = rng.normal(size=3)
    d0 = FeatureSet.fit(X, ridge_scale=0.0).mahalanobis(x)
    d1 = FeatureSet.fit(X @ A.T + b, ridge_scale=0.0).mahalanobis(x @ A.T + b)
    np.testing.assert_allclose(d0, d1, rtol=1e-7)


# --- PCA -------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(10))
def test_pca_components_orthonormal_and_variance_sorted(seed):
    rng = np.random.default_rng(seed)
    N, D = 60, int(rng.integers(2, 10))
    X = rng.normal(size=(N, D)) @ rng.normal(size=(D, D))
    k = int(rng.integers(1, D + 1))
    r = pca_fit_project(X, k)
    np.testing.assert_allclose(r.components @ r.components.T, np.eye(k), atol=1e-9)
    assert np.all(np.diff(r.explained_variance) <= 1e-12)
    np.testing.assert_allclose(r.projections, (X - X.mean(0)) @ r.components.T, atol=1e-10)
    np.testing.assert_allclose(r.projections.var(axis=0, ddof=1), r.explained_variance, rtol=1e-8, atol=1e-10)


def test_pca_full_rank_reconstruction_is_exact_and_variance_sums():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 4))
    r = pca_fit_project(X, 4)
    np.testing.assert_allclose(r.reconstruct(r.projections), X, atol=1e-10)
    assert r.explained_variance.sum() == pytest.approx(np.trace(np.cov(X, rowvar=False)))
    assert r.explained_ratio.sum() == pytest.approx(1.0)


def test_pca_recovers_dominant_axis():
    rng = np.random.default_rng(2)
    t = rng.normal(size=500) * 10
    X = np.column_stack([t, t, rng.normal(size=500) * 0.1])
    r = pca_fit_project(X, 1)
    np.testing.assert_allclose(r.components[0], [2 ** -0.5, 2 ** -0.5, 0.0], atol=1e-3)


def test_pca_rank_deficient_input_still_orthonormal():
    X = np.tile(np.arange(8.0)[:, None], (1, 5))  # rank one, D = 5
    r = pca_fit_project(X, 5)
    np.testing.assert_allclose(r.components @ r.components.T, np.eye(5), atol=1e-9)
    np.testing.assert_allclose(r.explained_variance[1:], 0.0, atol=1e-12)


def test_pca_argument_checks():
    X = np.zeros((3, 4))
    for k in (0, 3, 5):
        with pytest.raises(ValueError):
            pca_fit_project(X, k)
    with pytest.raises(ValueError):
        pca_fit_project(np.zeros(4), 1)


# --- success by distance ---------------------------------------------------------


def test_success_by_distance_hand_fixture():
    d = [1.0, 5.0, 9.99, 10.0, 12.0, 19.0, 20.0, 25.0, -1.0]
    s = [1, 0, 1, 1, 0, 0, 1, 1, 1]
    b = success_by_distance(d, s, [0, 10, 20])
    assert b.totals == [3, 4]
    assert b.successes == [2, 2]
    assert b.rates == [pytest.approx(2 / 3), 0.5]
    assert b.out_of_range == 2


def test_success_by_distance_empty_bucket_is_none():
    b = success_by_distance([1.0, 2.0], [True, False], [0, 5, 10, 15])
    assert b.totals == [2, 0, 0]
    assert b.rates == [0.5, None, None]
    assert b.to_dict()["rates"] == [0.5, None, None]


def test_all_successes_give_unit_rates():
    rng = np.random.default_rng(0)
    d = rng.uniform(0, 30, size=100)
    b = success_by_distance(d, np.ones(100, bool), [0, 10, 20, 30])
    assert all(r == 1.0 for r in b.rates)
    assert sum(b.totals) == 100


def test_success_by_distance_validation():
    with pytest.raises(ValueError):
        success_by_distance([1.0], [1], [0])
    with pytest.raises(ValueError):
        success_by_distance([1.0], [1], [0, 5, 5])
    with pytest.raises(ValueError):
        success_by_distance([1.0, 2.0], [1], [0, 5])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 30), st.booleans()), max_size=60))
def test_bucket_counts_conserve_episodes(eps):
    d = [e[0] for e in eps]
    s = [e[1] for e in eps]
    b = success_by_distance(d, s, [0, 7.5, 15, 30])
    assert sum(b.totals) + b.out_of_range == len(eps)
    assert sum(b.successes) == sum(s)
    assert all(0 <= w <= n for w, n in zip(b.successes, b.totals))


# --- box stats / IO -------------------------------------------------------------


def test_box_stats_hand_values():
    st_ = box_stats([1, 2, 3, 4, 5, 6, 7, 8, 100])
    assert st_["median"] == 5 and st_["q1"] == 3 and st_["q3"] == 7
    assert st_["whisker_low"] == 1 and st_["whisker_high"] == 8
    assert st_["max"] == 100 and st_["n"] == 9
    with pytest.raises(ValueError):
        box_stats([])


def test_read_feature_csv(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("a,b\n1,2\n3,4.5\n")
    header, X = read_feature_csv(p)
    assert header == ["a", "b"]
    np.testing.assert_array_equal(X, [[1, 2], [3, 4.5]])
    p.write_text("a,b\n1,x\n")
    with pytest.raises(ValueError, match="non-numeric"):
        read_feature_csv(p)
    p.write_text("a,b\n1,2,3\n")
    with pytest.raises(ValueError, match="columns"):
        read_feature_csv(p)
