import numpy as np
import pytest

from densketch.density import (brute_force_kde, emde_density,
                               median_l1_bandwidth, nk_sweep, pearson)
from densketch.embeddings import EmbeddingTable
from densketch.partition import DLSHPartitioner, assign_codes, fit_dlsh
from densketch.sketch import decode_scores, encode_items, normalize
from densketch.synthetic import make_gaussian_mixture

from test_partition import manual_partitioner


class TestBruteForceKDE:
    def test_kernel_at_zero_distance(self):
        est = brute_force_kde([[1.0, 2.0]], [[1.0, 2.0]], bandwidth=0.7)
        assert est.estimates[0] == pytest.approx(1.0)

    def test_bandwidth_saturation(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((50, 3))
        est = brute_force_kde(X, X[:5], bandwidth=1e6)
        np.testing.assert_allclose(est.estimates, 50.0, rtol=1e-3)

    def test_midpoint_symmetry(self):
        X = [[-1.0, 0.0], [1.0, 0.0]]
        est = brute_force_kde(X, [[0.0, 0.0]], bandwidth=2.0)
        assert est.estimates[0] == pytest.approx(2 * np.exp(-1 / 2.0))

    def test_rejects_bad_kernel_and_bandwidth(self):
        with pytest.raises(ValueError):
            brute_force_kde([[0.0]], [[0.0]], kernel="gaussian")
        with pytest.raises(ValueError):
            brute_force_kde([[0.0]], [[0.0]], bandwidth=0.0)


class TestPearson:
    def test_perfect_correlation(self):
        a = [1.0, 2.0, 5.0, 3.0]
        assert pearson(a, a) == pytest.approx(1.0)

    def test_perfect_anticorrelation(self):
        a = np.array([1.0, 2.0, 5.0, 3.0])
        assert pearson(a, -a) == pytest.approx(-1.0)

    def test_hand_computed_value(self):
        # centered cross-product 3, variances 2 and 42/9 -> 9/sqrt(84)
        assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(9 / np.sqrt(84))

    def test_zero_variance_raises(self):
        with pytest.raises(ValueError, match="variance"):
            pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_too_short_raises(self):
        with pytest.raises(ValueError):
            pearson([1.0], [2.0])


def test_single_data_point_is_the_mode():
    part = manual_partitioner([[[1.0], [1.0]]], [[0.0, 2.0]])
    est = emde_density(part, [[1.0]], [[1.0], [-3.0], [5.0], [0.5]])
    assert np.argmax(est.estimates) == 0
    assert est.estimates[0] == 1.0


def test_uniform_buckets_give_equal_estimates():
    # symmetric data around every cut: both sides of each level hold mass 1/2
    part = manual_partitioner([[[1.0]], [[-1.0]]], [[0.0], [0.0]])
    est = emde_density(part, [[-1.0], [1.0]], [[-2.0], [-0.5], [0.5], [2.0]])
    assert len(set(est.estimates.tolist())) == 1


def test_histogram_equivalence_in_1d():
    """Depth 1 on 1-D data reduces to a plain histogram, exactly."""
    rng = np.random.default_rng(1)
    X = rng.standard_normal((400, 1))
    queries = rng.standard_normal((100, 1))
    part = fit_dlsh(EmbeddingTable("m", [str(i) for i in range(400)], X),
                    depth=1, bits=3, seed=5)
    est = emde_density(part, X, queries, "gmean")

    # independent oracle: thresholds on the line; r is +-1 in 1-D
    r = part.directions_[0, :, 0]
    thresholds = np.sort(part.biases_[0] / r)
    data_bins = np.searchsorted(thresholds, X[:, 0])
    query_bins = np.searchsorted(thresholds, queries[:, 0])
    bin_counts = np.bincount(data_bins, minlength=len(thresholds) + 1)
    expected = bin_counts[query_bins].astype(float) / float(len(X))
    np.testing.assert_array_equal(est.estimates, expected)


def test_doubling_weights_leaves_normalized_estimates_unchanged():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((100, 4))
    queries = rng.standard_normal((20, 4))
    part = DLSHPartitioner(depth=4, bits=3, seed=3).fit(X)
    once = emde_density(part, X, queries)
    doubled = emde_density(part, np.vstack([X, X]), queries)
    np.testing.assert_allclose(doubled.estimates, once.estimates, rtol=1e-12)


def test_queries_share_the_item_code_path():
    # hashing a query equals decoding a hypothetical item with its codes
    rng = np.random.default_rng(4)
    X = rng.standard_normal((80, 5))
    queries = rng.standard_normal((10, 5))
    part = DLSHPartitioner(depth=6, bits=3, seed=6).fit(X)
    est = emde_density(part, X, queries, "gmean")

    table = EmbeddingTable("m", [str(i) for i in range(80)], X)
    data_codes = assign_codes(part, table)
    sketch = normalize(encode_items(data_codes, table.ids), "l1")
    qtable = EmbeddingTable("m", [f"q{i}" for i in range(10)], queries)
    query_codes = assign_codes(part, qtable)
    scores = decode_scores(sketch, query_codes, "gmean")
    np.testing.assert_array_equal(est.estimates,
                                  [scores[f"q{i}"] for i in range(10)])


def test_dimension_mismatch_propagates():
    part = manual_partitioner([[[1.0, 0.0]]], [[0.0]])
    with pytest.raises(ValueError):
        emde_density(part, [[1.0, 2.0]], [[1.0]])


def test_depth1_bits1_has_at_most_two_estimate_values():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((300, 6))
    part = DLSHPartitioner(depth=1, bits=1, seed=7).fit(X)
    est = emde_density(part, X, rng.standard_normal((50, 6)))
    assert len(np.unique(est.estimates)) <= 2


def test_median_l1_bandwidth_small_sample():
    X = np.array([[0.0], [1.0], [3.0]])
    # pairwise L1 distances {1, 2, 3} -> median 2
    assert median_l1_bandwidth(X) == 2.0


def test_oversized_bits_degrade_correlation():
    """With far more regions than samples, similar points spread over many
    near-empty buckets and correlation drops relative to the optimum."""
    X, _, _ = make_gaussian_mixture(100, 3, 4, seed=0, spread=0.8)
    queries, _, _ = make_gaussian_mixture(150, 3, 4, seed=99, spread=0.8)
    truth = brute_force_kde(X, queries,
                            bandwidth=median_l1_bandwidth(X)).estimates

    def median_r(bits):
        scores = []
        for seed in range(10):
            part = DLSHPartitioner(depth=20, bits=bits, seed=seed).fit(X)
            est = emde_density(part, X, queries, "mean").estimates
            scores.append(pearson(est, truth))
        return float(np.median(scores))

    moderate = max(median_r(bits) for bits in (2, 3, 4, 6))
    oversized = median_r(16)
    assert oversized < moderate - 0.05


class TestNKSweep:
    def test_grid_shape_and_range(self):
        X, _, _ = make_gaussian_mixture(300, 3, 4, seed=0, spread=1.0)
        rows = nk_sweep(X, X[:40], [2, 4], [2, 3], [0, 1])
        assert len(rows) == 8
        assert all(-1 <= r["pearson"] <= 1 for r in rows)
        keys = {(r["N"], r["K"], r["seed"]) for r in rows}
        assert len(keys) == 8

    def test_deterministic_per_seed(self):
        X, _, _ = make_gaussian_mixture(200, 3, 4, seed=1, spread=1.0)
        a = nk_sweep(X, X[:30], [3], [2], [5])
        b = nk_sweep(X, X[:30], [3], [2], [5])
        assert a == b

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            nk_sweep(np.ones((5, 2)), np.ones((2, 2)), [], [2], [0])
