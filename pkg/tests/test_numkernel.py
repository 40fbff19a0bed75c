import numpy as np
import pytest
from scipy.stats import chisquare

from core.errors import NonFiniteError, ShapeError, SupportError
from core.numkernel import (as_matrix, categorical_sample, derive_seed, gumbel_max_sample, gumbel_noise,
                            kl_divergence, kl_from_logits, log_softmax, make_rng, matmul_scores, median,
                            ordered_matmul, ordered_sum, softmax, top_k, tv_distance, tv_rows, unit_directions)


def test_rng_streams_are_reproducible():
    a = make_rng(5).random(10)
    b = make_rng(5).random(10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, make_rng(6).random(10))


def test_derive_seed_gives_distinct_children():
    seeds = {derive_seed(0, i) for i in range(100)}
    assert len(seeds) == 100
    assert derive_seed(3, 4) == derive_seed(3, 4)


def test_ordered_reductions_match_numpy(rng):
    a = rng.normal(size=(7, 5))
    b = rng.normal(size=(5, 3))
    np.testing.assert_allclose(ordered_matmul(a, b), a @ b, atol=1e-12)
    np.testing.assert_allclose(ordered_sum(a, axis=1), a.sum(axis=1), atol=1e-12)
    np.testing.assert_allclose(matmul_scores(a, b.T), a @ b, atol=1e-12)


def test_matmul_scores_rejects_dimension_mismatch():
    with pytest.raises(ShapeError):
        matmul_scores(np.ones((2, 3)), np.ones((4, 2)))


def test_as_matrix_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        as_matrix("x", [[1.0, np.nan]])


def test_softmax_is_normalized_and_stable():
    p = softmax(np.array([1000.0, 999.0, -1000.0]), beta=1.0)
    assert np.all(np.isfinite(p))
    assert abs(p.sum() - 1.0) < 1e-12
    assert p[2] < 1e-300


def test_log_softmax_works_row_wise_on_3d(rng):
    logits = rng.normal(size=(2, 3, 4))
    out = log_softmax(logits, 2.0)
    assert out.shape == logits.shape
    np.testing.assert_allclose(np.exp(out).sum(axis=-1), np.ones((2, 3)), atol=1e-12)


def test_softmax_rejects_empty_and_bad_beta():
    with pytest.raises(ValueError):
        softmax(np.zeros(0))
    with pytest.raises(ValueError):
        softmax(np.ones(3), beta=0.0)


def test_top_k_breaks_ties_toward_smaller_index():
    assert top_k([1.0, 3.0, 3.0, 2.0], 2).tolist() == [1, 2]
    assert top_k([5.0, 5.0, 5.0], 2).tolist() == [0, 1]


def test_top_k_caps_k_and_rejects_zero():
    assert top_k([0.3, 0.1], 10).tolist() == [0, 1]
    with pytest.raises(ValueError):
        top_k([1.0], 0)


def test_top_k_matches_full_sort_oracle():
    rng = make_rng(11)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        k = int(rng.integers(1, n + 1))
        # small integer range forces ties
        scores = rng.integers(-3, 4, size=n).astype(np.float64)
        oracle = sorted(range(n), key=lambda i: (-scores[i], i))[:k]
        assert top_k(scores, k).tolist() == oracle


def test_gumbel_max_sample_is_argmax_of_perturbed_logits():
    logits = np.array([0.2, -1.0, 0.7, 0.0])
    rng_a, rng_b = make_rng(3), make_rng(3)
    for _ in range(200):
        drawn = gumbel_max_sample(logits, 2.0, 1, rng_a)
        expected = np.argmax(2.0 * logits + gumbel_noise(logits.size, rng_b))
        assert drawn.tolist() == [expected]


def test_gumbel_max_single_draw_follows_softmax():
    logits = np.array([0.5, -0.25, 1.0, 0.0, -1.0])
    beta = 1.5
    n = 100_000
    rng = make_rng(2024)
    draws = np.argmax(beta * logits + gumbel_noise((n, logits.size), rng), axis=1)
    observed = np.bincount(draws, minlength=logits.size)
    expected = softmax(logits, beta) * n
    assert chisquare(observed, expected).pvalue > 0.01


def test_gumbel_max_sample_draws_distinct_indices(rng):
    sample = gumbel_max_sample(rng.normal(size=20), 1.0, 20, rng)
    assert sorted(sample.tolist()) == list(range(20))
    with pytest.raises(ValueError):
        gumbel_max_sample(np.zeros(3), 1.0, 4, rng)


def test_categorical_sample_respects_point_masses(rng):
    probs = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    for _ in range(20):
        assert categorical_sample(probs, rng).tolist() == [1, 0]


def test_kl_divergence_basics():
    p = np.array([0.5, 0.5, 0.0])
    assert kl_divergence(p, p) == 0.0
    assert kl_divergence(p, np.array([0.25, 0.25, 0.5])) == pytest.approx(np.log(2.0))
    with pytest.raises(SupportError) as err:
        kl_divergence(np.array([0.5, 0.5]), np.array([1.0, 0.0]))
    assert err.value.index == 1
    with pytest.raises(ValueError):
        kl_divergence(np.array([0.5, 0.6]), np.array([0.5, 0.5]))


def test_kl_from_logits_agrees_with_probability_form(rng):
    a = rng.normal(size=6)
    b = rng.normal(size=6)
    expected = kl_divergence(softmax(a, 3.0), softmax(b, 3.0))
    assert float(kl_from_logits(a, b, 3.0)) == pytest.approx(expected, abs=1e-12)
    assert float(kl_from_logits(a, a, 3.0)) == 0.0


def test_tv_distance_range(rng):
    p = softmax(rng.normal(size=8))
    q = softmax(rng.normal(size=8))
    assert 0.0 <= tv_distance(p, q) <= 1.0
    assert tv_distance(p, p) == 0.0
    assert tv_distance([1.0, 0.0], [0.0, 1.0]) == 1.0
    np.testing.assert_allclose(tv_rows(np.stack([p, q]), np.stack([q, q])), [tv_distance(p, q), 0.0])


def test_unit_directions_have_requested_norm(rng):
    d = unit_directions(10, 5, rng, norm=0.05)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 0.05)


def test_median_skips_missing_values():
    assert median([3.0, None, 1.0, float("nan"), 2.0]) == 2.0
    assert np.isnan(median([]))
