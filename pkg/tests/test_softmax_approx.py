import numpy as np
import pytest

from conftest import max_rel_error
from core.buffer import TargetBuffer
from core.errors import ConfigError, ShapeError
from core.net import MlpSpec, init_net, numerical_gradient
from core.numkernel import make_rng
from core.softmax_approx import (Scorer, batch_corrector_loss_ce, batch_task_loss_ce, corrector_loss_ce,
                                 corrector_loss_mse, full_distribution, per_example_corrector_loss_ce,
                                 reader_nll, rlm_losses, select_subset, task_loss_ce, truncated_softmax)

N_INSTANCES = 20


def _instance(seed, b=3, k=5, d=4):
    rng = make_rng(seed)
    return rng, rng.normal(size=(b, d)), rng.normal(size=(k, d)), float(rng.uniform(0.5, 3.0))


@pytest.fixture
def stale_scorer(rng):
    return Scorer.stale(TargetBuffer.from_matrix(rng.normal(size=(30, 4))))


def test_truncated_softmax_over_all_targets_equals_full(stale_scorer, rng):
    x = rng.normal(size=4)
    full = full_distribution(stale_scorer, x, 2.0)
    trunc = truncated_softmax(stale_scorer, x, np.arange(30), 2.0)
    assert np.max(np.abs(full - trunc.probs)) <= 1e-12


def test_identity_corrected_scorer_matches_stale(stale_scorer, rng):
    h = init_net(MlpSpec(4, (8,), residual=True), "zero_residual", rng)
    corrected = Scorer.corrected(h, stale_scorer.buffer)
    assert np.array_equal(corrected.target_embeddings(), stale_scorer.target_embeddings())


def test_corrected_scorer_rejects_wrong_dimension(stale_scorer, rng):
    h = init_net(MlpSpec(3, (8,), residual=True), "zero_residual", rng)
    with pytest.raises(ConfigError):
        Scorer.corrected(h, stale_scorer.buffer)


def test_true_encoder_scorer_applies_encoder(rng):
    raw = rng.normal(size=(6, 4))
    g = init_net(MlpSpec(4, (5,)), "he_normal", rng)
    np.testing.assert_array_equal(Scorer.true_encoder(raw, g).target_embeddings([1, 2]), g(raw[[1, 2]]))
    np.testing.assert_array_equal(Scorer.true_encoder(raw).target_embeddings(), raw)


def test_select_subset_is_sorted_unique_and_keeps_label(stale_scorer, rng):
    x = rng.normal(size=4)
    subset = select_subset(stale_scorer, x, 1.0, 5, 5, "topk", label=29, rng=rng)
    assert subset.tolist() == sorted(set(subset.tolist()))
    assert 29 in subset
    assert 5 <= subset.size <= 11
    scores = stale_scorer.target_embeddings() @ x
    top = np.argsort(-scores, kind="stable")[:5]
    assert set(top.tolist()) <= set(subset.tolist())


def test_select_subset_gumbel_mode(stale_scorer, rng):
    subset = select_subset(stale_scorer, rng.normal(size=4), 1.0, 7, 0, "gumbel", rng=rng)
    assert subset.size == 7


def test_select_subset_validates_arguments(stale_scorer, rng):
    x = rng.normal(size=4)
    with pytest.raises(ValueError):
        select_subset(stale_scorer, x, 1.0, 20, 11, "topk", rng=rng)
    with pytest.raises(ConfigError):
        select_subset(stale_scorer, x, 1.0, 2, 0, "nucleus", rng=rng)
    with pytest.raises(ValueError):
        select_subset(stale_scorer, x, 1.0, 2, 2, "topk")
    with pytest.raises(IndexError):
        select_subset(stale_scorer, x, 1.0, 2, 0, "topk", label=30)


def test_truncated_softmax_rejects_empty_subset(stale_scorer, rng):
    with pytest.raises(ValueError):
        truncated_softmax(stale_scorer, rng.normal(size=4), [], 1.0)


def test_truncated_softmax_needs_one_row_per_member(stale_scorer, rng):
    with pytest.raises(ShapeError):
        truncated_softmax(stale_scorer, rng.normal(size=4), [0, 1, 2], 1.0, target_rows=rng.normal(size=(2, 4)))


def test_task_loss_gradients_match_finite_differences():
    for seed in range(N_INSTANCES):
        rng, queries, targets, beta = _instance(seed)
        labels = rng.integers(0, targets.shape[0], size=queries.shape[0])
        result = batch_task_loss_ce(queries, targets, labels, beta)

        def loss():
            return batch_task_loss_ce(queries, targets, labels, beta).loss

        assert max_rel_error(result.grad_queries, numerical_gradient(loss, queries)) <= 1e-4
        assert max_rel_error(result.grad_targets, numerical_gradient(loss, targets)) <= 1e-4


def test_corrector_ce_gradient_matches_finite_differences():
    for seed in range(N_INSTANCES):
        rng, queries, fresh, beta = _instance(seed)
        corrected = fresh + 0.3 * rng.normal(size=fresh.shape)
        result = batch_corrector_loss_ce(queries, fresh, corrected, beta)
        assert result.grad_queries is None

        def loss():
            return batch_corrector_loss_ce(queries, fresh, corrected, beta).loss

        assert max_rel_error(result.grad_targets, numerical_gradient(loss, corrected)) <= 1e-4


def test_corrector_mse_gradient_matches_finite_differences():
    for seed in range(N_INSTANCES):
        rng, _, fresh, _ = _instance(seed)
        corrected = fresh + rng.normal(size=fresh.shape)
        result = corrector_loss_mse(fresh, corrected)
        expected = np.mean(np.sum((fresh - corrected) ** 2, axis=1))
        assert result.loss == pytest.approx(expected, rel=1e-12)

        def loss():
            return corrector_loss_mse(fresh, corrected).loss

        assert max_rel_error(result.grad_targets, numerical_gradient(loss, corrected)) <= 1e-4


def test_per_example_corrector_gradient_matches_finite_differences():
    for seed in range(N_INSTANCES):
        rng = make_rng(seed)
        queries = rng.normal(size=(3, 4))
        fresh = rng.normal(size=(3, 5, 4))
        corrected = fresh + 0.3 * rng.normal(size=fresh.shape)
        result = per_example_corrector_loss_ce(queries, fresh, corrected, 1.5)
        assert result.grad_targets.shape == (3, 5, 4)

        def loss():
            return per_example_corrector_loss_ce(queries, fresh, corrected, 1.5).loss

        assert max_rel_error(result.grad_targets, numerical_gradient(loss, corrected)) <= 1e-4


def test_retrieval_losses_match_finite_differences():
    for seed in range(N_INSTANCES):
        rng = make_rng(seed)
        b, k, d, v = 3, 4, 4, 5
        queries = rng.normal(size=(b, d))
        rows = rng.normal(size=(b, k, d))
        logits = rng.normal(size=(b, k, v))
        answers = rng.integers(0, v, size=b)
        beta = float(rng.uniform(0.5, 2.0))
        result = rlm_losses(queries, rows, logits, answers, beta)
        np.testing.assert_allclose(result.posterior.sum(axis=1), np.ones(b), atol=1e-12)

        def total():
            return rlm_losses(queries, rows, logits, answers, beta).loss

        def reader_half():
            # the soft relevance targets are constants for the retriever, so only
            # the reader term carries gradient into the reader logits
            return 0.5 * rlm_losses(queries, rows, logits, answers, beta).reader_loss

        assert max_rel_error(result.grad_queries, numerical_gradient(total, queries)) <= 1e-4
        assert max_rel_error(result.grad_targets, numerical_gradient(total, rows)) <= 1e-4
        assert max_rel_error(result.grad_reader_logits, numerical_gradient(reader_half, logits)) <= 1e-4


def test_reader_nll_gradient_matches_finite_differences():
    for seed in range(N_INSTANCES):
        rng = make_rng(seed)
        logits = rng.normal(size=(4, 6))
        answers = rng.integers(0, 6, size=4)
        result = reader_nll(logits, answers)

        def loss():
            return reader_nll(logits, answers).loss

        assert max_rel_error(result.grad_targets, numerical_gradient(loss, logits)) <= 1e-4


def test_per_example_forms_agree_with_batch_forms(stale_scorer, rng):
    x = rng.normal(size=4)
    subset = select_subset(stale_scorer, x, 1.0, 6, 0, "topk", label=3)
    trunc = truncated_softmax(stale_scorer, x, subset, 1.0)
    single = task_loss_ce(trunc, 3)
    assert single.loss == pytest.approx(-np.log(trunc.probs[trunc.position(3)]))
    assert corrector_loss_ce(trunc, trunc).loss == 0.0


def test_corrector_loss_ce_requires_matching_subsets(stale_scorer, rng):
    x = rng.normal(size=4)
    a = truncated_softmax(stale_scorer, x, [0, 1, 2], 1.0)
    b = truncated_softmax(stale_scorer, x, [0, 1, 3], 1.0)
    with pytest.raises(ValueError):
        corrector_loss_ce(a, b)
    with pytest.raises(ValueError):
        a.position(7)
