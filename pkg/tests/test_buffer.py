import numpy as np
import pytest

from core.buffer import (TargetBuffer, init_from_encoder, load_buffer, refresh, save_buffer, staleness_against,
                         staleness_l1)
from core.errors import ShapeError
from core.net import MlpSpec, init_net
from core.optim import AdamState, step_nets


@pytest.fixture
def encoder_and_targets(rng):
    g = init_net(MlpSpec(3, (6,), 3, residual=True), "he_normal", rng)
    return g, rng.normal(size=(12, 3))


def _nudge(g, rng):
    for grad in g.gradients():
        grad[...] = rng.normal(size=grad.shape)
    step_nets([g], AdamState.for_nets([g], 0.1))


def test_init_counts_every_row(encoder_and_targets):
    g, raw = encoder_and_targets
    buffer = init_from_encoder(g, raw)
    assert buffer.reembed_counter == 12
    assert np.array_equal(buffer.rows(), g(raw))
    assert staleness_l1(buffer, g, raw).mean == 0.0


def test_init_checks_encoder_input(encoder_and_targets):
    g, _ = encoder_and_targets
    with pytest.raises(ShapeError):
        init_from_encoder(g, np.ones((4, 5)))


def test_partial_refresh_updates_rows_and_counters(encoder_and_targets, rng):
    g, raw = encoder_and_targets
    buffer = init_from_encoder(g, raw)
    _nudge(g, rng)
    refresh(buffer, g, raw, rows=[2, 5], step=7)
    assert buffer.reembed_counter == 14
    assert buffer.last_refresh_step[[2, 5]].tolist() == [7, 7]
    assert buffer.last_refresh_step[0] == 0
    report = staleness_l1(buffer, g, raw)
    assert report.per_row[2] == 0.0 and report.per_row[5] == 0.0
    assert report.max > 0.0


def test_full_refresh_removes_staleness(encoder_and_targets, rng):
    g, raw = encoder_and_targets
    buffer = init_from_encoder(g, raw)
    _nudge(g, rng)
    assert staleness_l1(buffer, g, raw).mean > 0.0
    refresh(buffer, g, raw, "all", step=3)
    assert staleness_l1(buffer, g, raw).mean == 0.0
    assert buffer.reembed_counter == 24


def test_refresh_rejects_out_of_range_rows(encoder_and_targets):
    g, raw = encoder_and_targets
    buffer = init_from_encoder(g, raw)
    with pytest.raises(IndexError):
        refresh(buffer, g, raw, rows=[12])
    with pytest.raises(ValueError):
        refresh(buffer, g, raw, rows="some")


def test_empty_refresh_is_a_no_op(encoder_and_targets):
    g, raw = encoder_and_targets
    buffer = init_from_encoder(g, raw)
    refresh(buffer, g, raw, rows=[])
    assert buffer.reembed_counter == 12


def test_rows_returns_a_snapshot():
    buffer = TargetBuffer.from_matrix(np.zeros((3, 2)))
    snapshot = buffer.rows()
    snapshot[0, 0] = 5.0
    assert buffer.embeddings[0, 0] == 0.0


def test_staleness_against_checks_shape():
    buffer = TargetBuffer.from_matrix(np.zeros((3, 2)))
    report = staleness_against(buffer, np.ones((3, 2)))
    assert report.mean == 2.0
    with pytest.raises(ShapeError):
        staleness_against(buffer, np.ones((4, 2)))


def test_checkpoint_keeps_rows_and_refresh_steps(encoder_and_targets, tmp_path):
    g, raw = encoder_and_targets
    buffer = init_from_encoder(g, raw)
    refresh(buffer, g, raw, rows=[1], step=9)
    path = str(tmp_path / "buffer.bin")
    save_buffer(buffer, path)
    restored = load_buffer(path)
    assert np.array_equal(restored.rows(), buffer.rows())
    assert np.array_equal(restored.last_refresh_step, buffer.last_refresh_step)
