import numpy as np
import pandas as pd
import pytest

from conftest import tiny_synth
from core.errors import ShapeError
from core.net import MlpSpec, init_net
from core.numkernel import make_rng
from core.synth import gen_drift_task
from core.theory_checks import (check_risk_gap, check_softmax_tv_bound, random_parameter_direction,
                                random_softmax_instances, random_target_encoder, staleness_perturbation_sweep,
                                write_records_csv)


def test_tv_bound_holds_on_random_instances():
    records = random_softmax_instances(100, 64, seed=11)
    assert len(records) == 100
    assert all(r.passed for r in records)
    assert all(r.lhs <= 1.0 + 1e-12 for r in records)


def test_tv_bound_is_tight_at_zero():
    record = check_softmax_tv_bound([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], beta=4.0)
    assert record.lhs == 0.0 and record.rhs == 0.0
    assert record.passed


def test_tv_bound_rejects_mismatched_lengths():
    with pytest.raises(ShapeError):
        check_softmax_tv_bound([1.0, 2.0], [1.0, 2.0, 3.0], beta=1.0)


@pytest.mark.parametrize("loss", ["mse", "ce-pointwise"])
def test_risk_gap_is_bounded_by_tv(drift_task, loss):
    record = check_risk_gap(drift_task, None, loss)
    assert record.passed
    assert record.rhs > 0.0


def test_risk_gap_vanishes_without_drift():
    task = gen_drift_task(tiny_synth(drift_scale=0.0))
    record = check_risk_gap(task, None, "mse")
    assert record.lhs == 0.0 and record.rhs == 0.0


def test_risk_gap_accepts_a_corrector(drift_task, rng):
    corrector = init_net(MlpSpec(4, (8,), residual=True), "he_normal", rng)
    assert check_risk_gap(drift_task, corrector, "ce-pointwise", n_probes=4).passed
    with pytest.raises(ValueError):
        check_risk_gap(drift_task, None, "hinge")


def test_random_direction_has_unit_norm(tiny_net, rng):
    direction = random_parameter_direction(tiny_net, rng)
    total = np.sqrt(sum(np.sum(d * d) for d in direction))
    assert total == pytest.approx(1.0, rel=1e-12)
    assert [d.shape for d in direction] == [p.shape for p in tiny_net.parameters()]


def test_perturbation_sweep_starts_at_zero_and_grows(tiny_net, rng):
    probes = rng.normal(size=(8, 4))
    raw = rng.normal(size=(20, 4))
    sweep = staleness_perturbation_sweep(tiny_net, [0.0, 0.01, 0.1, 1.0], probes, raw, beta=2.0, rng=make_rng(3))
    assert sweep.rows[0].l1_gap == 0.0 and sweep.rows[0].tv == 0.0
    gaps = [r.l1_gap for r in sweep.rows]
    assert all(g > 0.0 for g in gaps[1:])
    assert gaps[1] < gaps[2]
    assert sweep.lipschitz_estimate > 0.0
    assert sweep.tv_slope >= 0.0


def test_perturbation_sweep_is_reproducible(tiny_net, rng):
    probes = rng.normal(size=(8, 4))
    raw = rng.normal(size=(20, 4))
    a = staleness_perturbation_sweep(tiny_net, [0.1, 0.3], probes, raw, 2.0, rng=make_rng(5))
    b = staleness_perturbation_sweep(tiny_net, [0.1, 0.3], probes, raw, 2.0, rng=make_rng(5))
    assert a == b


def test_records_csv_has_one_row_per_check(tmp_path):
    path = str(tmp_path / "bound_checks.csv")
    write_records_csv(random_softmax_instances(5, 8, seed=0), path)
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["check", "seed", "lhs", "rhs", "slack", "passed"]
    assert len(frame) == 5


def test_random_target_encoder_is_a_residual_square_net(rng):
    g = random_target_encoder(6, rng)
    assert g.spec.residual
    assert g.spec.in_dim == g.spec.out_dim == 6
    assert g.spec.hidden_dims == (12,)
    assert random_target_encoder(6, rng, hidden_dims=(4, 4)).spec.hidden_dims == (4, 4)


def test_lipschitz_estimate_is_stable_across_seeds():
    estimates = []
    for seed in range(8):
        task = gen_drift_task(tiny_synth(n_targets=256, dim=8, n_probes=32, seed=seed))
        g = random_target_encoder(task.dim, make_rng(seed + 100))
        sweep = staleness_perturbation_sweep(g, [0.01, 0.1, 1.0], task.probe_queries, task.stale_targets,
                                             task.beta, rng=make_rng(seed + 200))
        estimates.append(sweep.lipschitz_estimate)
    estimates = np.array(estimates)
    assert np.all(np.isfinite(estimates)) and np.all(estimates > 0.0)
    assert np.std(estimates) / np.mean(estimates) < 0.5
