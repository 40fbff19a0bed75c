# tests/conftest.py
import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from core.net import MlpSpec, init_net  # noqa: E402
from core.numkernel import make_rng  # noqa: E402
from core.synth import SynthConfig, gen_drift_task, gen_rlm_answers  # noqa: E402


def tiny_synth(**overrides) -> SynthConfig:
    settings = dict(n_targets=64, dim=4, n_mixture_components=4, n_queries=32, n_probes=16, seed=7)
    settings.update(overrides)
    return SynthConfig(**settings)


def max_rel_error(analytic, numeric) -> float:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    return float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-2))


@pytest.fixture(autouse=True)
def _quiet_console(monkeypatch):
    monkeypatch.setenv("CORRECTOR_NO_SPINNER", "1")


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def drift_task():
    return gen_drift_task(tiny_synth())


@pytest.fixture
def labelled_task():
    return gen_drift_task(tiny_synth(), with_labels=True)


@pytest.fixture
def rlm_task():
    task = gen_drift_task(tiny_synth(), with_labels=True)
    return gen_rlm_answers(task, 5, make_rng(99))


@pytest.fixture
def tiny_net(rng):
    return init_net(MlpSpec(4, (6, 5), 4, residual=True), "he_normal", rng)
