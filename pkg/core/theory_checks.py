# core/theory_checks.py
"""
Numeric checks linking embedding staleness, distribution distance and risk.

All quantities are exact sums over the full target set; only the choice of
probe queries is random.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from core.errors import ShapeError
from core.net import MlpNet, MlpSpec, init_net, perturbed_copy
from core.numkernel import make_rng, matmul_scores, ordered_sum, softmax, tv_distance, tv_rows
from core.synth import SynthTask
from utils.record_utils import write_csv_rows

logger = logging.getLogger(__name__)

PASS_TOLERANCE = 1e-12
RISK_LOSSES = ("mse", "ce-pointwise")

# bounded per-target losses used by check_risk_gap
BOUNDED_TRANSFORMS = {
    "mse": "1 - exp(-||g(y) - h(g'(y))||^2)",
    "ce-pointwise": "1 - P_h(y|x)",
}


@dataclass
class BoundCheckRecord:
    seed: int
    lhs: float
    rhs: float
    slack: float = field(init=False)
    passed: bool = field(init=False)
    check: str = ""

    def __post_init__(self):
        self.slack = self.rhs - self.lhs
        self.passed = bool(self.slack >= -PASS_TOLERANCE)

    def to_dict(self) -> dict:
        return asdict(self)


def check_softmax_tv_bound(logits_a, logits_b, beta: float, seed: int = 0) -> BoundCheckRecord:
    """TV(softmax(βa), softmax(βb)) ≤ ½‖βa − βb‖₁, checked on the logits."""
    a = np.asarray(logits_a, dtype=np.float64).ravel()
    b = np.asarray(logits_b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError("logit vectors differ in length", a.shape, b.shape)
    lhs = tv_distance(softmax(a, beta), softmax(b, beta))
    rhs = 0.5 * float(ordered_sum(np.abs(beta * a - beta * b)))
    return BoundCheckRecord(seed=seed, lhs=lhs, rhs=rhs, check="softmax_tv")


def random_softmax_instances(n: int, length: int, seed: int) -> List[BoundCheckRecord]:
    """n random (a, b, β) draws; b is a perturbation of a at a random scale."""
    rng = make_rng(seed)
    records = []
    for i in range(n):
        a = rng.normal(0.0, rng.uniform(0.1, 5.0), length)
        b = a + rng.normal(0.0, rng.uniform(1e-3, 2.0), length)
        beta = float(rng.uniform(0.1, 50.0))
        records.append(check_softmax_tv_bound(a, b, beta, seed=i))
    return records


def _per_target_loss(task: SynthTask, corrected: np.ndarray, p_h: Optional[np.ndarray], loss: str) -> np.ndarray:
    if loss == "mse":
        diff = task.true_targets - corrected
        return 1.0 - np.exp(-ordered_sum(diff * diff, axis=1))[None, :]
    return 1.0 - p_h


def check_risk_gap(task: SynthTask, corrector: Optional[MlpNet], loss: str = "mse",
                   n_probes: Optional[int] = None, seed: int = 0) -> BoundCheckRecord:
    """
    |E_P ℓ − E_{P_g'} ℓ| ≤ TV(P, P_g') for a loss bounded to [0, 1].

    Both expectations and TV are exact sums over all targets per probe and
    then averaged over probes. A corrector of None is the identity.
    """
    if loss not in RISK_LOSSES:
        raise ValueError(f"loss must be one of {RISK_LOSSES}, got {loss!r}")
    probes = task.probe_queries if n_probes is None else task.probe_queries[:n_probes]
    corrected = task.stale_targets if corrector is None else corrector(task.stale_targets)
    p = softmax(matmul_scores(probes, task.true_targets), task.beta)
    p_stale = softmax(matmul_scores(probes, task.stale_targets), task.beta)
    p_h = softmax(matmul_scores(probes, corrected), task.beta) if loss == "ce-pointwise" else None
    per_target = np.broadcast_to(_per_target_loss(task, corrected, p_h, loss), p.shape)
    true_risk = ordered_sum(p * per_target, axis=1)
    stale_risk = ordered_sum(p_stale * per_target, axis=1)
    gaps = np.abs(true_risk - stale_risk)
    tv = tv_rows(p, p_stale)
    record = BoundCheckRecord(seed=seed, lhs=float(ordered_sum(gaps) / gaps.size),
                              rhs=float(ordered_sum(tv) / tv.size), check=f"risk_gap[{loss}]")
    logger.info(f"Risk gap ({BOUNDED_TRANSFORMS[loss]}): {record.lhs:.3e} <= TV {record.rhs:.3e}")
    return record


@dataclass
class PerturbationRow:
    norm: float
    l1_gap: float
    tv: float


@dataclass
class PerturbationSweep:
    rows: List[PerturbationRow]
    lipschitz_estimate: float
    tv_slope: float


def random_target_encoder(dim: int, rng: np.random.Generator, hidden_dims: Sequence[int] = ()) -> MlpNet:
    """He-initialised residual D -> D target encoder g; one hidden layer of width 2D unless given."""
    hidden = tuple(int(h) for h in hidden_dims) or (2 * dim,)
    return init_net(MlpSpec(dim, hidden, dim, residual=True), "he_normal", rng)


def random_parameter_direction(net: MlpNet, rng: np.random.Generator) -> List[np.ndarray]:
    """Gaussian direction over all parameters, scaled to unit total norm."""
    direction = [rng.standard_normal(p.shape) for p in net.parameters()]
    total = np.sqrt(sum(float(ordered_sum(d.ravel() * d.ravel())) for d in direction))
    return [d / total for d in direction]


def staleness_perturbation_sweep(g: MlpNet, norms: Sequence[float], probes: np.ndarray,
                                 targets_raw: np.ndarray, beta: float,
                                 rng: Optional[np.random.Generator] = None,
                                 direction: Optional[List[np.ndarray]] = None) -> PerturbationSweep:
    """
    Move g's parameters by ‖u‖ along one random direction and measure the
    mean ℓ1 embedding gap and mean TV(P_g, P_{g+u}) over the probes.

    L̂ is the largest gap/‖u‖; the TV slope is a least-squares fit through the origin.
    """
    if direction is None:
        direction = random_parameter_direction(g, rng if rng is not None else make_rng(0))
    base = g(targets_raw)
    p_base = softmax(matmul_scores(probes, base), beta)
    rows = []
    for norm in norms:
        moved = perturbed_copy(g, direction, float(norm))(targets_raw)
        gaps = ordered_sum(np.abs(moved - base), axis=1)
        tv = tv_rows(p_base, softmax(matmul_scores(probes, moved), beta))
        rows.append(PerturbationRow(float(norm), float(ordered_sum(gaps) / gaps.size),
                                    float(ordered_sum(tv) / tv.size)))
    ratios = [r.l1_gap / r.norm for r in rows if r.norm > 0]
    x = np.array([r.norm for r in rows])
    y = np.array([r.tv for r in rows])
    denom = float(ordered_sum(x * x))
    slope = float(ordered_sum(x * y)) / denom if denom > 0 else 0.0
    return PerturbationSweep(rows, max(ratios) if ratios else 0.0, slope)


def write_records_csv(records: Sequence[BoundCheckRecord], path: str):
    return write_csv_rows(path, [r.to_dict() for r in records],
                          columns=["check", "seed", "lhs", "rhs", "slack", "passed"])
