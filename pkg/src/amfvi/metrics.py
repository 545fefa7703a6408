"""Evaluation metrics: NLL, Monte-Carlo KL(p||q), exact-assignment W2, RBF MMD."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist

from .netcore import ContractError
from .targets import seed_stream

log = logging.getLogger(__name__)

REPORT_FIELDS = ("dataset", "model", "nll", "kl", "w2", "mmd_u", "mmd_b", "n_eval", "seed",
                 "wall_time")


class Estimate(NamedTuple):
    value: float
    se: float


@dataclass
class MetricReport:
    dataset: str
    model: str
    nll: float
    kl: float
    w2: float
    mmd_u: float
    mmd_b: float
    n_eval: int
    seed: int
    wall_time: float

    def __post_init__(self):
        # a degenerate model reports +inf for both likelihood metrics
        if np.isinf(self.nll) or np.isinf(self.kl):
            self.nll = self.kl = float("inf")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class KernelConfig:
    bandwidth: float | None = None  # None selects the median heuristic

    def __post_init__(self):
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ContractError("kernel bandwidth must be positive")


def _mean_se(values: np.ndarray) -> Estimate:
    n = len(values)
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return Estimate(float(values.mean()), se)


def nll(model_log_prob, samples) -> Estimate:
    """``-mean log q`` over samples; +inf if any row hit the sentinel."""
    z = np.asarray(getattr(samples, "data", samples), dtype=float)
    if len(z) == 0:
        raise ContractError("nll needs at least one sample")
    lp = np.asarray(model_log_prob(z), dtype=float)
    if not np.all(np.isfinite(lp)):
        return Estimate(float("inf"), float("inf"))
    return _mean_se(-lp)


def kl_mc(target, model_log_prob, n: int = 5000, seed=0) -> Estimate:
    """Monte-Carlo KL(p || q) on ``n`` fresh target draws."""
    rng = seed if isinstance(seed, np.random.Generator) else seed_stream(seed, target.name, "kl")
    z = target.draw(n, rng)
    lq = np.asarray(model_log_prob(z), dtype=float)
    if not np.all(np.isfinite(lq)):
        return Estimate(float("inf"), float("inf"))
    return _mean_se(target.log_density(z) - lq)


def w2(x, y) -> float:
    """Empirical Wasserstein-2 between equal-size point clouds via exact assignment."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 2:
        raise ContractError(f"w2 needs equal-shape (n, d) inputs, got {x.shape} and {y.shape}")
    if len(x) == 0:
        return 0.0
    cost = cdist(x, y, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(max(cost[rows, cols].mean(), 0.0)))


def assignment_cost(x, y, perm) -> float:
    """Mean squared distance when row i of x is matched to row perm[i] of y."""
    d = np.asarray(x) - np.asarray(y)[np.asarray(perm)]
    return float(np.mean(np.sum(d * d, axis=1)))


def median_bandwidth(pooled: np.ndarray) -> float:
    d = pdist(pooled)
    h = float(np.median(d)) if len(d) else 0.0
    if not h > 0:
        log.warning("degenerate pooled sample; falling back to bandwidth 1.0")
        return 1.0
    return h


def mmd_squared(x, y, kernel: KernelConfig | None = None):
    """Return ``(U-statistic, V-statistic, bandwidth)`` for the RBF kernel."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or len(y) < 2:
        raise ContractError("mmd needs at least two rows per sample")
    kernel = kernel or KernelConfig()
    h = kernel.bandwidth or median_bandwidth(np.vstack([x, y]))
    g = 0.5 / (h * h)
    kxx = np.exp(-g * cdist(x, x, "sqeuclidean"))
    kyy = np.exp(-g * cdist(y, y, "sqeuclidean"))
    kxy = np.exp(-g * cdist(x, y, "sqeuclidean"))
    m, n = len(x), len(y)
    sxx, syy, sxy = kxx.sum(), kyy.sum(), kxy.sum()
    u = ((sxx - np.trace(kxx)) / (m * (m - 1)) + (syy - np.trace(kyy)) / (n * (n - 1))
         - 2.0 * sxy / (m * n))
    v = sxx / m**2 + syy / n**2 - 2.0 * sxy / (m * n)
    return float(u), float(v), h


def mmd(x, y, kernel: KernelConfig | None = None) -> tuple[float, float]:
    """``(mmd_u, mmd_b)``: signed root of the U-statistic, root of the clamped V-statistic."""
    u, v, _ = mmd_squared(x, y, kernel)
    return float(np.sign(u) * np.sqrt(abs(u))), float(np.sqrt(max(v, 0.0)))
