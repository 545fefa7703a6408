"""Global-weight mixture of frozen experts and its Stage-2 weight adaptation.

Weights live directly on the simplex.  Each Stage-2 epoch scores every
expert by its mean log-likelihood on a fresh target batch, softmaxes the
scores and folds them into the weights with an exponential moving average,
then applies a small floor and renormalizes.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .flows.base import FlowExpert
from .flows.io import expert_from_arrays, expert_to_arrays
from .targets import seed_stream


@dataclass
class Stage2Config:
    beta: float = 0.9
    epochs: int = 200
    batch_size: int = 512
    floor: float = 1e-3

    def validate(self, k: int) -> "Stage2Config":
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.beta}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.floor < 1.0 / k:
            raise ValueError(f"floor must be in [0, 1/K) = [0, {1.0 / k})")
        return self


@dataclass
class MixtureModel:
    experts: list[FlowExpert]
    weights: np.ndarray
    names: list[str] = field(default_factory=list)
    trajectory: list[np.ndarray] = field(default_factory=list)
    scores: np.ndarray | None = None  # per-epoch mean log-likelihoods from Stage 2

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if not self.names:
            self.names = [e.kind for e in self.experts]
        if len(self.experts) < 1 or len(self.weights) != len(self.experts):
            raise ValueError("need one weight per expert and K >= 1")
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ValueError(f"weights {self.weights} are not on the simplex")

    @property
    def dim(self) -> int:
        return self.experts[0].dim

    def component_log_probs(self, z) -> np.ndarray:
        return np.stack([e.log_prob(z) for e in self.experts])

    def log_prob(self, z) -> np.ndarray:
        return mixture_log_prob(self, z)

    def sample(self, n: int, seed) -> np.ndarray:
        return mixture_sample(self, n, seed)

    @property
    def n_eff(self) -> float:
        return effective_experts(self.weights)


def logsumexp_weighted(log_q: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``log sum_k w_k exp(log_q[k])`` with max-shift; -inf rows stay -inf."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.log(weights)[:, None] + log_q
        m = terms.max(axis=0)
        safe = np.where(np.isfinite(m), m, 0.0)
        out = safe + np.log(np.exp(terms - safe).sum(axis=0))
    return np.where(np.isneginf(m), -np.inf, out)


def mixture_log_prob(m: MixtureModel, z) -> np.ndarray:
    return logsumexp_weighted(m.component_log_probs(z), m.weights)


def mixture_sample(m: MixtureModel, n: int, seed) -> np.ndarray:
    """Ancestral sampling: component from Categorical(weights), then the expert."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    comp = rng.choice(len(m.weights), size=int(n), p=m.weights / m.weights.sum())
    out = np.empty((int(n), m.dim))
    for k, expert in enumerate(m.experts):
        idx = np.flatnonzero(comp == k)
        # every component consumes its own child stream so output is stable
        child = np.random.default_rng(rng.integers(2**63))
        if len(idx):
            out[idx] = expert.sample(len(idx), child)
    return out


def softmax_scores(ell: np.ndarray) -> np.ndarray:
    """Softmax that gives exactly zero mass to -inf scores."""
    ell = np.asarray(ell, dtype=float)
    finite = np.isfinite(ell)
    w = np.zeros_like(ell)
    if finite.any():
        e = np.exp(ell[finite] - ell[finite].max())
        w[finite] = e / e.sum()
    return w


def apply_floor(pi: np.ndarray, floor: float) -> np.ndarray:
    pi = np.maximum(pi, floor)
    return pi / pi.sum()


def ema_update(pi, ell, beta: float = 0.9, floor: float = 0.0) -> np.ndarray:
    """One Stage-2 step: EMA toward softmax(ell), then floor and renormalize.

    When every score is -inf there is no information and ``pi`` is kept.
    """
    pi = np.asarray(pi, dtype=float)
    w = softmax_scores(ell)
    if w.sum() == 0.0:
        new = pi.copy()
    else:
        new = beta * pi + (1.0 - beta) * w
    if floor > 0.0:
        new = apply_floor(new, floor)
    return new


def floor_fixed_point(beta: float, floor: float) -> float:
    """Long-run weight of an expert whose softmax share is always zero.

    Solves ``x = floor / (1 + floor - beta * x)``, the steady state of the
    EMA-then-floor update when the expert's mass is floored every epoch.
    """
    if floor == 0.0:
        return 0.0
    a = 1.0 + floor
    return (a - np.sqrt(a * a - 4.0 * beta * floor)) / (2.0 * beta) if beta else floor / a


def mean_log_likelihoods(experts, z) -> np.ndarray:
    """Per-expert mean log q_k(z); any sentinel row makes that mean -inf."""
    out = np.empty(len(experts))
    for k, e in enumerate(experts):
        lp = e.log_prob(z)
        out[k] = -np.inf if np.any(np.isneginf(lp)) else float(lp.mean())
    return out


def stage2_adapt(experts, cfg: Stage2Config | None = None, fresh_source=None, seed=0,
                 names=None, init=None) -> MixtureModel:
    """Fit global weights over frozen experts with fresh target batches.

    ``fresh_source`` is a target family (anything with ``draw(n, rng)``) or a
    callable ``(epoch) -> batch`` yielding the scoring batch for each epoch.
    """
    experts = list(experts)
    k = len(experts)
    cfg = (cfg or Stage2Config()).validate(k)
    pi = np.full(k, 1.0 / k) if init is None else np.asarray(init, dtype=float)
    trajectory = [pi.copy()]
    ells = []
    for t in range(cfg.epochs):
        if callable(fresh_source) and not hasattr(fresh_source, "draw"):
            batch = fresh_source(t)
        else:
            rng = seed_stream(seed, fresh_source.name, "fresh", t)
            batch = fresh_source.draw(cfg.batch_size, rng)
        ell = mean_log_likelihoods(experts, batch)
        pi = ema_update(pi, ell, cfg.beta, cfg.floor)
        ells.append(ell)
        trajectory.append(pi.copy())
    return MixtureModel(experts, pi, list(names or []), trajectory, np.array(ells))


def effective_experts(pi) -> float:
    """exp of the Shannon entropy of the weights (0 log 0 = 0)."""
    pi = np.asarray(pi, dtype=float)
    nz = pi[pi > 0]
    return float(np.exp(-np.sum(nz * np.log(nz))))


def trajectory_csv(m: MixtureModel) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", *[f"pi_{n}" for n in m.names], "n_eff"])
    for t, pi in enumerate(m.trajectory):
        w.writerow([t, *[repr(float(p)) for p in pi], repr(effective_experts(pi))])
    return buf.getvalue()


def save_mixture(m: MixtureModel, path) -> None:
    arrays = {}
    for k, e in enumerate(m.experts):
        arrays.update(expert_to_arrays(e, prefix=f"e{k}_"))
    arrays["weights"] = m.weights
    arrays["trajectory"] = np.array(m.trajectory)
    header = {"kind": "mixture", "names": m.names, "k": len(m.experts)}
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_mixture(path) -> MixtureModel:
    with np.load(path) as npz:
        arrays = {k: npz[k] for k in npz.files}
    header = json.loads(bytes(arrays["header"]).decode())
    experts = [expert_from_arrays(arrays, prefix=f"e{k}_") for k in range(header["k"])]
    return MixtureModel(experts, arrays["weights"], header["names"], list(arrays["trajectory"]))
