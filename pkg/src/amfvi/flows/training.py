"""Stage-1 expert fitting: minibatch maximum likelihood for MAF/RealNVP."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass

import numpy as np

from ..netcore import OptimState, optimizer_step
from .base import FlowExpert
from .gradient import MAF, GradientFlow, RealNVP
from .rbig import fit_rbig

log = logging.getLogger(__name__)

KINDS = ("realnvp", "maf", "rbig")
DIVERGENCE_PATIENCE = 3


@dataclass
class FlowConfig:
    epochs: int = 200
    batch_size: int = 256
    lr: float = 1e-3
    hidden: tuple = (64, 64)
    realnvp_layers: int = 6
    maf_layers: int = 5
    rbig_layers: int = 30
    rbig_nodes: int = 200
    rbig_rotation: str = "random"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError(f"invalid flow config {self}")
        if self.rbig_rotation not in ("random", "pca"):
            raise ValueError(f"rbig_rotation must be 'random' or 'pca', got {self.rbig_rotation!r}")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["hidden"] = list(self.hidden)
        return d


def build_expert(kind: str, dim: int = 2, config: FlowConfig | None = None, seed=0) -> FlowExpert:
    """Identity-initialized expert of the given kind (RBIG starts with no layers)."""
    cfg = config or FlowConfig()
    if kind == "realnvp":
        return RealNVP(dim, cfg.realnvp_layers, cfg.hidden, seed)
    if kind == "maf":
        return MAF(dim, cfg.maf_layers, cfg.hidden, seed)
    if kind == "rbig":
        from .rbig import RBIG
        return RBIG(dim)
    raise ValueError(f"unknown expert kind {kind!r}")


def fit_gradient_flow(kind: str, train, config: FlowConfig | None = None, seed=0) -> GradientFlow:
    """Train a MAF or RealNVP expert by minibatch Adam on the mean NLL.

    The parameters with the lowest epoch-mean NLL are kept, which protects
    against late oscillation on thin targets.  If the epoch-mean NLL is
    non-finite for three epochs in a row, training stops, that best
    checkpoint is restored and the expert is flagged ``degenerate``.
    """
    if kind not in ("maf", "realnvp"):
        raise ValueError(f"{kind!r} is not a gradient-trained expert")
    cfg = config or FlowConfig()
    data = np.asarray(getattr(train, "data", train), dtype=float)
    if len(data) == 0:
        raise ValueError("empty training set")
    expert = build_expert(kind, data.shape[1], cfg, seed)
    expert.meta.update(config=cfg.to_dict(), seed=int(seed), loss_curve=[])
    if cfg.epochs == 0:
        expert.flags.add("untrained")
        return expert.freeze()

    rng = np.random.default_rng([int(seed), KINDS.index(kind), 7])
    state = OptimState(lr=cfg.lr)
    best = expert.params.copy()
    best_loss = np.inf
    best_epoch = -1
    bad = 0
    curve = expert.meta["loss_curve"]
    t0 = time.perf_counter()
    n = len(data)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for epoch in range(cfg.epochs):
            perm = rng.permutation(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                batch = data[perm[start:start + cfg.batch_size]]
                with np.errstate(all="ignore"):
                    nll, grad = expert.nll_and_grad(batch)
                optimizer_step(state, [expert.params], [grad])
                total += nll * len(batch)
            loss = total / n
            curve.append(float(loss))
            if np.isfinite(loss):
                bad = 0
                if loss < best_loss:
                    best_loss, best_epoch = loss, epoch
                    best[:] = expert.params
            else:
                bad += 1
                if bad >= DIVERGENCE_PATIENCE:
                    log.warning("%s diverged at epoch %d; restoring best checkpoint", kind, epoch)
                    expert.params[:] = best
                    expert.flags.add("degenerate")
                    break
    expert.params[:] = best
    expert.meta["best_epoch"] = best_epoch
    expert.meta["skipped_steps"] = state.skipped
    expert.meta["fit_seconds"] = time.perf_counter() - t0
    return expert.freeze()


def fit_expert(kind: str, train, config: FlowConfig | None = None, seed=0) -> FlowExpert:
    cfg = config or FlowConfig()
    if kind == "rbig":
        expert = fit_rbig(train, cfg.rbig_layers, cfg.rbig_nodes, seed, cfg.rbig_rotation)
        expert.meta.update(config=cfg.to_dict(), seed=int(seed))
        return expert
    return fit_gradient_flow(kind, train, cfg, seed)


__all__ = ["FlowConfig", "KINDS", "build_expert", "fit_expert", "fit_gradient_flow", "fit_rbig"]
