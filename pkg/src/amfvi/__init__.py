"""Adaptive mixtures of heterogeneous normalizing flows (MAF, RealNVP, RBIG).

Experts are fitted independently, then combined with global weights adapted
by an exponential moving average of softmax-normalized fresh-batch
log-likelihoods.
"""

from .flows import MAF, RBIG, FlowConfig, FlowExpert, RealNVP, fit_expert
from .metrics import MetricReport, kl_mc, mmd, nll, w2
from .mixture import MixtureModel, Stage2Config, effective_experts, stage2_adapt
from .targets import FAMILIES, make_target

__version__ = "0.1.0"

__all__ = [
    "FAMILIES", "FlowConfig", "FlowExpert", "MAF", "MetricReport", "MixtureModel", "RBIG",
    "RealNVP", "Stage2Config", "effective_experts", "fit_expert", "kl_mc", "make_target", "mmd",
    "nll", "stage2_adapt", "w2",
]
