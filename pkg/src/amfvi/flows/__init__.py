"""Flow experts: MAF, RealNVP and RBIG behind one density interface."""

from .base import LOG_2PI, SENTINEL_FLOOR, FlowExpert, guard_log_prob
from .gradient import MAF, AffineCoupling, GradientFlow, MaskedAffine, RealNVP
from .io import load_expert, save_expert
from .rbig import RBIG, MarginalMap, fit_rbig
from .training import KINDS, FlowConfig, build_expert, fit_expert, fit_gradient_flow

__all__ = [
    "AffineCoupling", "FlowConfig", "FlowExpert", "GradientFlow", "KINDS", "LOG_2PI", "MAF",
    "MarginalMap", "MaskedAffine", "RBIG", "RealNVP", "SENTINEL_FLOOR", "build_expert",
    "fit_expert", "fit_gradient_flow", "fit_rbig", "guard_log_prob", "load_expert",
    "save_expert",
]
