"""Common invertible-density interface shared by every expert kind."""

from __future__ import annotations

import numpy as np

from ..netcore import ContractError, NumericalError

LOG_2PI = float(np.log(2.0 * np.pi))
# per-row log-density at or below this is reported as -inf
SENTINEL_FLOOR = -1e10


def standard_normal_logpdf(u: np.ndarray) -> np.ndarray:
    return -0.5 * np.sum(u * u, axis=1) - 0.5 * u.shape[1] * LOG_2PI


def guard_log_prob(lp: np.ndarray) -> np.ndarray:
    """Map non-finite or catastrophically low values to the -inf sentinel."""
    lp = np.array(lp, dtype=float, copy=True)
    bad = ~np.isfinite(lp) | (lp < SENTINEL_FLOOR)
    lp[bad] = -np.inf
    return lp


class FlowExpert:
    """A normalizing flow with a standard-Gaussian base.

    ``forward`` maps data ``z`` to base ``u`` and returns ``log|det du/dz|``;
    ``inverse`` maps back.  Subclasses implement ``_forward`` and
    ``_inverse``.
    """

    kind = "base"

    def __init__(self, dim: int):
        self.dim = int(dim)
        self.frozen = False
        self.flags: set[str] = set()
        self.meta: dict = {}

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ContractError(f"expected (N, {self.dim}) input, got {x.shape}")
        return x

    def freeze(self) -> "FlowExpert":
        self.frozen = True
        return self

    @property
    def degenerate(self) -> bool:
        return "degenerate" in self.flags

    def forward(self, z):
        z = self._check(z)
        with np.errstate(all="ignore"):
            return self._forward(z)

    def inverse(self, u):
        u = self._check(u)
        with np.errstate(all="ignore"):
            return self._inverse(u)

    def log_prob(self, z) -> np.ndarray:
        z = self._check(z)
        if len(z) == 0:
            return np.zeros(0)
        with np.errstate(all="ignore"):
            u, log_det = self._forward(z)
            return guard_log_prob(standard_normal_logpdf(u) + log_det)

    def sample(self, n: int, seed) -> np.ndarray:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        u = rng.standard_normal((int(n), self.dim))
        if n == 0:
            return np.zeros((0, self.dim))
        return self.inverse(u)

    def _forward(self, z):
        raise NotImplementedError

    def _inverse(self, u):
        raise NotImplementedError

    def check_finite(self, x: np.ndarray, layer: int) -> np.ndarray:
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"{self.kind}: non-finite values after layer {layer}")
        return x
