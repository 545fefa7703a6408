"""The six 2D benchmark posteriors: seeded samplers and exact log-densities."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

LOG_2PI = float(np.log(2.0 * np.pi))

FAMILIES = ("banana", "xshape", "bimodal", "multimodal", "two_moons", "rings")
SPLITS = ("train", "eval", "fresh", "kl", "entropy")
# default split sizes; "fresh" is the per-epoch Stage-2 batch
SPLIT_SIZES = {"train": 20_000, "eval": 5_000, "fresh": 512}


class ConfigError(ValueError):
    """Unknown family or invalid family parameters."""


def seed_stream(seed: int, family: str, split: str, *extra: int) -> np.random.Generator:
    """Independent generator per (seed, family, split[, extra...]).

    Keys are stable integers, never Python ``hash``, so streams are
    reproducible across processes.
    """
    fam = FAMILIES.index(family) if family in FAMILIES else sum(map(ord, family)) + 1000
    spl = SPLITS.index(split) if split in SPLITS else sum(map(ord, split)) + 1000
    return np.random.default_rng([int(seed), fam, spl, *map(int, extra)])


@dataclass
class SampleSet:
    data: np.ndarray
    family: str
    seed: int
    split: str

    def __len__(self):
        return len(self.data)

    def to_csv(self, path) -> None:
        write_samples_csv(path, self.data)


def write_samples_csv(path, data: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1", "x2"])
        for row in data:
            w.writerow([f"{v:.9g}" for v in row])


def read_samples_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _gauss_logpdf(z, mean, cov):
    """Log N(z; mean, cov) for a 2x2 covariance, rows of z."""
    d = z - mean
    L = np.linalg.cholesky(cov)
    sol = np.linalg.solve(L, d.T)
    return -0.5 * np.sum(sol * sol, axis=0) - np.log(np.diag(L)).sum() - LOG_2PI


def _norm_logpdf(x, mu, sd):
    return -0.5 * ((x - mu) / sd) ** 2 - np.log(sd) - 0.5 * LOG_2PI


@dataclass
class TargetFamily:
    """Named 2D generator with a closed-form log-density.

    Subclasses fill ``params`` and implement ``_draw`` and ``log_density``.
    """

    name: str
    params: dict = field(default_factory=dict)
    dim: int = 2

    def sample(self, n: int, seed=0, split: str = "train") -> SampleSet:
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = seed if isinstance(seed, np.random.Generator) else seed_stream(seed, self.name, split)
        return SampleSet(self._draw(int(n), rng), self.name,
                         seed if isinstance(seed, int) else -1, split)

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self._draw(int(n), rng)

    def log_density(self, z) -> np.ndarray:
        raise NotImplementedError

    def log_prob(self, z) -> np.ndarray:
        return self.log_density(z)

    def entropy_mc(self, n: int = 20_000, seed=0):
        """Monte-Carlo entropy ``-E_p[log p]`` with its standard error."""
        if n < 1000:
            raise ValueError("entropy_mc needs n >= 1000")
        rng = seed if isinstance(seed, np.random.Generator) else seed_stream(seed, self.name, "entropy")
        lp = self.log_density(self._draw(int(n), rng))
        return -float(lp.mean()), float(lp.std(ddof=1) / np.sqrt(n))

    def _draw(self, n, rng):
        raise NotImplementedError


class GaussianMixtureTarget(TargetFamily):
    def __init__(self, name, means, covs, weights=None):
        means = np.asarray(means, dtype=float)
        covs = np.asarray(covs, dtype=float)
        k = len(means)
        weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
        if not np.isclose(weights.sum(), 1.0) or np.any(weights < 0):
            raise ConfigError("mixture weights must lie on the simplex")
        super().__init__(name, {"means": means, "covs": covs, "weights": weights})

    def _draw(self, n, rng):
        p = self.params
        comp = rng.choice(len(p["weights"]), size=n, p=p["weights"])
        eps = rng.standard_normal((n, 2))
        out = np.empty((n, 2))
        for k in range(len(p["weights"])):
            idx = comp == k
            # eigen-factor handles singular (zero-scale) covariances
            vals, vecs = np.linalg.eigh(p["covs"][k])
            A = vecs * np.sqrt(np.clip(vals, 0.0, None))
            out[idx] = p["means"][k] + eps[idx] @ A.T
        return out

    def log_density(self, z):
        z = np.asarray(z, dtype=float)
        p = self.params
        terms = [np.log(w) + _gauss_logpdf(z, m, c)
                 for m, c, w in zip(p["means"], p["covs"], p["weights"])]
        return logsumexp(np.stack(terms), axis=0)


class BananaTarget(TargetFamily):
    """z1 ~ N(0, sd1^2); z2 = u + curvature * (z1^2 - sd1^2), u ~ N(0, 1)."""

    def __init__(self, sd1=2.0, curvature=0.25):
        super().__init__("banana", {"sd1": float(sd1), "curvature": float(curvature)})

    def _shift(self, z1):
        p = self.params
        return p["curvature"] * (z1 ** 2 - p["sd1"] ** 2)

    def _draw(self, n, rng):
        z1 = self.params["sd1"] * rng.standard_normal(n)
        z2 = rng.standard_normal(n) + self._shift(z1)
        return np.column_stack([z1, z2])

    def log_density(self, z):
        z = np.asarray(z, dtype=float)
        return (_norm_logpdf(z[:, 0], 0.0, self.params["sd1"])
                + _norm_logpdf(z[:, 1] - self._shift(z[:, 0]), 0.0, 1.0))


class RadialTarget(TargetFamily):
    """Mixture of arcs: centre c, radius ~ N(r0, sd), angle uniform on an arc.

    An arc is ``(centre, radius, angle_start, angle_span)``.  Density of one
    arc is ``N(r; r0, sd) / (span * r)`` for points whose polar angle about
    the centre lies on the arc.
    """

    def __init__(self, name, arcs, sd, weights=None):
        k = len(arcs)
        weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
        super().__init__(name, {"arcs": [tuple(map(float, (a[0][0], a[0][1], *a[1:]))) for a in arcs],
                                "sd": float(sd), "weights": weights})

    def _draw(self, n, rng):
        p = self.params
        comp = rng.choice(len(p["weights"]), size=n, p=p["weights"])
        u = rng.uniform(size=n)
        eps = rng.standard_normal(n)
        out = np.empty((n, 2))
        for k, (cx, cy, r0, a0, span) in enumerate(p["arcs"]):
            idx = comp == k
            ang = a0 + span * u[idx]
            r = r0 + p["sd"] * eps[idx]
            out[idx, 0] = cx + r * np.cos(ang)
            out[idx, 1] = cy + r * np.sin(ang)
        return out

    def log_density(self, z):
        z = np.asarray(z, dtype=float)
        p = self.params
        terms = []
        for w, (cx, cy, r0, a0, span) in zip(p["weights"], p["arcs"]):
            dx, dy = z[:, 0] - cx, z[:, 1] - cy
            r = np.maximum(np.hypot(dx, dy), 1e-8)
            t = np.log(w) + _norm_logpdf(r, r0, p["sd"]) - np.log(span * r)
            if span < 2 * np.pi:
                ang = np.mod(np.arctan2(dy, dx) - a0, 2 * np.pi)
                t = np.where(ang <= span, t, -np.inf)
            terms.append(t)
        return logsumexp(np.stack(terms), axis=0)


def make_target(name: str, **overrides) -> TargetFamily:
    """Build a benchmark family; keyword overrides tweak its constants.

    ``bimodal`` accepts ``offset`` and ``scale`` so it can degenerate into a
    single Gaussian (``offset=0``) for oracle tests.
    """
    if name == "banana":
        return BananaTarget(**overrides)
    if name == "xshape":
        v, c = overrides.get("var", 2.0), overrides.get("corr", 1.8)
        covs = [[[v, c], [c, v]], [[v, -c], [-c, v]]]
        return GaussianMixtureTarget("xshape", np.zeros((2, 2)), covs)
    if name == "bimodal":
        off, sc = overrides.get("offset", 2.5), overrides.get("scale", 0.5)
        covs = [np.eye(2) * sc ** 2] * 2
        return GaussianMixtureTarget("bimodal", [[-off, 0.0], [off, 0.0]], covs)
    if name == "multimodal":
        k, rad, sc = overrides.get("k", 5), overrides.get("radius", 3.0), overrides.get("scale", 0.4)
        ang = 2 * np.pi * np.arange(k) / k
        means = rad * np.column_stack([np.cos(ang), np.sin(ang)])
        return GaussianMixtureTarget("multimodal", means, [np.eye(2) * sc ** 2] * k)
    if name == "two_moons":
        sd = overrides.get("sd", 0.1)
        # upper arc about (+0.5, -0.25), lower arc about (-0.5, +0.25)
        arcs = [((0.5, -0.25), 1.0, 0.0, np.pi), ((-0.5, 0.25), 1.0, np.pi, np.pi)]
        return RadialTarget("two_moons", arcs, sd)
    if name == "rings":
        sd = overrides.get("sd", 0.1)
        radii = overrides.get("radii", (1.0, 2.0))
        arcs = [((0.0, 0.0), r, 0.0, 2 * np.pi) for r in radii]
        return RadialTarget("rings", arcs, sd)
    raise ConfigError(f"unknown target family {name!r}; expected one of {FAMILIES}")


def sample(family, n: int, seed: int = 0, split: str = "train") -> SampleSet:
    fam = make_target(family) if isinstance(family, str) else family
    return fam.sample(n, seed, split)


def log_density(family, z) -> np.ndarray:
    fam = make_target(family) if isinstance(family, str) else family
    return fam.log_density(z)


def entropy_mc(family, n: int = 20_000, seed: int = 0):
    fam = make_target(family) if isinstance(family, str) else family
    return fam.entropy_mc(n, seed)
