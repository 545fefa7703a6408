import numpy as np
import pytest
from scipy.stats import kurtosis, skew

from amfvi.flows import (LOG_2PI, MAF, RBIG, FlowConfig, RealNVP, build_expert, fit_expert,
                         fit_gradient_flow, fit_rbig, guard_log_prob, load_expert, save_expert)
from amfvi.flows.io import dumps
from amfvi.flows.rbig import GUARD_RANGE, MarginalMap
from amfvi.netcore import ContractError
from amfvi.targets import make_target

SHORT = FlowConfig(epochs=12, batch_size=128)


def numerical_logdet(expert, z, h):
    out = np.empty(len(z))
    for r, point in enumerate(z):
        jac = np.empty((2, 2))
        for j in range(2):
            e = np.zeros((1, 2))
            e[0, j] = h
            up, _ = expert.forward(point[None] + e)
            um, _ = expert.forward(point[None] - e)
            jac[:, j] = (up - um)[0] / (2 * h)
        out[r] = np.log(abs(np.linalg.det(jac)))
    return out


def grid_mass(log_prob, lim=8.0, step=0.02):
    ax = np.arange(-lim + step / 2, lim, step)
    xx, yy = np.meshgrid(ax, ax)
    return float(np.exp(log_prob(np.column_stack([xx.ravel(), yy.ravel()]))).sum() * step**2)


@pytest.fixture(scope="module")
def banana_train():
    return make_target("banana").sample(3000, seed=0).data


@pytest.fixture(scope="module")
def trained(banana_train):
    return {kind: fit_expert(kind, banana_train, SHORT, seed=1) for kind in ("realnvp", "maf", "rbig")}


@pytest.mark.parametrize("cls", [RealNVP, MAF])
def test_identity_initialization(cls):
    e = cls(seed=3)
    z = np.random.default_rng(0).normal(size=(20, 2))
    u, ld = e.forward(z)
    assert np.array_equal(u, z) and np.array_equal(ld, np.zeros(20))
    assert np.array_equal(e.inverse(z), z)


@pytest.mark.parametrize("cls", [RealNVP, MAF])
def test_identity_log_prob_values(cls):
    e = cls()
    assert e.log_prob(np.zeros((1, 2)))[0] == pytest.approx(-LOG_2PI, abs=1e-14)
    assert e.log_prob(np.array([[3.0, 4.0]]))[0] == pytest.approx(-LOG_2PI - 12.5, abs=1e-12)


@pytest.mark.parametrize("cls", [RealNVP, MAF])
def test_identity_samples_are_standard_normal(cls):
    n = 20_000
    x = cls().sample(n, seed=4)
    assert np.all(np.abs(x.mean(axis=0)) < 3 / np.sqrt(n))


@pytest.mark.parametrize("kind", ["realnvp", "maf", "rbig"])
def test_sample_edge_cases(trained, kind):
    e = trained[kind]
    assert e.sample(0, seed=1).shape == (0, 2)
    assert np.array_equal(e.sample(50, seed=2), e.sample(50, seed=2))


@pytest.mark.parametrize("kind", ["realnvp", "maf", "rbig"])
def test_round_trip(trained, kind):
    e = trained[kind]
    u = np.random.default_rng(5).standard_normal((1000, 2))
    assert np.max(np.abs(e.forward(e.inverse(u))[0] - u)) < 1e-5
    z = make_target("banana").sample(1000, seed=6).data
    assert np.max(np.abs(e.inverse(e.forward(z)[0]) - z)) < 1e-5


@pytest.mark.parametrize("kind,h", [("realnvp", 1e-5), ("maf", 1e-5), ("rbig", 1e-7)])
def test_logdet_matches_numerical_jacobian(trained, kind, h):
    # RBIG maps are piecewise linear, so a tiny step avoids straddling a node
    e = trained[kind]
    z = make_target("banana").sample(100, seed=7).data
    _, ld = e.forward(z)
    num = numerical_logdet(e, z, h)
    # relative error of the determinant itself: |det_analytic / det_numeric - 1|
    assert np.max(np.abs(np.expm1(ld - num))) < 1e-3


@pytest.mark.parametrize("kind", ["realnvp", "maf", "rbig"])
def test_short_trained_expert_normalized(trained, kind):
    assert 0.97 <= grid_mass(trained[kind].log_prob) <= 1.03


def test_maf_layers_are_triangular(trained):
    e = trained["maf"]
    z = np.random.default_rng(8).normal(size=(10, 2))
    h = 1e-6
    for layer in e.layers:
        order = layer.order
        for point in z:
            for j in range(2):
                dz = np.zeros((1, 2))
                dz[0, j] = h
                col = (layer.forward(point[None] + dz)[0] - layer.forward(point[None] - dz)[0])[0]
                for i in range(2):
                    if order[j] > order[i]:
                        assert abs(col[i] / (2 * h)) < 1e-8


def test_maf_inverse_is_sequential(trained):
    # inverse of each layer must undo it exactly even though it is computed
    # one dimension at a time
    layer = trained["maf"].layers[0]
    y = np.random.default_rng(9).normal(size=(30, 2))
    np.testing.assert_allclose(layer.forward(layer.inverse(y))[0], y, atol=1e-10)


def test_rbig_rotations_orthogonal(trained):
    for R in trained["rbig"].rotations:
        assert np.max(np.abs(R.T @ R - np.eye(2))) < 1e-10


def test_rbig_marginals_strictly_increasing(trained):
    for maps in trained["rbig"].marginals:
        for m in maps:
            assert np.all(np.diff(m.x) > 0) and np.all(np.diff(m.y) > 0)
            assert m.lo_slope > 0 and m.hi_slope > 0


def test_rbig_zero_layers_is_identity():
    data = np.random.default_rng(0).normal(size=(200, 2))
    e = fit_rbig(data, layers=0)
    u = np.random.default_rng(1).normal(size=(5, 2))
    assert np.array_equal(e.inverse(u), u) and "untrained" in e.flags
    assert np.array_equal(e.forward(u)[1], np.zeros(5))


def test_rbig_gaussian_input_gives_near_identity():
    x = np.random.default_rng(2).standard_normal((20_000, 2))
    e = fit_rbig(x, layers=1)
    grid = np.linspace(*np.quantile(x, [0.005, 0.995]), 400)
    for m in e.marginals[0]:
        assert np.max(np.abs(m(grid)[0] - grid)) < 0.05


def test_rbig_gaussianizes_rings():
    x = make_target("rings").sample(20_000, seed=0).data
    e = fit_rbig(x, layers=30)
    u, _ = e.forward(x)
    assert np.all(np.abs(skew(u, axis=0)) < 0.1)
    assert np.all(np.abs(kurtosis(u, axis=0)) < 0.3)


def test_rbig_needs_hundred_rows():
    with pytest.raises(ValueError):
        fit_rbig(np.zeros((99, 2)))


def test_rbig_constant_marginal_jitters_with_warning():
    x = np.random.default_rng(3).normal(size=(500, 2))
    x[:, 1] = 4.0
    with pytest.warns(RuntimeWarning, match="constant marginal"):
        e = fit_rbig(x, layers=2)
    assert np.all(np.isfinite(e.log_prob(x)))


def test_rbig_inverse_guard_counts_clamps(trained):
    e = fit_rbig(make_target("banana").sample(500, seed=1).data, layers=3)
    z = e.inverse(np.array([[0.0, 0.0], [GUARD_RANGE * 3, 0.0]]))
    assert np.all(np.isfinite(z)) and e.n_clamped == 1


def test_marginal_map_inverse():
    m = MarginalMap.fit(np.random.default_rng(4).gamma(2.0, size=5000), 200)
    v = np.linspace(-2, 20, 300)
    np.testing.assert_allclose(m.inverse(m(v)[0]), v, atol=1e-10)


def test_log_prob_guard_sentinel():
    lp = guard_log_prob(np.array([0.0, np.nan, -2e10, np.inf, -5.0]))
    assert lp[0] == 0.0 and lp[4] == -5.0 and np.all(np.isneginf(lp[1:4]))


def test_wrong_columns_rejected():
    with pytest.raises(ContractError):
        RealNVP().log_prob(np.zeros((3, 3)))


def test_realnvp_learns_standard_gaussian():
    x = np.random.default_rng(10).standard_normal((5000, 2))
    e = fit_gradient_flow("realnvp", x, FlowConfig(epochs=5), seed=0)
    held = np.random.default_rng(11).standard_normal((5000, 2))
    # entropy of N(0, I_2) is ln(2 pi e)
    assert abs(-e.log_prob(held).mean() - np.log(2 * np.pi * np.e)) < 0.1


@pytest.mark.parametrize("kind", ["realnvp", "maf"])
def test_zero_epochs_returns_flagged_identity(kind):
    e = fit_gradient_flow(kind, np.ones((10, 2)), FlowConfig(epochs=0))
    assert "untrained" in e.flags and e.frozen
    z = np.random.default_rng(0).normal(size=(4, 2))
    assert np.array_equal(e.forward(z)[0], z)


@pytest.mark.parametrize("kind", ["realnvp", "maf"])
def test_training_is_deterministic(banana_train, kind):
    cfg = FlowConfig(epochs=2, batch_size=256)
    a = fit_gradient_flow(kind, banana_train, cfg, seed=5)
    b = fit_gradient_flow(kind, banana_train, cfg, seed=5)
    assert np.array_equal(a.params, b.params)
    assert a.meta["loss_curve"] == b.meta["loss_curve"] and len(a.meta["loss_curve"]) == 2


def test_divergence_guard_restores_best_and_flags():
    data = np.random.default_rng(0).normal(size=(256, 2))
    data[0] = np.inf
    e = fit_gradient_flow("maf", data, FlowConfig(epochs=10, batch_size=64), seed=0)
    assert "degenerate" in e.flags
    assert len(e.meta["loss_curve"]) == 3
    # best checkpoint is the untouched identity start
    assert np.array_equal(e.params, build_expert("maf").params)


@pytest.mark.parametrize("kind", ["realnvp", "maf", "rbig"])
def test_serialization_bit_exact(trained, kind, tmp_path):
    e = trained[kind]
    save_expert(e, tmp_path / "model.bin")
    back = load_expert(tmp_path / "model.bin")
    assert back.kind == kind and back.flags == e.flags and back.frozen
    z = make_target("banana").sample(200, seed=3).data
    assert np.array_equal(back.log_prob(z), e.log_prob(z))
    assert np.array_equal(back.sample(20, 1), e.sample(20, 1))
    assert dumps(back) == dumps(e)


def test_rbig_expert_from_build():
    assert isinstance(build_expert("rbig"), RBIG)
    with pytest.raises(ValueError):
        build_expert("glow")


def test_training_keeps_best_epoch(banana_train):
    e = fit_gradient_flow("maf", banana_train, FlowConfig(epochs=4, batch_size=256), seed=2)
    curve = e.meta["loss_curve"]
    assert e.meta["best_epoch"] == int(np.argmin(curve))


@pytest.mark.parametrize("rotation", ["random", "pca"])
def test_rbig_rotation_options(rotation):
    x = make_target("xshape").sample(2000, seed=1).data
    e = fit_rbig(x, layers=5, rotation=rotation)
    assert e.meta["rotation"] == rotation
    for R in e.rotations:
        assert np.max(np.abs(R.T @ R - np.eye(2))) < 1e-10
    assert np.array_equal(e.log_prob(x), fit_rbig(x, layers=5, rotation=rotation).log_prob(x))
    with pytest.raises(ValueError):
        fit_rbig(x, layers=1, rotation="householder")
