import numpy as np
import pytest

from ssgp.kernels import Constant, Matern, Sum
from ssgp.primitives import DenseGP, StateSpaceGP, _SpInGP, gpr_dense

KERNELS = {
    "m12": Matern(0.5, 0.3, 1.2),
    "m32": Matern(1.5, 0.3, 1.2),
    "m52": Matern(2.5, 0.3, 1.2),
    "sum": Sum([Matern(1.5, 0.5, 1.0), Constant(0.7)]),
}


def inputs(n, seed=0, span=3.0):
    return np.sort(np.random.default_rng(seed).uniform(0, span, n))


@pytest.mark.parametrize("name", list(KERNELS))
@pytest.mark.parametrize("n", [1, 2, 10, 100, 500])
def test_four_primitives_agree(name, n):
    k = KERNELS[name]
    t = inputs(n, seed=n)
    ss, dn = StateSpaceGP(t, k), DenseGP(t, k)
    rng = np.random.default_rng(1)
    W = rng.uniform(0.1, 10.0, n)
    r = rng.standard_normal(n)
    scale = np.abs(dn.mvm_K(r)).max()
    assert np.abs(ss.mvm_K(r) - dn.mvm_K(r)).max() <= 1e-9 * max(scale, 1)
    assert np.abs(ss.solve_K(W, r) - dn.solve_K(W, r)).max() < 1e-8
    assert ss.ld_K(W) == pytest.approx(dn.ld_K(W), abs=1e-8)
    np.testing.assert_allclose(ss.ld_K_dW(W), dn.ld_K_dW(W), rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(ss.mvm_K_grad(r), dn.mvm_K_grad(r), rtol=1e-8, atol=1e-9 * max(scale, 1))
    np.testing.assert_allclose(ss.ld_K_grad(W), dn.ld_K_grad(W), rtol=1e-8, atol=1e-10)


def test_solve_with_zero_sites():
    t = inputs(50)
    k = KERNELS["m32"]
    W = np.ones(50)
    W[10:20] = 0.0
    r = np.random.default_rng(2).standard_normal(50)
    x = StateSpaceGP(t, k).solve_K(W, r)
    np.testing.assert_allclose(x, DenseGP(t, k).solve_K(W, r), atol=1e-10)
    assert np.all(x[10:20] == 0)


def test_scalar_formulas():
    k = Matern(1.5, 1.0, 1.5)  # k(0) = 2.25
    ss = StateSpaceGP([0.3], k)
    w, r = 0.8, 1.7
    assert ss.solve_K(np.array([w]), np.array([r]))[0] == pytest.approx(r / (2.25 + 1 / w))
    assert ss.ld_K_dW(np.array([w]))[0] == pytest.approx(2.25 / (1 + w * 2.25))
    assert np.all(ss.solve_K(np.array([w]), np.zeros(1)) == 0)


def test_first_column():
    k = KERNELS["m52"]
    t = inputs(20)
    e = np.zeros(20)
    e[0] = 1
    col = StateSpaceGP(t, k).mvm_K(e)
    assert col[0] == pytest.approx(1.44)
    np.testing.assert_allclose(col, k.gram(t)[:, 0], rtol=1e-12)


def test_ld_dw_at_zero_is_prior_variance():
    np.testing.assert_allclose(StateSpaceGP(inputs(30), KERNELS["m32"]).ld_K_dW(np.zeros(30)), 1.44, rtol=1e-12)


def test_sigma_f_scaling_of_mvm_grad():
    k = KERNELS["m32"]
    t = inputs(40)
    r = np.random.default_rng(3).standard_normal(40)
    ss = StateSpaceGP(t, k)
    np.testing.assert_allclose(ss.mvm_K_grad(r)[1], 2 * ss.mvm_K(r), rtol=1e-10)


def jittered(n, seed=0, step=1 / 3):
    """Regular sampling with jitter; every gap is at least step / 2."""
    rng = np.random.default_rng(seed)
    return step * (np.arange(n) + rng.uniform(-0.25, 0.25, n))


def test_spingp_route_matches_dense():
    k = Matern(1.5, 1.0, 1.0)
    t = jittered(300, seed=4)
    rng = np.random.default_rng(5)
    W = rng.uniform(0.5, 2.0, 300)
    W[::7] = 0.0
    r = rng.standard_normal(300)
    sp, kal, dn = StateSpaceGP(t, k, route="spingp"), StateSpaceGP(t, k), DenseGP(t, k)
    assert np.abs(sp.solve_K(W, r) - dn.solve_K(W, r)).max() < 1e-8
    assert np.abs(sp.solve_K(W, r) - kal.solve_K(W, r)).max() < 1e-8
    assert sp.ld_K(W) == pytest.approx(dn.ld_K(W), abs=1e-8)
    np.testing.assert_allclose(sp.ld_K_dW(W), kal.ld_K_dW(W), atol=1e-8)
    assert _SpInGP(sp.trans, sp.model, W).ld() == pytest.approx(dn.ld_K(W), abs=1e-8)


@pytest.mark.parametrize("nu", [1.5, 2.5])
def test_spingp_all_kernels_n200(nu):
    k = Matern(nu, 0.5, 1.3)
    t = jittered(200, seed=11, step=0.05)
    rng = np.random.default_rng(12)
    W = rng.uniform(0.0, 5.0, 200)
    r = rng.standard_normal(200)
    sp, dn = StateSpaceGP(t, k, route="spingp"), DenseGP(t, k)
    assert np.abs(sp.solve_K(W, r) - dn.solve_K(W, r)).max() < 1e-8
    np.testing.assert_allclose(sp.ld_K_dW(W), dn.ld_K_dW(W), atol=1e-8)


def test_spingp_refinement_recovers_clustered_inputs():
    # a gap of ~1e-4 lengthscales makes Q_i nearly singular; one refinement step repairs the solve
    k = Matern(1.5, 1.0, 1.0)
    t = inputs(300, seed=4, span=100.0)
    rng = np.random.default_rng(5)
    W = rng.uniform(0.5, 2.0, 300)
    r = rng.standard_normal(300)
    sp, dn = StateSpaceGP(t, k, route="spingp"), DenseGP(t, k)
    ref = dn.solve_K(W, r)
    raw = np.abs(sp.solve_nat(W, W * r, refine=0) - ref).max()
    fixed = np.abs(sp.solve_K(W, r) - ref).max()
    assert fixed < 1e-8 and fixed < raw


def test_spingp_joint_covariance_reproduces_gram():
    k = Matern(2.5, 1.0, 1.3)
    n = 12
    t = inputs(n, span=10.0)
    ss = StateSpaceGP(t, k)
    d = ss.model.d
    # T: unit block diagonal, sub-blocks -A_i; Kjoint = T^{-1} blkdiag(P0, Q_1..) T^{-T}
    T = np.eye(n * d)
    Qj = np.zeros((n * d, n * d))
    Qj[:d, :d] = ss.model.P0
    for i in range(1, n):
        T[i * d:(i + 1) * d, (i - 1) * d:i * d] = -ss.trans.A[i - 1]
        Qj[i * d:(i + 1) * d, i * d:(i + 1) * d] = ss.trans.Q[i - 1]
    Ti = np.linalg.inv(T)
    G = np.kron(np.eye(n), ss.model.H)
    Kg = k.gram(t)
    assert np.abs(G @ Ti @ Qj @ Ti.T @ G.T - Kg).max() <= 1e-9 * np.abs(Kg).max()


def test_spingp_precision_is_inverse_joint_covariance():
    k = Matern(2.5, 1.0, 1.3)
    n = 12
    t = jittered(n, step=0.8)
    ss = StateSpaceGP(t, k)
    R = _SpInGP(ss.trans, ss.model, np.zeros(n)).R.todense()
    G = np.kron(np.eye(n), ss.model.H)
    np.testing.assert_allclose(G @ np.linalg.inv(R) @ G.T, k.gram(t), rtol=1e-9, atol=1e-12)


def test_unknown_route():
    with pytest.raises(ValueError):
        StateSpaceGP([0.0], KERNELS["m32"], route="magic")


def test_unsorted_inputs():
    with pytest.raises(ValueError, match="sorted"):
        StateSpaceGP([0.0, 2.0, 1.0], KERNELS["m32"])


def test_negative_sites_refined_solve():
    k = Matern(1.5, 0.1, 2.0)
    t = inputs(200, span=1.0)
    rng = np.random.default_rng(6)
    W = rng.uniform(0.1, 3.0, 200)
    W[rng.choice(200, 10, replace=False)] = -0.2
    b = rng.standard_normal(200)
    ss, dn = StateSpaceGP(t, k), DenseGP(t, k)
    x = ss.solve_nat(W, b)
    assert np.abs(x + W * ss.mvm_K(x) - b).max() < 1e-10
    np.testing.assert_allclose(x, dn.solve_nat(W, b, refine=1), atol=1e-9)


class TestPredict:
    def setup_method(self):
        self.k = KERNELS["m32"]
        self.t = inputs(80, seed=7)
        rng = np.random.default_rng(8)
        self.W = np.full(80, 25.0)
        self.b = self.W * rng.standard_normal(80)

    def test_matches_dense_including_coincident_times(self):
        ts = np.concatenate([self.t[[3, 40]], [-0.5, 1.2345, 3.5]])
        m1, v1 = StateSpaceGP(self.t, self.k).predict(self.W, self.b, ts)
        m2, v2 = DenseGP(self.t, self.k).predict(self.W, self.b, ts)
        np.testing.assert_allclose(m1, m2, atol=1e-9)
        np.testing.assert_allclose(v1, v2, atol=1e-10)

    def test_reverts_to_prior_far_away(self):
        m, v = StateSpaceGP(self.t, self.k).predict(self.W, self.b, [1e3])
        assert abs(m[0]) < 1e-12 and v[0] == pytest.approx(1.44, rel=1e-10)

    def test_empty(self):
        m, v = StateSpaceGP(self.t, self.k).predict(self.W, self.b, [])
        assert m.size == 0 and v.size == 0

    def test_with_interpolation(self):
        ts = np.linspace(0, 3, 50)
        m1, _ = StateSpaceGP(self.t, self.k, K=100).predict(self.W, self.b, ts)
        m2, _ = DenseGP(self.t, self.k).predict(self.W, self.b, ts)
        assert np.abs(m1 - m2).max() < 1e-6


def test_gpr_composition_matches_dense_algorithm():
    k = KERNELS["m52"]
    t = inputs(500, seed=9)
    y = np.sin(3 * t) + 0.1 * np.random.default_rng(10).standard_normal(500)
    sn2 = 0.01
    ss = StateSpaceGP(t, k)
    W = np.full(500, 1 / sn2)
    alpha = ss.solve_K(W, y)
    log_z = -0.5 * (alpha @ ss.mvm_K(alpha) + sn2 * alpha @ alpha + ss.ld_K(W) + 500 * np.log(2 * np.pi * sn2))
    a_ref, lz_ref = gpr_dense(k.gram(t), y, np.zeros(500), sn2)
    assert abs(log_z - lz_ref) < 1e-8
    assert np.abs(alpha - a_ref).max() < 1e-8
