"""End-to-end acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (printed, and repeated in the pytest
terminal summary) before asserting.
"""

import time

import numpy as np
import pytest
from scipy.linalg import cho_solve, solve_triangular

from conftest import record_criterion
from ssgp import kalman
from ssgp.data import simulate
from ssgp.experiments import ORACLE_PAIRS, _lik, bench, cross_validate, interp_study, oracle_check
from ssgp.inference import GPModel, infer
from ssgp.kernels import Matern, parse_kernel
from ssgp.likelihoods import Poisson, StudentT
from ssgp.linalg import expm
from ssgp.primitives import StateSpaceGP
from ssgp.recursions import alpha_beta_recursion, chol_recursion

pytestmark = pytest.mark.acceptance


def test_criterion_1_oracle_equivalence():
    t0 = time.perf_counter()
    rows = oracle_check(n=1000, seed=0)
    seconds = time.perf_counter() - t0
    worst = max(rows, key=lambda r: r.mae_alpha / r.bound)
    for r in rows:
        print(f"  {r.likelihood}/{r.scheme}: MAE(alpha)={r.mae_alpha:.2e} <= {r.bound:.0e} "
              f"MAE(W)={r.mae_W:.2e} MAE(mu*)={r.mae_mu_star:.2e}")
    ok = all(r.passed for r in rows) and len(rows) == 12 and seconds < 300
    record_criterion(1, "state-space vs dense MAE(alpha) within bounds at n=1000", ok,
                     f"worst {worst.likelihood}/{worst.scheme} {worst.mae_alpha:.1e}, {seconds:.0f}s")
    assert ok


def test_criterion_2_interpolation_accuracy():
    Ks = (10, 20, 30, 50)
    err = interp_study(Ks=Ks, seeds=range(20), n=1000)["logz"]
    mono = all(err[a] >= err[b] for a, b in zip(Ks, Ks[1:]))
    ok = err[10] < 1e-4 and err[20] < 1e-6 and mono
    record_criterion(2, "interpolated log Z: K=10 < 1e-4, K=20 < 1e-6, non-increasing", ok,
                     ", ".join(f"K={k}: {v:.1e}" for k, v in err.items()))
    assert ok


def test_criterion_3_derivative_interpolation():
    out = interp_study(Ks=(30, 150), seeds=range(20), n=1000, grad=True)
    g30, g150 = out["grad"][30], out["grad"][150]
    ok = len(g30) == 3 and np.all(g30 < 1.0) and np.all(g150 < 1e-2)
    record_criterion(3, "interpolated gradients: K=30 < 1, K=150 < 1e-2", ok,
                     f"K=30 {np.array2string(g30, precision=1)}, K=150 {np.array2string(g150, precision=1)}")
    assert ok


def test_criterion_4_scaling():
    ns = (1000, 2000, 4000, 8000)
    rows = bench(ns=ns, reps=3, generator="sinc", dense_cap=4000, seed=0)
    med = {n: float(np.median([r.seconds for r in rows if r.method == "statespace" and r.n == n])) for n in ns}
    diff = max(r.max_abs_mean_diff for r in rows if r.method == "statespace" and r.n <= 4000)
    ratio = med[8000] / med[1000]
    ok = ratio < 16 and diff < 1e-6
    times = ", ".join(f"n={n}: {s:.3f}s" for n, s in med.items())
    record_criterion(4, "t(8000)/t(1000) < 16 and dense/state-space means within 1e-6", ok,
                     f"ratio {ratio:.1f}, max diff {diff:.1e}; {times}")
    assert ok


def _fd(model, d, scheme, opts, h=1e-5):
    th = model.theta
    out = np.empty_like(th)
    for j in range(th.size):
        e = np.zeros_like(th)
        e[j] = h
        up = infer(model.with_theta(th + e), d.t, d.y, scheme, **opts).log_z
        dn = infer(model.with_theta(th - e), d.t, d.y, scheme, **opts).log_z
        out[j] = (up - dn) / (2 * h)
    return out


def test_criterion_5_gradient_correctness():
    kernels = {
        "matern12": lambda: Matern(0.5, 0.1, 2.0),
        "matern32": lambda: Matern(1.5, 0.1, 2.0),
        "matern52": lambda: Matern(2.5, 0.1, 2.0),
        "matern32+constant": lambda: parse_kernel("matern32+constant", 0.1, 2.0),
    }
    pairs = [(g, lk, s) for g, lk, s, _ in ORACLE_PAIRS if s != "kl"]
    worst = (0.0, None)
    failures = []
    for kname, kf in kernels.items():
        for gen, lname, scheme in pairs:
            lik = _lik(lname)
            if lname == "poisson" and scheme == "adf":
                # the analytic ADF derivative assumes exact moments; 20 nodes leave ~4e-4 of quadrature error
                lik = Poisson(nodes=40)
            opts = {"tol": 1e-13} if scheme == "vb" else {}
            model = GPModel(kf(), lik)
            for seed in range(5):
                d = simulate(gen, 200, seed=seed)
                g = infer(model, d.t, d.y, scheme, grad=True, **opts).grad_log_z
                fd = _fd(model, d, scheme, opts)
                rel = float(np.max(np.abs(g - fd) / np.abs(fd)))
                if rel > worst[0]:
                    worst = (rel, f"{kname}/{lname}/{scheme}/seed{seed}")
                if not rel < 1e-4:
                    failures.append((kname, lname, scheme, seed, rel))
    ok = not failures
    record_criterion(5, "analytic d log Z / d theta vs central differences within 1e-4", ok,
                     f"worst {worst[0]:.1e} at {worst[1]}; {len(failures)} failures")
    assert ok, failures


def test_criterion_6_recursion_triangle():
    n = 200
    errs = []
    for seed in range(3):
        rng = np.random.default_rng(seed)
        t = np.sort(rng.uniform(0, 5, n))
        k = Matern(1.5, 0.4, 1.3)
        W = rng.uniform(0.2, 5.0, n)
        r = rng.standard_normal(n)
        gp = StateSpaceGP(t, k)
        fs = kalman.kalman_filter(gp.trans, gp.model, W, W * r)
        sm = kalman.rts_smoother(fs, gp.trans, gp.model)
        _, a_rec = alpha_beta_recursion(fs, sm)
        C = k.gram(t) + np.diag(1 / W)
        Ld = np.linalg.cholesky(C)
        a_dense = cho_solve((Ld, True), r)
        f = chol_recursion(fs, gp.trans, gp.model, inverse=True)
        errs.append(max(
            np.abs(a_dense - sm.alpha).max(),
            np.abs(a_dense - a_rec).max(),
            np.abs(sm.alpha - a_rec).max(),
            np.abs(f.L - Ld).max(),
            np.abs(f.Linv - solve_triangular(Ld, np.eye(n), lower=True)).max(),
        ))
    ok = max(errs) < 1e-8
    record_criterion(6, "dense / smoother / recursion alpha and L, L^-1 agree within 1e-8 at n=200", ok,
                     f"max error {max(errs):.1e}")
    assert ok


def test_criterion_7_kernel_reconstruction():
    worst = 0.0
    for nu in (0.5, 1.5, 2.5):
        for ell, sf in ((0.3, 1.2), (1.0, 1.0), (4.0, 0.5)):
            k = Matern(nu, ell, sf)
            m = k.state_space()
            taus = np.arange(0, 51) * 0.1 * ell
            rec = np.array([(m.H @ expm(tau * m.F) @ m.Pinf @ m.H.T)[0, 0] for tau in taus])
            worst = max(worst, float(np.max(np.abs(rec - k(taus))) / sf**2))
    ok = worst < 1e-10
    record_criterion(7, "H exp(tau F) Pinf H^T = k(tau) for all Matern variants within 1e-10", ok,
                     f"max error {worst:.1e} (relative to sigma_f^2)")
    assert ok


def test_criterion_8_cross_validation_harness():
    d = simulate("studentt", 500, seed=0)
    model = GPModel(Matern(1.5, 0.1, 2.0), StudentT(3.0, 0.5))
    a = cross_validate(model, d.t, d.y, scheme="kl", k=10, seed=0)
    b = cross_validate(model, d.t, d.y, scheme="kl", k=10, seed=0)
    ok = (len(a.fold_rmse) == 10 and np.isfinite(a.rmse) and np.isfinite(a.nlpd)
          and a.rmse == b.rmse and a.nlpd == b.nlpd)
    record_criterion(8, "10-fold CV with KL on Student's t data is deterministic", ok,
                     f"RMSE {a.rmse:.4f}, NLPD {a.nlpd:.4f}")
    assert ok
