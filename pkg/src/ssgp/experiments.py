"""Reproducible experiment harnesses shared by the CLI and the acceptance tests.

* :func:`oracle_check`: state-space vs dense agreement for every supported
  (likelihood, scheme) pair.
* :func:`interp_study`: log Z and gradient error of interpolated transitions.
* :func:`bench`: wall time of fit + predict as n grows.
* :func:`cross_validate`: k-fold RMSE / NLPD.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .data import kfold_indices, simulate
from .inference import GPModel, infer, predict, predictive_log_density
from .kernels import Matern
from .likelihoods import Erf, Gaussian, Logistic, Poisson, StudentT

# Matern-3/2 prior used for the sinc-family data on [0, 1]
SINC_LENGTHSCALE = 0.1
SINC_SIGMA_F = 2.0
# Matern-3/2 prior for the two-sinusoid data on [0, 12] (close to its ML fit)
SINUSOID_HYPERS = {"lengthscale": 0.7, "sigma_f": 0.4, "sigma_n": 0.1}


def _lik(name):
    return {
        "gaussian": lambda: Gaussian(0.5),
        "studentt": lambda: StudentT(3.0, 0.5),
        "poisson": Poisson,
        "logistic": Logistic,
        "erf": Erf,
    }[name]()


# (generator, likelihood, scheme, MAE(alpha) bound)
ORACLE_PAIRS = (
    ("sinc", "gaussian", "exact", 1e-3),
    ("studentt", "studentt", "laplace", 1e-6),
    ("studentt", "studentt", "vb", 1e-5),
    ("studentt", "studentt", "kl", 1e-3),
    ("poisson", "poisson", "laplace", 1e-5),
    ("poisson", "poisson", "adf", 1e-6),
    ("logistic", "logistic", "laplace", 1e-7),
    ("logistic", "logistic", "vb", 1e-5),
    ("logistic", "logistic", "kl", 1e-6),
    ("logistic", "logistic", "adf", 1e-6),
    ("erf", "erf", "laplace", 1e-7),
    ("erf", "erf", "adf", 1e-6),
)


@dataclass
class OracleRow:
    likelihood: str
    scheme: str
    n: int
    mae_alpha: float
    mae_W: float
    mae_mu_star: float
    bound: float
    passed: bool
    seconds_statespace: float
    seconds_dense: float


def oracle_check(n=1000, seed=0, pairs=ORACLE_PAIRS, n_test=200):
    """Mean absolute differences between the state-space and dense results."""
    rows = []
    t_star = np.linspace(0.0, 1.0, n_test)
    for gen, likname, scheme, bound in pairs:
        d = simulate(gen, n, seed=seed)
        model = GPModel(Matern(1.5, SINC_LENGTHSCALE, SINC_SIGMA_F), _lik(likname))
        t0 = time.perf_counter()
        a = infer(model, d.t, d.y, scheme)
        mu_a, _ = predict(model, d.t, a, t_star)
        t1 = time.perf_counter()
        b = infer(model, d.t, d.y, scheme, backend="dense")
        mu_b, _ = predict(model, d.t, b, t_star, backend="dense")
        t2 = time.perf_counter()
        mae = float(np.mean(np.abs(a.alpha - b.alpha)))
        rows.append(OracleRow(
            likname, scheme, n, mae, float(np.mean(np.abs(a.W - b.W))),
            float(np.mean(np.abs(mu_a - mu_b))), bound, bool(mae <= bound), t1 - t0, t2 - t1,
        ))
    return rows


def _sinusoid_model():
    h = SINUSOID_HYPERS
    return GPModel(Matern(1.5, h["lengthscale"], h["sigma_f"]), Gaussian(h["sigma_n"]))


def interp_study(Ks=(10, 20, 30, 50), seeds=range(20), n=1000, grad=False, boundary="keys"):
    """Relative |delta log Z| (and optionally relative gradient error) of K-node interpolation.

    Returns
    -------
    dict
        ``{"logz": {K: mean rel error}, "grad": {K: mean rel error per parameter}}``
    """
    from .inference import infer_exact
    from .primitives import StateSpaceGP

    model = _sinusoid_model()
    logz = {K: [] for K in Ks}
    gerr = {K: [] for K in Ks}
    for seed in seeds:
        d = simulate("sinusoids", n, seed=seed)
        m = np.zeros(n)
        ref = infer_exact(StateSpaceGP(d.t, model.kernel), d.y, model.likelihood, m, grad=grad)
        for K in Ks:
            gp = StateSpaceGP(d.t, model.kernel, K=K, boundary=boundary)
            r = infer_exact(gp, d.y, model.likelihood, m, grad=grad)
            logz[K].append(abs(r.log_z - ref.log_z) / abs(ref.log_z))
            if grad:
                gerr[K].append(np.abs(r.grad_log_z - ref.grad_log_z) / np.abs(ref.grad_log_z))
    out = {"logz": {K: float(np.mean(v)) for K, v in logz.items()}}
    if grad:
        out["grad"] = {K: np.mean(v, axis=0) for K, v in gerr.items()}
        out["names"] = model.names
    return out


@dataclass
class BenchRow:
    method: str
    n: int
    rep: int
    seconds: float
    max_abs_mean_diff: float


def _fit_predict(model, t, y, t_star, backend, K=None):
    res = infer(model, t, y, "exact", backend=backend, K=K)
    mu, _ = predict(model, t, res, t_star, backend=backend, K=K)
    return mu


def bench(ns=(500, 1000, 2000), reps=10, generator="sinc", dense_cap=4000, K=None, seed=0, n_test=500):
    """Wall time of fit + predict for the dense, state-space and (if K) interpolated paths."""
    rows = []
    model = GPModel(Matern(1.5, SINC_LENGTHSCALE, SINC_SIGMA_F), Gaussian(0.5))
    t_star = np.linspace(0.0, 1.0, n_test)
    methods = ["statespace"] + ([f"interp-{K}"] if K else []) + ["dense"]
    # compile the JIT kernels outside the timed region
    warm = simulate(generator, 50, seed=seed)
    _fit_predict(model, warm.t, warm.y, t_star, "statespace", K)
    for n in ns:
        for rep in range(reps):
            d = simulate(generator, n, seed=seed + rep)
            means = {}
            for meth in methods:
                if meth == "dense" and n > dense_cap:
                    continue
                backend = "dense" if meth == "dense" else "statespace"
                kk = K if meth.startswith("interp") else None
                t0 = time.perf_counter()
                means[meth] = _fit_predict(model, d.t, d.y, t_star, backend, kk)
                sec = time.perf_counter() - t0
                rows.append(BenchRow(meth, n, rep, sec, np.nan))
            ref = means.get("dense", means["statespace"])
            for r in rows[-len(means):]:
                r.max_abs_mean_diff = float(np.max(np.abs(means[r.method] - ref)))
    return rows


@dataclass
class CVResult:
    rmse: float
    nlpd: float
    fold_rmse: list
    fold_nlpd: list


def cross_validate(model, t, y, scheme="kl", k=10, seed=0, parallel=False, **kw):
    """k-fold cross-validation; test targets are hidden as missing labels.

    RMSE compares y with the predictive latent mean; NLPD is
    -log int p(y | f) N(f | mu, var) df averaged over test points.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    folds = kfold_indices(len(t), k, seed)

    def one(test):
        ytr = y.copy()
        ytr[test] = np.nan
        res = infer(model, t, ytr, scheme, **kw)
        mu = res.post_mean[test]
        var = res.post_var[test]
        rmse = float(np.sqrt(np.mean((y[test] - mu) ** 2)))
        nlpd = float(-np.mean(predictive_log_density(model.likelihood, y[test], mu, var)))
        return rmse, nlpd

    if parallel:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor() as ex:
            out = list(ex.map(one, folds))
    else:
        out = [one(f) for f in folds]
    fr = [o[0] for o in out]
    fn = [o[1] for o in out]
    return CVResult(float(np.mean(fr)), float(np.mean(fn)), fr, fn)


def rows_to_dicts(rows):
    return [asdict(r) for r in rows]
