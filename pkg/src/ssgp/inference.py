"""Exact and approximate GP inference driven by the computational primitives.

Every scheme reduces to a Gaussian effective likelihood with sites (b, W) and
returns alpha with posterior N(m + K alpha, (K^{-1} + W)^{-1}). The same
code runs on :class:`~ssgp.primitives.StateSpaceGP` and on the dense
reference :class:`~ssgp.primitives.DenseGP`.

Gradients of log Z are taken with respect to the flat parameter vector
``[kernel params, likelihood params, mean params]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, NumericalFailure, UnsupportedInferenceError
from .likelihoods import Gaussian, Likelihood
from .means import Mean, ZeroMean
from .primitives import DenseGP, StateSpaceGP

log = logging.getLogger(__name__)

SCHEMES = ("exact", "laplace", "vb", "kl", "adf")
LOG2PI = np.log(2 * np.pi)


@dataclass
class InferenceResult:
    """Outcome of one inference run.

    ``b`` is the natural location of the sites in centered coordinates
    (for Gaussian regression b = W (y - m)), so that ``alpha = (I + W K)^{-1} b``.
    ``post_mean`` includes the prior mean.
    """

    scheme: str
    alpha: np.ndarray
    W: np.ndarray
    b: np.ndarray
    log_z: float
    iterations: int = 1
    converged: bool = True
    grad_log_z: np.ndarray | None = None
    post_mean: np.ndarray | None = None
    post_var: np.ndarray | None = None
    trace: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)


class GPModel:
    """Kernel, likelihood and mean function with a flat log-domain parameter vector."""

    def __init__(self, kernel, likelihood=None, mean=None):
        self.kernel = kernel
        self.likelihood = likelihood if likelihood is not None else Gaussian()
        self.mean = mean if mean is not None else ZeroMean()

    @property
    def theta(self):
        return np.concatenate([self.kernel.params, self.likelihood.params, self.mean.params])

    @property
    def names(self):
        return (
            tuple(f"kernel.{n}" for n in self.kernel.param_names)
            + tuple(f"lik.{n}" for n in self.likelihood.param_names)
            + tuple(f"mean.{n}" for n in self.mean.param_names)
        )

    @property
    def sizes(self):
        return self.kernel.nparams, self.likelihood.nparams, self.mean.nparams

    def with_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        pk, pl, pm = self.sizes
        if theta.shape != (pk + pl + pm,):
            raise ValueError(f"expected {pk + pl + pm} parameters, got {theta.shape}")
        return GPModel(
            self.kernel.with_params(theta[:pk]),
            self.likelihood.with_params(theta[pk:pk + pl]),
            self.mean.with_params(theta[pk + pl:]),
        )

    def __repr__(self):
        return f"GPModel({self.kernel!r}, {self.likelihood!r}, {self.mean!r})"


def make_gp(kernel, t, backend="statespace", K=None, route="kalman", boundary="keys"):
    """Primitive backend for ``kernel`` at inputs ``t``."""
    if backend in ("statespace", "ss"):
        return StateSpaceGP(t, kernel, K=K, route=route, boundary=boundary)
    if backend == "dense":
        return DenseGP(t, kernel)
    raise ValueError(f"unknown backend '{backend}' (use 'statespace' or 'dense')")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _fill_targets(lik, y, lab):
    """Replace unlabeled targets by a value inside the support so vector code stays finite."""
    fill = 1.0 if lik.name in ("logistic", "erf") else 0.0
    return np.where(lab, y, fill)


def _kernel_grad(gp, alpha, W, extra=None):
    Ka_grad = gp.mvm_K_grad(alpha)
    g = 0.5 * Ka_grad @ alpha - 0.5 * gp.ld_K_grad(W)
    if extra is not None:
        g = g + Ka_grad @ extra
    return g


def _result(scheme, post, W, b, log_z, m, **kw):
    return InferenceResult(
        scheme=scheme, alpha=post.alpha, W=W, b=b, log_z=float(log_z),
        post_mean=m + post.mean, post_var=post.var, **kw,
    )


# ---------------------------------------------------------------------------
# schemes
# ---------------------------------------------------------------------------


def infer_exact(gp, y, lik, m, dm=None, lab=None, grad=False):
    """Gaussian-likelihood regression: W = 1/sigma_n^2, alpha = solve_K(W, y - m)."""
    if not isinstance(lik, Gaussian):
        raise UnsupportedInferenceError("exact inference needs the Gaussian likelihood")
    sn2 = lik.sn2
    if not sn2 > 0:
        raise ValueError("noise variance must be positive")
    lab = np.ones(len(y), dtype=bool) if lab is None else lab
    r = np.where(lab, y - m, 0.0)
    W = np.where(lab, 1.0 / sn2, 0.0)
    b = W * r
    post = gp.posterior(W, b)
    alpha = post.alpha
    nl = int(lab.sum())
    # r^T alpha = alpha^T (K + sn2 I) alpha on labeled entries
    log_z = -0.5 * (alpha @ post.mean + sn2 * alpha @ alpha) - 0.5 * post.ld - 0.5 * nl * np.log(2 * np.pi * sn2)
    res = _result("exact", post, W, b, log_z, m)
    if grad:
        gk = _kernel_grad(gp, alpha, W)
        # d/d log sn: sn2 (alpha^T alpha - tr((K + sn2 I)^{-1}))
        tr = np.sum(np.where(lab, W * (1 - W * post.var), 0.0))
        gl = np.array([sn2 * (alpha @ alpha - tr)])
        gm = np.zeros(0) if dm is None else dm @ alpha
        res.grad_log_z = np.concatenate([gk, gl, gm])
    return res


def _newton_polish(gp, lik, yy, labf, m, alpha, Ka):
    """One undamped Newton step from a converged mode, kept only if it reduces the residual."""
    ev = lik.evaluate(yy, m + Ka)
    g0 = np.max(np.abs(labf * ev.d1 - alpha))
    Wt = -labf * ev.d2
    try:
        new = gp.solve_nat(Wt, Wt * Ka + labf * ev.d1, refine=1)
    except NumericalFailure:
        return alpha, Ka
    Knew = gp.mvm_K(new)
    ev = lik.evaluate(yy, m + Knew)
    if np.max(np.abs(labf * ev.d1 - new)) <= g0:
        return new, Knew
    return alpha, Ka


def infer_laplace(gp, y, lik, m, dm=None, lab=None, grad=False, tol=1e-8, max_iter=50):
    """Posterior mode by damped Newton iterations in the alpha parameterization.

    Newton steps use the true curvature W = -d2 log p when that gives an
    ascent direction and W+ = max(W, 0) otherwise, followed by a
    backtracking line search. The returned W is the true curvature at the mode.

    Raises
    ------
    ConvergenceError
        If max |d log p - alpha| stays above ``tol`` after ``max_iter`` steps.
    """
    n = len(y)
    lab = np.ones(n, dtype=bool) if lab is None else lab
    yy = _fill_targets(lik, y, lab)
    labf = lab.astype(float)

    def psi(alpha, Ka):
        return -0.5 * alpha @ Ka + np.sum(labf * lik.logp(yy, m + Ka))

    alpha = np.zeros(n)
    Ka = np.zeros(n)
    obj = psi(alpha, Ka)
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        ev = lik.evaluate(yy, m + Ka)
        d1 = labf * ev.d1
        g = d1 - alpha
        if np.max(np.abs(g)) < tol:
            converged = True
            it -= 1
            break
        Wt = -labf * ev.d2
        slope = -1.0
        if np.any(Wt < 0):
            # full Newton step; kept only if it points uphill
            try:
                step = gp.solve_nat(Wt, Wt * Ka + d1, refine=1) - alpha
                Kstep = gp.mvm_K(step)
                slope = g @ Kstep
            except NumericalFailure:
                pass
        if not slope > 0:
            Wp = np.maximum(Wt, 0.0)
            step = gp.solve_nat(Wp, Wp * Ka + d1, refine=1) - alpha
            Kstep = gp.mvm_K(step)
            slope = g @ Kstep
        # below ~eps |psi| the Armijo test is rounding noise; use the residual instead
        flat = slope < 64 * np.finfo(float).eps * max(1.0, abs(obj))
        gmax = np.max(np.abs(g))
        t = 1.0
        while True:
            new = psi(alpha + t * step, Ka + t * Kstep)
            if flat and np.isfinite(new):
                ev_t = lik.evaluate(yy, m + Ka + t * Kstep)
                if np.max(np.abs(labf * ev_t.d1 - alpha - t * step)) < gmax:
                    break
            elif np.isfinite(new) and new >= obj + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-12:
                break
        if t < 1e-12:
            break
        alpha = alpha + t * step
        Ka = Ka + t * Kstep
        obj = new
        trace.append(obj)
    else:
        ev = lik.evaluate(yy, m + Ka)
        converged = np.max(np.abs(labf * ev.d1 - alpha)) < tol
    if not converged:
        raise ConvergenceError(
            f"Laplace mode search did not converge in {max_iter} iterations", trace=trace
        )
    alpha, Ka = _newton_polish(gp, lik, yy, labf, m, alpha, Ka)
    fhat = m + Ka
    ev = lik.evaluate(yy, fhat)
    W = -labf * ev.d2
    b = alpha + W * Ka
    post = gp.posterior(W, b)
    log_z = -0.5 * alpha @ Ka - 0.5 * post.ld + np.sum(labf * ev.logp)
    res = InferenceResult(
        "laplace", alpha, W, b, float(log_z), it, True, post_mean=fhat, post_var=post.var,
        trace=trace,
    )
    if grad:
        v = post.var
        dfhat = 0.5 * labf * v * ev.d3
        s = gp.solve_nat(W, dfhat)
        gk = _kernel_grad(gp, alpha, W, extra=s)
        dlp, dd1, dd2 = lik.param_derivs(yy, fhat)
        Ks = gp.mvm_K(s)
        gl = (dlp @ labf) + 0.5 * (dd2 @ (labf * v)) + dd1 @ (labf * Ks)
        gm = np.zeros(0) if dm is None else dm @ (alpha + s)
        res.grad_log_z = np.concatenate([gk, gl, gm])
    return res


def infer_vb(gp, y, lik, m, dm=None, lab=None, grad=False, tol=1e-10, max_iter=100):
    """Variational lower bound for super-Gaussian likelihoods.

    Each sweep fixes the variational parameters x_i, solves the Gaussian
    regression with precision W = -2 phi'(x), then sets
    x_i = E[(f_i - z_i)^2]. The bound is non-decreasing across sweeps.
    """
    if not lik.super_gaussian:
        raise UnsupportedInferenceError(f"VB needs a super-Gaussian likelihood; {lik.name} is not")
    n = len(y)
    lab = np.ones(n, dtype=bool) if lab is None else lab
    yy = _fill_targets(lik, y, lab)
    labf = lab.astype(float)
    z, bvb = lik.vb_sites(yy)
    prior_var = gp.posterior(np.zeros(n), np.zeros(n)).var
    x = (m - z) ** 2 + prior_var
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        phi, dphi = lik.vb_phi(yy, x)
        W = -2 * labf * dphi
        b = labf * (bvb + W * z) - W * m
        post = gp.posterior(W, b)
        fbar = m + post.mean
        bound = (
            -0.5 * post.alpha @ post.mean - 0.5 * post.ld
            + np.sum(labf * (bvb * fbar + phi + dphi * ((fbar - z) ** 2 - x)))
        )
        trace.append(float(bound))
        x_used = x
        x = (fbar - z) ** 2 + post.var
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            converged = True
            break
    rho = 0.5 * np.sum(W * post.var)
    smoothed = np.sum(labf * lik.vb_smoothed(yy, fbar, post.var))
    res = _result(
        "vb", post, W, b, trace[-1], m, iterations=it, converged=converged, trace=trace,
        extras={"rho_vb": float(rho), "sum_l_vb": float(smoothed), "x": x_used},
    )
    if grad:
        gk = _kernel_grad(gp, post.alpha, W)
        dphi_t, ddphi_t = lik.vb_phi_grad(yy, x_used)
        gl = dphi_t @ labf + ddphi_t @ (labf * ((fbar - z) ** 2 + post.var - x_used))
        gm = np.zeros(0) if dm is None else dm @ post.alpha
        res.grad_log_z = np.concatenate([gk, gl, gm])
    return res


def infer_kl(gp, y, lik, m, dm=None, lab=None, grad=False, tol=1e-8, max_iter=200, step=0.9):
    """Direct KL minimization by damped conjugate-computation updates of Gaussian sites.

    Each iteration is one GP regression with pseudo-observation sites set from
    the derivatives of E[log p(y_i | f_i)] under the current marginals. The
    damping ``step`` is halved whenever an update gives an invalid posterior
    (a non-positive innovation factor or non-finite values) and grows back
    towards its initial value after each accepted update.
    """
    if grad:
        raise UnsupportedInferenceError(
            "KL inference has no analytic gradient; use infer(..., grad=True) for finite differences"
        )
    n = len(y)
    lab = np.ones(n, dtype=bool) if lab is None else lab
    yy = _fill_targets(lik, y, lab)
    labf = lab.astype(float)
    W = np.zeros(n)
    bnat = np.zeros(n)

    def evaluate(W, bnat):
        post = gp.posterior(W, bnat - W * m)
        if not np.all(post.var > 0):
            raise NumericalFailure("site update gave an improper posterior", step=-1)
        fbar = m + post.mean
        E, g, h = lik.kl_expect(yy, fbar, post.var)
        elbo = np.sum(labf * E) - 0.5 * (post.alpha @ post.mean + post.ld - np.sum(W * post.var))
        return post, fbar, E, g, h, elbo

    post, fbar, E, g, h, elbo = evaluate(W, bnat)
    trace = [float(elbo)]
    beta = float(step)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Wt = -labf * h
        bt = labf * (g - h * fbar)
        Wn = (1 - beta) * W + beta * Wt
        bn = (1 - beta) * bnat + beta * bt
        try:
            cand = evaluate(Wn, bn)
            ok = np.isfinite(cand[-1]) and np.all(np.isfinite(cand[0].alpha))
        except (NumericalFailure, ArithmeticError, np.linalg.LinAlgError):
            ok = False
        if not ok:
            beta *= 0.5
            if beta < 1e-6:
                raise ConvergenceError(
                    "KL site updates diverged; try a smaller damping step", trace=trace
                )
            continue
        change = max(
            np.max(np.abs(Wn - W) / (1 + np.abs(W)), initial=0.0),
            np.max(np.abs(bn - bnat) / (1 + np.abs(bnat)), initial=0.0),
        )
        W, bnat = Wn, bn
        beta = min(float(step), 1.5 * beta)
        post, fbar, E, g, h, elbo = cand
        trace.append(float(elbo))
        if change < tol:
            converged = True
            break
    rho = 0.5 * np.sum(W * post.var)
    return _result(
        "kl", post, W, bnat - W * m, elbo, m, iterations=it, converged=converged, trace=trace,
        extras={"rho_kl": float(rho), "sum_l_kl": float(np.sum(labf * E)), "step": beta},
    )


def infer_adf(gp, y, lik, m, dm=None, lab=None, grad=False):
    """Single forward sweep of moment matching (assumed density filtering).

    log Z is the sum of the per-site normalizers log z0_i obtained along the
    sweep (exact for the Gaussian likelihood).
    """
    n = len(y)
    lab = np.ones(n, dtype=bool) if lab is None else lab
    yy = _fill_targets(lik, y, lab)

    def moments(i, mu, s2, order):
        return np.array(lik.moments(yy[i], np.array(mu), np.array(s2), order), dtype=float)

    gk = gm = None
    if isinstance(gp, StateSpaceGP):
        out = gp.adf(moments, mask=lab, prior_mean=m, grad=grad, dmean=dm)
        W, b, logz0, clipped = out.W, out.b, out.logz0, out.clipped
        if grad:
            pk = gp.nparams
            gk, gm = out.grad[:pk], out.grad[pk:]
    else:
        if grad:
            raise UnsupportedInferenceError("analytic ADF gradients need the state-space backend")
        W, b, logz0, clipped = gp.adf(moments, mask=lab, prior_mean=m)
    if clipped:
        log.warning("ADF clipped %d negative site precisions to zero", int(clipped))
    post = gp.posterior(W, b)
    log_z = float(np.sum(logz0))
    res = _result(
        "adf", post, W, b, log_z, m,
        extras={
            "logz0": logz0, "clipped": int(clipped),
            "rho_adf": 0.5 * float(post.alpha @ post.mean + post.ld),
        },
    )
    if grad:
        res.grad_log_z = np.concatenate([gk, np.zeros(lik.nparams), gm if gm is not None else np.zeros(0)])
        res.extras["lik_grad_fd"] = lik.nparams > 0
    return res


_DISPATCH = {
    "exact": infer_exact,
    "laplace": infer_laplace,
    "vb": infer_vb,
    "kl": infer_kl,
    "adf": infer_adf,
}


def infer(model, t, y, scheme="auto", backend="statespace", K=None, route="kalman",
          grad=False, fd_step=1e-5, boundary="keys", **opts):
    """Run one inference scheme for ``model`` on data (t, y).

    Missing targets are given as NaN and contribute no likelihood term.
    With ``grad=True`` the KL scheme (and ADF likelihood parameters) are
    differentiated by central finite differences; this is recorded in
    ``result.extras["grad_method"]``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape:
        raise ValueError(f"t and y must have the same shape, got {t.shape} and {y.shape}")
    lik = model.likelihood
    if scheme == "auto":
        scheme = "exact" if isinstance(lik, Gaussian) else "laplace"
    if scheme not in _DISPATCH:
        raise UnsupportedInferenceError(f"unknown inference scheme '{scheme}' (choose from {SCHEMES})")
    lab = np.isfinite(y)
    lik.check(y[lab])
    gp = make_gp(model.kernel, t, backend, K, route, boundary)
    m = model.mean(t)
    dm = model.mean.grad(t)
    fn = _DISPATCH[scheme]
    analytic = grad and scheme != "kl"
    res = fn(gp, y, lik, m, dm=dm, lab=lab, grad=analytic, **opts)
    if grad:
        res.extras["grad_method"] = "analytic"
        if scheme == "kl":
            res.grad_log_z = _fd_grad(model, t, y, scheme, backend, K, route, fd_step,
                                      dict(opts, boundary=boundary), range(len(model.theta)))
            res.extras["grad_method"] = "finite-difference"
        elif scheme == "adf" and lik.nparams:
            pk = model.kernel.nparams
            idx = range(pk, pk + lik.nparams)
            res.grad_log_z[pk:pk + lik.nparams] = _fd_grad(
                model, t, y, scheme, backend, K, route, fd_step, dict(opts, boundary=boundary), idx)
            res.extras["grad_method"] = "analytic (likelihood parameters by finite differences)"
    return res


def _fd_grad(model, t, y, scheme, backend, K, route, h, opts, indices):
    theta = model.theta
    out = []
    for j in indices:
        e = np.zeros_like(theta)
        e[j] = h
        up = infer(model.with_theta(theta + e), t, y, scheme, backend, K, route, **opts).log_z
        dn = infer(model.with_theta(theta - e), t, y, scheme, backend, K, route, **opts).log_z
        out.append((up - dn) / (2 * h))
    return np.array(out)


def predict(model, t, result, t_star, backend="statespace", K=None, boundary="keys"):
    """Latent predictive mean (including the prior mean) and variance at ``t_star``."""
    t_star = np.asarray(t_star, dtype=float).reshape(-1)
    gp = make_gp(model.kernel, t, backend, K, boundary=boundary)
    mu, var = gp.predict(result.W, result.b, t_star)
    return model.mean(t_star) + mu, var


def predictive_log_density(lik, y, mu, var):
    """log int p(y | f) N(f | mu, var) df for each test point."""
    return lik.moments(np.asarray(y, dtype=float), np.asarray(mu), np.maximum(np.asarray(var), 1e-300), 0)[0]


__all__ = [
    "GPModel", "InferenceResult", "SCHEMES", "infer", "infer_exact", "infer_laplace",
    "infer_vb", "infer_kl", "infer_adf", "make_gp", "predict", "predictive_log_density",
    "Likelihood", "Mean",
]
