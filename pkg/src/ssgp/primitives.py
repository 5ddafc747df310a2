"""The four computational primitives behind every inference scheme.

Given a diagonal site precision W (vector) and a prior covariance K:

* ``solve_K(W, r)``  = (K + W^{-1})^{-1} r, never forming W^{-1};
* ``mvm_K(r)``       = K r;
* ``ld_K(W)``        = log|I + W^{1/2} K W^{1/2}|;
* predictive moments at new inputs.

:class:`StateSpaceGP` realizes them in O(n) with Kalman recursions (default)
or with the sparse block-tridiagonal precision of the joint state ("spingp").
:class:`DenseGP` is the O(n^3) reference with the same interface.

Two conveniences are shared by both backends: ``solve_nat(W, b)`` =
(I + W K)^{-1} b (so ``solve_K(W, r) = solve_nat(W, W r)``), and
``posterior(W, b)`` returning alpha, the posterior latent mean K alpha and
variances diag((K^{-1} + W)^{-1}) together with ld_K(W).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

from . import kalman
from .discretize import discretize
from .linalg import BTDMatrix, btd_factor, btd_selected_inverse, btd_solve

ROUTES = ("kalman", "spingp")


@dataclass
class Posterior:
    """Gaussian posterior N(K alpha, (K^{-1} + W)^{-1}) in centered coordinates."""

    alpha: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    ld: float


def _check_times(t):
    t = np.asarray(t, dtype=float).reshape(-1)
    if not np.all(np.isfinite(t)):
        raise ValueError("input times must be finite")
    if np.any(np.diff(t) < 0):
        raise ValueError("input times must be sorted in non-decreasing order")
    return t


class StateSpaceGP:
    """O(n) primitives for a Markovian kernel on sorted 1-D inputs.

    Parameters
    ----------
    t : (n,) array_like
        Sorted input times (ties allowed).
    kernel : Kernel
    K : int, optional
        Number of interpolation nodes for (A_i, Q_i); exact discretization if None.
    route : {"kalman", "spingp"}
        Algorithm used for solve_nat and ld_K_dW. The sparse-precision route
        inverts every Q_i, so it loses accuracy when gaps are tiny relative
        to the lengthscale; ld_K always uses the filter.
    boundary : {"keys", "replicate"}
        Edge rule of the interpolation grid (only used when K is set).
    """

    def __init__(self, t, kernel, K=None, route="kalman", boundary="keys"):
        if route not in ROUTES:
            raise ValueError(f"unknown route '{route}' (choose from {ROUTES})")
        self.t = _check_times(t)
        self.kernel = kernel
        self.K = K
        self.boundary = boundary
        self.route = route
        self.model = kernel.state_space()
        self._trans = None
        self._dtrans = None
        self._derivs = None

    @property
    def n(self):
        return self.t.shape[0]

    @property
    def nparams(self):
        return self.kernel.nparams

    @property
    def derivs(self):
        if self._derivs is None:
            self._derivs = self.kernel.derivatives()
        return self._derivs

    @property
    def trans(self):
        if self._trans is None:
            if self._dtrans is not None:
                self._trans = self._dtrans
            else:
                self._trans = discretize(self.model, np.diff(self.t), self.K, boundary=self.boundary)
        return self._trans

    @property
    def dtrans(self):
        if self._dtrans is None:
            self._dtrans = discretize(self.model, np.diff(self.t), self.K, self.derivs, self.boundary)
        return self._dtrans

    # -- primitives ---------------------------------------------------------

    def mvm_K(self, r):
        return kalman.mvm_K(self.trans, self.model, r)

    def mvm_K_grad(self, r):
        """(p, n) array of dK/dtheta_j r."""
        return kalman.mvm_K_grad(self.dtrans, self.model, self.derivs, r)

    def filter(self, W, b, mask=None):
        return kalman.kalman_filter(self.trans, self.model, W, b, mask)

    def posterior(self, W, b, mask=None):
        fs = self.filter(W, b, mask)
        sm = kalman.rts_smoother(fs, self.trans, self.model)
        return Posterior(sm.alpha, sm.mean, sm.var, fs.ld)

    def _solve_once(self, W, b):
        if self.route == "spingp":
            return _SpInGP(self.trans, self.model, W).solve_nat(b)
        return self.posterior(W, b).alpha

    def solve_nat(self, W, b, refine=None):
        """(I + W K)^{-1} b.

        With negative sites the filter applies indefinite updates and loses a
        few digits, so by default one step of iterative refinement (residual
        from ``mvm_K``) is added whenever some W_i < 0, and always on the
        sparse-precision route.
        """
        W = np.asarray(W, dtype=float)
        b = np.asarray(b, dtype=float)
        alpha = self._solve_once(W, b)
        if refine is None:
            refine = 1 if (self.route == "spingp" or np.any(W < 0)) else 0
        for _ in range(int(refine)):
            res = b - alpha - W * self.mvm_K(alpha)
            alpha = alpha + self._solve_once(W, res)
        return alpha

    def solve_K(self, W, r):
        W = np.asarray(W, dtype=float)
        return self.solve_nat(W, W * np.asarray(r, dtype=float))

    def ld_K(self, W):
        W = np.asarray(W, dtype=float)
        return self.filter(W, np.zeros_like(W)).ld

    def ld_K_grad(self, W):
        """Gradient of ld_K(W) with W held fixed, w.r.t. kernel log parameters."""
        return kalman.filter_ld_grad(self.dtrans, self.model, self.derivs, W)

    def ld_K_dW(self, W):
        """d ld_K / d W_ii = diag((K^{-1} + W)^{-1})."""
        W = np.asarray(W, dtype=float)
        if self.route == "spingp":
            return _SpInGP(self.trans, self.model, W).ld_dW()
        return self.posterior(W, np.zeros_like(W)).var

    def predict(self, W, b, t_star, mask=None):
        """Posterior latent mean and variance at ``t_star`` (centered coordinates).

        Test inputs are merged into the timeline as unlabeled steps and one
        filter/smoother pass is run over the merged sequence.
        """
        t_star = np.asarray(t_star, dtype=float).reshape(-1)
        if t_star.size == 0:
            return np.empty(0), np.empty(0)
        if not np.all(np.isfinite(t_star)):
            raise ValueError("test inputs must be finite")
        n = self.n
        t_all = np.concatenate([self.t, t_star])
        order = np.argsort(t_all, kind="stable")
        W_all = np.concatenate([np.asarray(W, dtype=float), np.zeros(t_star.size)])[order]
        b_all = np.concatenate([np.asarray(b, dtype=float), np.zeros(t_star.size)])[order]
        train_mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        m_all = np.concatenate([train_mask, np.zeros(t_star.size, dtype=bool)])[order]
        trans = discretize(self.model, np.diff(t_all[order]), self.K, boundary=self.boundary)
        fs = kalman.kalman_filter(trans, self.model, W_all, b_all, m_all)
        sm = kalman.rts_smoother(fs, trans, self.model)
        where = np.empty_like(order)
        where[order] = np.arange(order.size)
        idx = where[n:]
        return sm.mean[idx], sm.var[idx]

    def adf(self, moments, mask=None, prior_mean=None, grad=False, dmean=None):
        trans = self.dtrans if grad else self.trans
        return kalman.adf_filter(
            trans, self.model, self.n, moments, mask=mask, prior_mean=prior_mean,
            derivs=self.derivs if grad else None, dmean=dmean,
        )


class _SpInGP:
    """Sparse joint-state precision R = T^T Qj^{-1} T + G^T W G (block tridiagonal).

    Blocks are indexed by step; Qj_0 = P0 and Qj_i = Q_i. A singular Q_i
    (zero gap or a state without driving noise) gets the factorization ridge.
    """

    def __init__(self, trans, model, W, ridge=1e-8):
        n = W.shape[0]
        d = model.d
        self.model, self.W, self.n, self.d = model, W, n, d
        H = model.H[0]
        Qj = np.concatenate([model.P0[None], trans.Q], axis=0)
        Qinv = np.empty_like(Qj)
        self.logdet_Q = 0.0
        for i in range(n):
            L, shift = _chol_or_ridge(Qj[i], ridge)
            Li = np.linalg.inv(L)
            Qinv[i] = Li.T @ Li
            self.logdet_Q += 2 * np.sum(np.log(np.diag(L)))
        diag = Qinv.copy()
        A = trans.A
        if n > 1:
            diag[:-1] += np.einsum("mji,mjk,mkl->mil", A, Qinv[1:], A)
        diag += W[:, None, None] * np.outer(H, H)[None]
        lower = -np.einsum("mij,mjk->mik", Qinv[1:], A) if n > 1 else np.empty((0, d, d))
        self.R = BTDMatrix(diag, lower)
        self.factor = btd_factor(self.R, ridge)

    def _G_solve(self, b):
        H = self.model.H[0]
        x = btd_solve(self.factor, (np.asarray(b, dtype=float)[:, None] * H[None]).reshape(-1))
        return x.reshape(self.n, self.d) @ H

    def solve_nat(self, b):
        return np.asarray(b, dtype=float) - self.W * self._G_solve(b)

    def ld(self):
        logdet_R = 2 * np.sum(np.log(np.diagonal(self.factor.diag, axis1=1, axis2=2)))
        return float(logdet_R + self.logdet_Q)

    def ld_dW(self):
        H = self.model.H[0]
        return np.einsum("i,nij,j->n", H, btd_selected_inverse(self.factor), H)


def _chol_or_ridge(S, ridge):
    S = 0.5 * (S + S.T)
    try:
        return np.linalg.cholesky(S), 0.0
    except np.linalg.LinAlgError:
        d = S.shape[0]
        shift = ridge * max(np.trace(S) / d, 1.0)
        return np.linalg.cholesky(S + shift * np.eye(d)), shift


class DenseGP:
    """O(n^3) reference implementation of the primitives on an explicit Gram matrix."""

    route = "dense"

    def __init__(self, t, kernel):
        self.t = np.asarray(t, dtype=float).reshape(-1)
        self.kernel = kernel
        self.Kmat = kernel.gram(self.t)
        self._dK = None

    @property
    def n(self):
        return self.t.shape[0]

    @property
    def nparams(self):
        return self.kernel.nparams

    @property
    def dK(self):
        if self._dK is None:
            self._dK = self.kernel.gram_grad(self.t)
        return self._dK

    def mvm_K(self, r):
        return self.Kmat @ np.asarray(r, dtype=float)

    def mvm_K_grad(self, r):
        return np.einsum("pij,j->pi", self.dK, np.asarray(r, dtype=float))

    def _system(self, W):
        """Factor of I + W^{1/2} K W^{1/2} (Cholesky) or of I + K W (LU) if some W < 0."""
        W = np.asarray(W, dtype=float)
        n = self.n
        if np.all(W >= 0):
            sW = np.sqrt(W)
            B = np.eye(n) + sW[:, None] * self.Kmat * sW[None, :]
            return "chol", cho_factor(B, lower=True), sW
        return "lu", lu_factor(np.eye(n) + self.Kmat * W[None, :]), None

    def _solve_once(self, W, b, fac=None):
        kind, fac, sW = fac if fac is not None else self._system(W)
        if kind == "chol":
            sWc = sW if b.ndim == 1 else sW[:, None]
            return b - sWc * cho_solve(fac, sWc * (self.Kmat @ b))
        # (I + K W)^T = I + W K
        return lu_solve(fac, b, trans=1)

    def solve_nat(self, W, b, refine=0):
        """(I + W K)^{-1} b for a vector or an (n, q) matrix b, with optional refinement steps."""
        W = np.asarray(W, dtype=float)
        b = np.asarray(b, dtype=float)
        sysf = self._system(W)
        alpha = self._solve_once(W, b, sysf)
        Wc = W if b.ndim == 1 else W[:, None]
        for _ in range(int(refine)):
            res = b - alpha - Wc * (self.Kmat @ alpha)
            alpha = alpha + self._solve_once(W, res, sysf)
        return alpha

    def solve_K(self, W, r):
        W = np.asarray(W, dtype=float)
        return self.solve_nat(W, W * np.asarray(r, dtype=float))

    def ld_K(self, W):
        kind, fac, _ = self._system(W)
        if kind == "chol":
            return float(2 * np.sum(np.log(np.diag(fac[0]))))
        # log|det|, matching the sum of log|z_i| of the forward filter
        _, ld = np.linalg.slogdet(np.eye(self.n) + self.Kmat * np.asarray(W)[None, :])
        return float(ld)

    def _cov_solve(self, W):
        """(I + K W)^{-1} K = (K^{-1} + W)^{-1}."""
        kind, fac, sW = self._system(W)
        if kind == "chol":
            V = cho_solve(fac, sW[:, None] * self.Kmat)
            return self.Kmat - (self.Kmat * sW[None, :]) @ V
        return lu_solve(fac, self.Kmat)

    def ld_K_dW(self, W):
        return np.diag(self._cov_solve(W)).copy()

    def ld_K_grad(self, W):
        W = np.asarray(W, dtype=float)
        # d log|I + K W| = tr((I + K W)^{-1} dK W)
        kind, fac, sW = self._system(W)
        if kind == "chol":
            M = sW[:, None] * cho_solve(fac, np.diag(sW))
        else:
            M = W[:, None] * lu_solve(fac, np.eye(self.n))
        return np.einsum("pij,ji->p", self.dK, M)

    def posterior(self, W, b, mask=None):
        W = np.asarray(W, dtype=float)
        b = np.asarray(b, dtype=float)
        if mask is not None:
            W = np.where(mask, W, 0.0)
            b = np.where(mask, b, 0.0)
        alpha = self.solve_nat(W, b)
        return Posterior(alpha, self.Kmat @ alpha, self.ld_K_dW(W), self.ld_K(W))

    def predict(self, W, b, t_star, mask=None):
        t_star = np.asarray(t_star, dtype=float).reshape(-1)
        if t_star.size == 0:
            return np.empty(0), np.empty(0)
        W = np.asarray(W, dtype=float)
        b = np.asarray(b, dtype=float)
        if mask is not None:
            W = np.where(mask, W, 0.0)
            b = np.where(mask, b, 0.0)
        Ks = self.kernel.gram(t_star, self.t)
        alpha = self.solve_nat(W, b)
        kss = self.kernel(np.zeros(t_star.size))
        # k*^T (K + W^{-1})^{-1} k* = k*^T (I + W K)^{-1} W k*
        V = self.solve_nat(W, W[:, None] * Ks.T)
        var = kss - np.einsum("ij,ji->i", Ks, V)
        return Ks @ alpha, var

    def adf(self, moments, mask=None, prior_mean=None):
        """Sequential rank-one moment matching on the full posterior covariance."""
        n = self.n
        mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        mean0 = np.zeros(n) if prior_mean is None else np.asarray(prior_mean, dtype=float)
        mu = np.zeros(n)
        S = self.Kmat.copy()
        W = np.zeros(n)
        b = np.zeros(n)
        logz0 = np.zeros(n)
        clipped = 0
        for i in range(n):
            if not mask[i]:
                continue
            s2 = S[i, i]
            lz, L1, L2 = moments(i, mu[i] + mean0[i], s2, 2)[:3]
            logz0[i] = lz
            col = S[:, i].copy()
            keep = 1.0 + s2 * L2 > 0 and L2 <= 0
            if keep:
                W[i] = -L2 / (1.0 + s2 * L2)
                S += L2 * np.outer(col, col)
            else:
                clipped += 1
            b[i] = W[i] * mu[i] + L1 * (1.0 + W[i] * s2)
            mu += L1 * col
        return W, b, logz0, clipped


def gpr_dense(K, y, m, sn2, Ks=None, kss=None):
    """Cholesky-based GP regression: alpha, log Z and optional predictive moments.

    Parameters
    ----------
    K : (n, n) prior covariance at the training inputs.
    y, m : (n,) targets and prior mean.
    sn2 : float
        Noise variance.
    Ks : (n, q) cross-covariance to test inputs, optional.
    kss : (q,) prior variances at test inputs, optional.
    """
    n = len(y)
    L = np.linalg.cholesky(K + sn2 * np.eye(n))
    r = np.asarray(y, dtype=float) - np.asarray(m, dtype=float)
    alpha = cho_solve((L, True), r)
    log_z = -0.5 * r @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi)
    if Ks is None:
        return alpha, log_z
    mu = Ks.T @ alpha
    V = np.linalg.solve(L, Ks)
    var = kss - np.sum(V * V, axis=0)
    return alpha, log_z, mu, var
