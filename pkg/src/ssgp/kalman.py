"""Kalman filtering, RTS smoothing and related O(n) state-space recursions.

All recursions run in centered coordinates: the prior mean function has been
subtracted, so the state starts at m = 0 with covariance P0. Site
parameters are the natural parameters (b, W) of Gaussian pseudo-likelihoods
exp(b f - W f^2 / 2) in those coordinates.

Step i uses the transition ``A[i-1], Q[i-1]`` from step i-1 (i >= 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._jit import njit
from .errors import NumericalFailure

SMOOTHER_JITTER = 1e-13


@dataclass
class FilterState:
    """Per-step quantities of the forward filter.

    ``m_pred``/``P_pred`` are the predicted (prior-to-update) moments and
    ``m``/``P`` the filtered ones. ``u = P_pred H^T``, ``k = W u / z``.
    """

    m: np.ndarray
    P: np.ndarray
    m_pred: np.ndarray
    P_pred: np.ndarray
    u: np.ndarray
    k: np.ndarray
    z: np.ndarray
    c: np.ndarray
    gamma: np.ndarray
    ld: float
    W: np.ndarray
    b: np.ndarray
    mask: np.ndarray

    @property
    def n(self):
        return self.z.shape[0]

    @property
    def positive_definite(self):
        """All innovation factors positive, which certifies K^{-1} + W > 0."""
        return bool(np.all(self.z > 0))


@dataclass
class SmootherState:
    """Smoothed state moments plus the posterior representer weights alpha."""

    m: np.ndarray
    P: np.ndarray
    dm: np.ndarray
    rho: np.ndarray
    alpha: np.ndarray
    mean: np.ndarray
    var: np.ndarray


@njit
def _filter(A, Q, H, P0, W, b, mask):
    n = W.shape[0]
    d = P0.shape[0]
    m = np.zeros((n, d))
    P = np.zeros((n, d, d))
    mp = np.zeros((n, d))
    Pp = np.zeros((n, d, d))
    u_all = np.zeros((n, d))
    k_all = np.zeros((n, d))
    z = np.ones(n)
    c = np.zeros(n)
    gamma = np.zeros(n)
    ld = 0.0
    fail = -1
    mi = np.zeros(d)
    Pi = P0.copy()
    for i in range(n):
        if i > 0:
            Ai = A[i - 1]
            mi = Ai @ m[i - 1]
            Pi = Ai @ P[i - 1] @ Ai.T + Q[i - 1]
        mp[i] = mi
        Pp[i] = Pi
        if mask[i]:
            mu = 0.0
            for a in range(d):
                mu += H[a] * mi[a]
            u = Pi @ H
            s2 = 0.0
            for a in range(d):
                s2 += H[a] * u[a]
            zi = W[i] * s2 + 1.0
            if not (abs(zi) > 1e-12):
                fail = i
                break
            ci = W[i] * mu - b[i]
            ki = W[i] * u / zi
            gi = -ci / zi
            Pi = Pi - np.outer(ki, u)
            Pi = 0.5 * (Pi + Pi.T)
            mi = mi + gi * u
            z[i] = zi
            c[i] = ci
            gamma[i] = gi
            u_all[i] = u
            k_all[i] = ki
            ld += np.log(abs(zi))
        m[i] = mi
        P[i] = Pi
    return m, P, mp, Pp, u_all, k_all, z, c, gamma, ld, fail


@njit
def _smoother(A, m_f, P_f, mp, Pp, H):
    n, d = m_f.shape
    m = m_f.copy()
    P = P_f.copy()
    dm = np.zeros((n, d))
    rho = np.zeros(n)
    eye = np.eye(d)
    for i in range(n - 1, 0, -1):
        Ai = A[i - 1]
        Ppred = Pp[i]
        jitter = SMOOTHER_JITTER * max(np.trace(Ppred) / d, 1e-300)
        # G = P_{i-1} A^T Ppred^{-1}, computed as solve(Ppred, A P_{i-1})^T
        G = np.linalg.solve(Ppred + jitter * eye, Ai @ P_f[i - 1]).T
        delta = G @ (m[i] - mp[i])
        Pn = P_f[i - 1] + G @ (P[i] - Ppred) @ G.T
        P[i - 1] = 0.5 * (Pn + Pn.T)
        m[i - 1] = m_f[i - 1] + delta
        dm[i - 1] = delta
        r = 0.0
        for a in range(d):
            r += H[a] * delta[a]
        rho[i - 1] = r
    return m, P, dm, rho


@njit
def _ld_grad(A, Q, dA, dQ, H, P0, dP0, W, mask):
    n = W.shape[0]
    p = dA.shape[0]
    d = P0.shape[0]
    grad = np.zeros(p)
    for j in range(p):
        Pi = P0.copy()
        dPi = dP0[j].copy()
        dAj = np.ascontiguousarray(dA[j])
        for i in range(n):
            if i > 0:
                Ai = A[i - 1]
                dAi = dAj[i - 1]
                t = dAi @ Pi @ Ai.T
                dPi = t + t.T + Ai @ dPi @ Ai.T + dQ[j, i - 1]
                Pi = Ai @ Pi @ Ai.T + Q[i - 1]
            if mask[i] and W[i] != 0.0:
                u = Pi @ H
                du = dPi @ H
                s2 = 0.0
                ds2 = 0.0
                for a in range(d):
                    s2 += H[a] * u[a]
                    ds2 += H[a] * du[a]
                zi = W[i] * s2 + 1.0
                dz = W[i] * ds2
                grad[j] += dz / zi
                dPi = dPi - W[i] * (np.outer(du, u) + np.outer(u, du)) / zi + W[i] * dz / (zi * zi) * np.outer(u, u)
                Pi = Pi - W[i] * np.outer(u, u) / zi
                Pi = 0.5 * (Pi + Pi.T)
                dPi = 0.5 * (dPi + dPi.T)
    return grad


@njit
def _mvm(A, Q, H, P0, r):
    # K r = G T^{-1} Qj T^{-T} G^T r with T unit lower block-bidiagonal (-A off-diagonal)
    n = r.shape[0]
    d = P0.shape[0]
    y = np.zeros((n, d))
    y[n - 1] = H * r[n - 1]
    for i in range(n - 2, -1, -1):
        y[i] = H * r[i] + A[i].T @ y[i + 1]
    out = np.zeros(n)
    v = P0 @ y[0]
    out[0] = H @ v
    for i in range(1, n):
        v = A[i - 1] @ v + Q[i - 1] @ y[i]
        out[i] = H @ v
    return out


@njit
def _mvm_grad(A, Q, dA, dQ, H, P0, dP0, r):
    n = r.shape[0]
    d = P0.shape[0]
    p = dA.shape[0]
    y = np.zeros((n, d))
    y[n - 1] = H * r[n - 1]
    for i in range(n - 2, -1, -1):
        y[i] = H * r[i] + A[i].T @ y[i + 1]
    v = np.zeros((n, d))
    v[0] = P0 @ y[0]
    for i in range(1, n):
        v[i] = A[i - 1] @ v[i - 1] + Q[i - 1] @ y[i]
    out = np.zeros((p, n))
    for j in range(p):
        # e_i = dA_{i+1}^T y_{i+1}; c = Qj T^{-T} e
        g = np.zeros((n, d))
        dAj = np.ascontiguousarray(dA[j])
        dQj = np.ascontiguousarray(dQ[j])
        for i in range(n - 2, -1, -1):
            g[i] = dAj[i].T @ y[i + 1] + A[i].T @ g[i + 1]
        # total = dT-terms + dQ y + Qj g, then apply T^{-1} and G
        w = dP0[j] @ y[0] + P0 @ g[0]
        out[j, 0] = H @ w
        for i in range(1, n):
            w = A[i - 1] @ w + dAj[i - 1] @ v[i - 1] + dQj[i - 1] @ y[i] + Q[i - 1] @ g[i]
            out[j, i] = H @ w
    return out


def _as_mask(mask, n):
    if mask is None:
        return np.ones(n, dtype=np.bool_)
    mask = np.asarray(mask, dtype=np.bool_)
    if mask.shape != (n,):
        raise ValueError(f"label mask has shape {mask.shape}, expected ({n},)")
    return mask


def _hvec(model):
    return np.ascontiguousarray(model.H[0], dtype=float)


def kalman_filter(trans, model, W, b, mask=None):
    """Forward filter with Gaussian sites (W, b).

    Returns a FilterState whose ``ld`` equals log|det(I + W K)| restricted to
    labeled steps. Negative sites (W_i < 0) are allowed; the updates are then
    indefinite rank-one corrections and some z_i may be negative.

    Raises
    ------
    NumericalFailure
        If an innovation factor z_i = W_i sigma_i^2 + 1 vanishes or is not finite.
    """
    W = np.ascontiguousarray(W, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    n = W.shape[0]
    mask = _as_mask(mask, n)
    if trans.A.shape[0] != max(n - 1, 0):
        raise ValueError(f"{trans.A.shape[0]} transitions for {n} steps")
    m, P, mp, Pp, u, k, z, c, gamma, ld, fail = _filter(
        trans.A, trans.Q, _hvec(model), np.ascontiguousarray(model.P0), W, b, mask
    )
    if fail >= 0:
        raise NumericalFailure(
            f"singular innovation factor at step {fail} (W = {W[fail]:.3g})", step=int(fail)
        )
    return FilterState(m, P, mp, Pp, u, k, z, c, gamma, float(ld), W, b, mask)


def rts_smoother(fs, trans, model):
    """Backward RTS pass; returns smoothed moments and alpha = gamma - W rho."""
    if fs.n == 0:
        e = np.empty(0)
        return SmootherState(fs.m, fs.P, fs.m.copy(), e, e, e, e)
    H = _hvec(model)
    m, P, dm, rho = _smoother(trans.A, fs.m, fs.P, fs.m_pred, fs.P_pred, H)
    alpha = np.where(fs.mask, fs.gamma - fs.W * rho, 0.0)
    mean = m @ H
    var = np.einsum("i,nij,j->n", H, P, H)
    return SmootherState(m, P, dm, rho, alpha, mean, var)


def filter_ld_grad(trans, model, derivs, W, mask=None):
    """Gradient of ld = sum log z_i with respect to the kernel's log parameters."""
    if not trans.has_derivatives:
        raise ValueError("transitions carry no parameter derivatives")
    W = np.ascontiguousarray(W, dtype=float)
    n = W.shape[0]
    if n == 0:
        return np.zeros(derivs.nparams)
    return _ld_grad(
        trans.A, trans.Q, trans.dA, trans.dQ, _hvec(model),
        np.ascontiguousarray(model.P0), np.ascontiguousarray(derivs.dPinf), W, _as_mask(mask, n),
    )


def mvm_K(trans, model, r):
    """Prior covariance times vector(s) in O(n d^2)."""
    r = np.asarray(r, dtype=float)
    if r.shape[0] == 0:
        return r.copy()
    H, P0 = _hvec(model), np.ascontiguousarray(model.P0)
    if r.ndim == 1:
        return _mvm(trans.A, trans.Q, H, P0, np.ascontiguousarray(r))
    return np.stack([_mvm(trans.A, trans.Q, H, P0, np.ascontiguousarray(c)) for c in r.T], axis=1)


def mvm_K_grad(trans, model, derivs, r):
    """``dK/dtheta_j @ r`` for every kernel parameter; returns a (p, n) array."""
    if not trans.has_derivatives:
        raise ValueError("transitions carry no parameter derivatives")
    r = np.ascontiguousarray(r, dtype=float)
    if r.shape[0] == 0:
        return np.zeros((derivs.nparams, 0))
    return _mvm_grad(
        trans.A, trans.Q, trans.dA, trans.dQ, _hvec(model),
        np.ascontiguousarray(model.P0), np.ascontiguousarray(derivs.dPinf), r,
    )


# ---------------------------------------------------------------------------
# Assumed density filtering
# ---------------------------------------------------------------------------


@dataclass
class ADFResult:
    """Sites and normalizers from a single moment-matching forward sweep."""

    W: np.ndarray
    b: np.ndarray
    logz0: np.ndarray
    filter: FilterState
    clipped: int
    grad: np.ndarray | None = None


def adf_filter(trans, model, n, moments, mask=None, prior_mean=None, derivs=None, dmean=None):
    """One forward sweep that sets each site by matching tilted moments.

    Parameters
    ----------
    moments : callable
        ``moments(i, mu, s2, order)`` returns ``(logZ, L1, ..., L_order)``, the
        derivatives of ``log int p(y_i | f) N(f | mu, s2) df`` with respect to
        ``mu``. ``mu`` is on the original (uncentered) scale.
    prior_mean : (n,) array, optional
        Prior mean m(t_i); the state itself is centered.
    derivs : ModelDerivatives, optional
        If given together with transition derivatives, the gradient of
        ``sum log z0`` with respect to kernel parameters (then mean
        parameters via ``dmean``, shape (q, n)) is propagated in forward mode.
    """
    if trans.A.shape[0] != max(n - 1, 0):
        raise ValueError(f"{trans.A.shape[0]} transitions for {n} steps")
    mask = _as_mask(mask, n)
    H = _hvec(model)
    d = model.d
    mean0 = np.zeros(n) if prior_mean is None else np.asarray(prior_mean, dtype=float)
    want_grad = derivs is not None
    if want_grad and not trans.has_derivatives:
        raise ValueError("transitions carry no parameter derivatives")
    pk = derivs.nparams if want_grad else 0
    dmean = np.zeros((0, n)) if dmean is None else np.atleast_2d(np.asarray(dmean, dtype=float))
    ptot = pk + (dmean.shape[0] if want_grad else 0)

    W = np.zeros(n)
    b = np.zeros(n)
    logz0 = np.zeros(n)
    clipped = 0
    m = np.zeros(d)
    P = np.array(model.P0, dtype=float)
    if want_grad:
        dm = np.zeros((ptot, d))
        dP = np.zeros((ptot, d, d))
        dP[:pk] = derivs.dPinf
        grad = np.zeros(ptot)
    for i in range(n):
        if i > 0:
            Ai, Qi = trans.A[i - 1], trans.Q[i - 1]
            if want_grad:
                for j in range(pk):
                    dAi = trans.dA[j, i - 1]
                    t = dAi @ P @ Ai.T
                    dP[j] = t + t.T + Ai @ dP[j] @ Ai.T + trans.dQ[j, i - 1]
                    dm[j] = dAi @ m + Ai @ dm[j]
                for j in range(pk, ptot):
                    dP[j] = Ai @ dP[j] @ Ai.T
                    dm[j] = Ai @ dm[j]
            m = Ai @ m
            P = Ai @ P @ Ai.T + Qi
        if not mask[i]:
            continue
        u = P @ H
        s2 = float(H @ u)
        mu_c = float(H @ m)
        if not s2 > 0:
            raise NumericalFailure(f"non-positive cavity variance at step {i}", step=i)
        out = moments(i, mu_c + mean0[i], s2, 4 if want_grad else 2)
        if not np.all(np.isfinite(out)):
            raise NumericalFailure(f"moment matching failed at step {i}", step=i)
        lz, L1, L2 = out[0], out[1], out[2]
        logz0[i] = lz
        keep = 1.0 + s2 * L2 > 0 and L2 <= 0
        if keep:
            Wi = -L2 / (1.0 + s2 * L2)
        else:
            Wi = 0.0
            clipped += 1
        # post mean mu_c + s2 L1 in natural form: b = mean_post/var_post - mu/s2
        bi = Wi * mu_c + L1 * (1.0 + Wi * s2)
        W[i], b[i] = Wi, bi
        if want_grad:
            L3, L4 = out[3], out[4]
            du = dP @ H  # (ptot, d)
            dmu = dm @ H
            dmu[pk:] += dmean[:, i]
            ds2 = du @ H
            # d/ds2 of log Z is (L2 + L1^2) / 2 since Z solves the heat equation in (mu, s2)
            grad += L1 * dmu + 0.5 * (L2 + L1 * L1) * ds2
            dL1 = L2 * dmu + 0.5 * (L3 + 2 * L1 * L2) * ds2
            dm = dm + np.outer(dL1, u) + L1 * du
            if keep:
                dL2 = L3 * dmu + 0.5 * (L4 + 2 * L2 * L2 + 2 * L1 * L3) * ds2
                uu = np.outer(u, u)
                dP = dP + dL2[:, None, None] * uu + L2 * (
                    np.einsum("pa,b->pab", du, u) + np.einsum("a,pb->pab", u, du)
                )
                dP = 0.5 * (dP + np.swapaxes(dP, 1, 2))
        m = m + L1 * u
        if keep:
            P = P + L2 * np.outer(u, u)
            P = 0.5 * (P + P.T)
    fs = kalman_filter(trans, model, W, b, mask)
    return ADFResult(W, b, logz0, fs, clipped, grad if want_grad else None)
