"""Factor-level identities read off one Kalman filter / RTS smoother pass.

For Gaussian sites with all W_i > 0 the forward filter is an innovations
decomposition of y ~ N(0, K + W^{-1}). Writing s_i = z_i / W_i for the
innovation variance and k_i = u_i / s_i for the Kalman gain, the lower
Cholesky factor of K + W^{-1} is

    L[i, i] = sqrt(s_i)
    L[i, j] = H A_{i-1} ... A_j k_j sqrt(s_j)                  (j < i)

and its inverse is

    Linv[i, i] = 1 / sqrt(s_i)
    Linv[i, j] = -H [prod_{l=i-1..j+1} A_l (I - k_l H)] A_j k_j / sqrt(s_i)

where A_j maps the state at t_j to t_{j+1}. These O(n^2) factors are meant as
test oracles; :func:`alpha_beta_recursion` gives L^{-1} r and
(K + W^{-1})^{-1} r in O(n).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class CholFactors:
    L: np.ndarray
    Linv: np.ndarray | None = None


def _innovations(fs):
    W = np.asarray(fs.W, dtype=float)
    if not np.all(fs.mask):
        raise ValueError("factor recursions need every step labeled")
    if np.any(W <= 0):
        i = int(np.argmax(W <= 0))
        raise ValueError(f"W[{i}] = {W[i]:.3g}; the noise covariance W^{{-1}} must exist")
    s = fs.z / W
    v = -fs.c / W
    return s, v


def chol_recursion(fs, trans, model, inverse=False):
    """Lower Cholesky factor of K + W^{-1} from a filter state, in O(n^2 d).

    Parameters
    ----------
    fs : FilterState
        Output of :func:`ssgp.kalman.kalman_filter` with all W_i > 0.
    trans : DiscreteTransitions
    model : StateSpaceModel
    inverse : bool
        Also build L^{-1} (see :func:`inv_chol_recursion`).
    """
    s, _ = _innovations(fs)
    n = s.shape[0]
    H = np.asarray(model.H[0], dtype=float)
    d = H.shape[0]
    sq = np.sqrt(s)
    L = np.zeros((n, n))
    X = np.zeros((d, n))
    for i in range(n):
        if i > 0:
            X[:, :i] = trans.A[i - 1] @ X[:, :i]
            L[i, :i] = H @ X[:, :i]
        L[i, i] = sq[i]
        X[:, i] = fs.k[i] * sq[i]
    return CholFactors(L, inv_chol_recursion(fs, trans, model) if inverse else None)


def inv_chol_recursion(fs, trans, model):
    """Inverse of the lower Cholesky factor of K + W^{-1}, in O(n^2 d)."""
    s, _ = _innovations(fs)
    n = s.shape[0]
    H = np.asarray(model.H[0], dtype=float)
    d = H.shape[0]
    sq = np.sqrt(s)
    Li = np.zeros((n, n))
    Y = np.zeros((d, n))
    for i in range(n):
        if i > 0:
            Li[i, :i] = -(H @ Y[:, :i]) / sq[i]
        Li[i, i] = 1.0 / sq[i]
        if i < n - 1:
            A = trans.A[i]
            k = fs.k[i]
            # Y <- A (I - k H) Y, then append the new column A k
            Y[:, :i] = A @ (Y[:, :i] - np.outer(k, H @ Y[:, :i]))
            Y[:, i] = A @ k
    return Li


def alpha_beta_recursion(fs, sm):
    """beta = L^{-1} r and alpha = (K + W^{-1})^{-1} r from filter and smoother outputs.

    Here r is the data implied by the sites, b = W r.

    Returns
    -------
    beta, alpha : ndarray
        ``beta_i = v_i / sqrt(s_i)`` with v_i the innovation, and
        ``alpha_i = gamma_i - W_i H dm_i`` with dm_i the smoother correction
        of the filtered mean (zero at the last step).
    """
    s, v = _innovations(fs)
    beta = v / np.sqrt(s)
    n = s.shape[0]
    rho = np.zeros(n)
    if n > 1:
        rho[:-1] = sm.rho[:-1]
    alpha = beta / np.sqrt(s) - fs.W * rho
    return beta, alpha
