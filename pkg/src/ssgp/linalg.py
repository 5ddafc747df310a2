"""Small dense kernels and block-tridiagonal (BTD) linear algebra.

Everything here works on d x d blocks with d the state dimension (typically
1 to 6), so the cost of a BTD operation is O(n d^3).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from ._jit import njit
from .errors import FactorizationError, NoStationarySolutionError

# Pade(13) coefficients and the scaling threshold from Higham (2005).
_PADE13 = np.array(
    [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ]
)
_THETA13 = 5.371920351148152


@njit
def _expm_kernel(X):
    d = X.shape[0]
    norm = 0.0
    for j in range(d):
        col = 0.0
        for i in range(d):
            col += abs(X[i, j])
        if col > norm:
            norm = col
    if norm == 0.0:
        return np.eye(d)
    squarings = 0
    if norm > _THETA13:
        squarings = int(np.ceil(np.log2(norm / _THETA13)))
    Xs = X / 2.0**squarings
    b = _PADE13
    eye = np.eye(d)
    X2 = Xs @ Xs
    X4 = X2 @ X2
    X6 = X4 @ X2
    U = Xs @ (X6 @ (b[13] * X6 + b[11] * X4 + b[9] * X2) + b[7] * X6 + b[5] * X4 + b[3] * X2 + b[1] * eye)
    V = X6 @ (b[12] * X6 + b[10] * X4 + b[8] * X2) + b[6] * X6 + b[4] * X4 + b[2] * X2 + b[0] * eye
    E = np.ascontiguousarray(np.linalg.solve(V - U, V + U))
    for _ in range(squarings):
        E = E @ E
    return E


@njit
def _expm_batch(dts, F):
    m = dts.shape[0]
    d = F.shape[0]
    out = np.empty((m, d, d))
    for i in range(m):
        out[i] = _expm_kernel(dts[i] * F)
    return out


@njit
def _expm_deriv_batch(dts, F, dF):
    # exp([[X, 0], [dX, X]]) = [[e^X, 0], [d e^X, e^X]] with X = dt F, dX = dt dF
    m = dts.shape[0]
    p = dF.shape[0]
    d = F.shape[0]
    A = np.empty((m, d, d))
    dA = np.empty((p, m, d, d))
    big = np.zeros((2 * d, 2 * d))
    for i in range(m):
        X = dts[i] * F
        if p == 0:
            A[i] = _expm_kernel(X)
        for k in range(p):
            big[:d, :d] = X
            big[d:, d:] = X
            big[d:, :d] = dts[i] * dF[k]
            E = _expm_kernel(big)
            if k == 0:
                A[i] = E[:d, :d]
            dA[k, i] = E[d:, :d]
    return A, dA


def expm(X):
    """Matrix exponential by scaling and squaring with a Pade(13) approximant.

    Parameters
    ----------
    X : (d, d) array_like
        Finite square matrix.

    Returns
    -------
    (d, d) ndarray
    """
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError(f"expm needs a square matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("expm input has non-finite entries")
    return _expm_kernel(X)


def expm_deriv(X, dX):
    """Return ``(exp(X), D)`` where D is the directional derivative of exp at X along dX.

    Uses the block identity exp([[X, 0], [dX, X]]) = [[exp X, 0], [D, exp X]].
    """
    X = np.asarray(X, dtype=float)
    dX = np.asarray(dX, dtype=float)
    if X.shape != dX.shape:
        raise ValueError(f"shape mismatch: {X.shape} vs {dX.shape}")
    d = X.shape[0]
    big = np.zeros((2 * d, 2 * d))
    big[:d, :d] = X
    big[d:, d:] = X
    big[d:, :d] = dX
    E = expm(big)
    return E[:d, :d].copy(), E[d:, :d].copy()


def expm_batch(dts, F):
    """``exp(dt F)`` for every dt in ``dts``; returns an (m, d, d) array."""
    dts = np.ascontiguousarray(dts, dtype=float)
    F = np.ascontiguousarray(F, dtype=float)
    if dts.size == 0:
        return np.empty((0,) + F.shape)
    return _expm_batch(dts, F)


def expm_deriv_batch(dts, F, dF):
    """``exp(dt F)`` and its derivatives for F's parameter derivatives ``dF`` (p, d, d).

    Returns ``A`` of shape (m, d, d) and ``dA`` of shape (p, m, d, d).
    """
    dts = np.ascontiguousarray(dts, dtype=float)
    F = np.ascontiguousarray(F, dtype=float)
    dF = np.ascontiguousarray(dF, dtype=float).reshape((-1,) + F.shape)
    if dts.size == 0:
        return np.empty((0,) + F.shape), np.empty((dF.shape[0], 0) + F.shape)
    return _expm_deriv_batch(dts, F, dF)


def lyapunov_solve(F, Sigma):
    """Solve ``F P + P F^T + Sigma = 0`` for the stationary covariance P.

    Raises
    ------
    NoStationarySolutionError
        If F has an eigenvalue with non-negative real part.
    """
    F = np.asarray(F, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    d = F.shape[0]
    eig = np.linalg.eigvals(F)
    if np.any(eig.real >= 0.0):
        raise NoStationarySolutionError(
            f"feedback matrix is not Hurwitz (max Re(eig) = {eig.real.max():.3g})"
        )
    eye = np.eye(d)
    # row-major vec: vec(F P) = (F kron I) vec(P), vec(P F^T) = (I kron F) vec(P)
    op = np.kron(F, eye) + np.kron(eye, F)
    P = np.linalg.solve(op, -Sigma.reshape(-1)).reshape(d, d)
    return 0.5 * (P + P.T)


# ---------------------------------------------------------------------------
# Symmetric block-tridiagonal matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BTDMatrix:
    """Symmetric block-tridiagonal matrix.

    ``diag[i]`` is block (i, i) for i = 0..n and ``lower[i]`` is block
    (i + 1, i) for i = 0..n-1; the upper blocks are their transposes.
    """

    diag: np.ndarray
    lower: np.ndarray

    def __post_init__(self):
        if self.diag.ndim != 3 or self.diag.shape[1] != self.diag.shape[2]:
            raise ValueError("diag blocks must have shape (n+1, d, d)")
        if self.lower.shape != (self.diag.shape[0] - 1,) + self.diag.shape[1:]:
            raise ValueError("lower blocks must have shape (n, d, d)")

    @property
    def nblocks(self):
        return self.diag.shape[0]

    @property
    def block_size(self):
        return self.diag.shape[1]

    def todense(self):
        nb, d = self.nblocks, self.block_size
        M = np.zeros((nb * d, nb * d))
        for i in range(nb):
            M[i * d:(i + 1) * d, i * d:(i + 1) * d] = self.diag[i]
        for i in range(nb - 1):
            M[(i + 1) * d:(i + 2) * d, i * d:(i + 1) * d] = self.lower[i]
            M[i * d:(i + 1) * d, (i + 1) * d:(i + 2) * d] = self.lower[i].T
        return M

    def matvec(self, x):
        X = np.asarray(x, dtype=float).reshape(self.nblocks, self.block_size)
        out = np.einsum("ijk,ik->ij", self.diag, X)
        out[1:] += np.einsum("ijk,ik->ij", self.lower, X[:-1])
        out[:-1] += np.einsum("ikj,ik->ij", self.lower, X[1:])
        return out.reshape(-1)


@dataclass(frozen=True)
class BTDFactor:
    """Block Cholesky factor ``M = L L^T`` with L block lower-bidiagonal.

    ``diag[i]`` are lower-triangular Cholesky blocks, ``lower[i]`` is block
    (i + 1, i) of L, and ``ridge[i]`` is the diagonal shift that was needed
    to factor block i (zero when none).
    """

    diag: np.ndarray
    lower: np.ndarray
    ridge: np.ndarray

    @property
    def nblocks(self):
        return self.diag.shape[0]

    @property
    def block_size(self):
        return self.diag.shape[1]

    def todense(self):
        nb, d = self.nblocks, self.block_size
        L = np.zeros((nb * d, nb * d))
        for i in range(nb):
            L[i * d:(i + 1) * d, i * d:(i + 1) * d] = self.diag[i]
        for i in range(nb - 1):
            L[(i + 1) * d:(i + 2) * d, i * d:(i + 1) * d] = self.lower[i]
        return L


def _chol_with_ridge(S, index, ridge_scale):
    d = S.shape[0]
    S = 0.5 * (S + S.T)
    try:
        return np.linalg.cholesky(S), 0.0
    except np.linalg.LinAlgError:
        pass
    shift = ridge_scale * max(np.trace(S) / d, np.finfo(float).tiny)
    try:
        return np.linalg.cholesky(S + shift * np.eye(d)), shift
    except np.linalg.LinAlgError:
        raise FactorizationError(
            f"block {index} is not positive definite even after a ridge of {shift:.3g}",
            block=index,
        ) from None


def btd_factor(M, ridge=1e-8):
    """Block-Cholesky (block Thomas) factorization of a symmetric BTD matrix.

    A block that fails to factor is retried once with ``ridge * trace/d``
    added to its diagonal.

    Raises
    ------
    FactorizationError
        Names the first block that could not be factored.
    """
    nb, d = M.nblocks, M.block_size
    Ld = np.empty_like(M.diag)
    C = np.empty_like(M.lower)
    shifts = np.zeros(nb)
    Ld[0], shifts[0] = _chol_with_ridge(M.diag[0], 0, ridge)
    for i in range(1, nb):
        # C_i = M_{i,i-1} L_{i-1}^{-T}
        C[i - 1] = solve_triangular(Ld[i - 1], M.lower[i - 1].T, lower=True).T
        S = M.diag[i] - C[i - 1] @ C[i - 1].T
        Ld[i], shifts[i] = _chol_with_ridge(S, i, ridge)
    return BTDFactor(Ld, C, shifts)


def btd_solve(factor, r):
    """Solve ``M x = r`` given ``factor = btd_factor(M)``."""
    nb, d = factor.nblocks, factor.block_size
    r = np.asarray(r, dtype=float)
    if r.shape[0] != nb * d:
        raise ValueError(f"right-hand side has length {r.shape[0]}, expected {nb * d}")
    tail = r.shape[1:]
    R = r.reshape((nb, d) + tail)
    y = np.empty_like(R)
    y[0] = solve_triangular(factor.diag[0], R[0], lower=True)
    for i in range(1, nb):
        y[i] = solve_triangular(factor.diag[i], R[i] - factor.lower[i - 1] @ y[i - 1], lower=True)
    x = np.empty_like(R)
    x[-1] = solve_triangular(factor.diag[-1], y[-1], lower=True, trans="T")
    for i in range(nb - 2, -1, -1):
        x[i] = solve_triangular(
            factor.diag[i], y[i] - factor.lower[i].T @ x[i + 1], lower=True, trans="T"
        )
    return x.reshape(r.shape)


def btd_selected_inverse(factor):
    """Diagonal blocks of ``M^{-1}`` by the backward selected-inversion recurrence.

    Returns an (n+1, d, d) array.
    """
    nb, d = factor.nblocks, factor.block_size
    eye = np.eye(d)
    out = np.empty_like(factor.diag)
    Linv = solve_triangular(factor.diag[-1], eye, lower=True)
    out[-1] = Linv.T @ Linv
    for i in range(nb - 2, -1, -1):
        Linv = solve_triangular(factor.diag[i], eye, lower=True)
        Y = factor.lower[i] @ Linv
        S = Linv.T @ Linv + Y.T @ out[i + 1] @ Y
        out[i] = 0.5 * (S + S.T)
    return out
