"""Discrete-time transitions (A_i, Q_i) between consecutive time stamps.

For a stationary model A(dt) = exp(dt F) and Q(dt) = Pinf - A Pinf A^T.
Both are smooth in dt, so for many distinct gaps they can be tabulated on an
equispaced grid and evaluated with 4-point cubic convolution (Keys kernel,
a = -1/2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import expm_batch, expm_deriv_batch

LYAPUNOV_TOL = 1e-10
DEDUP_RTOL = 1e-12
KEYS_A = -0.5


@dataclass
class DiscreteTransitions:
    """Per-gap transition matrices.

    Attributes
    ----------
    dts : (m,) ndarray
        Gaps between consecutive time stamps.
    A, Q : (m, d, d) ndarray
        Transition and process-noise matrices.
    dA, dQ : (p, m, d, d) ndarray or None
        Derivatives with respect to the kernel's log parameters.
    mode : str
        ``"exact"`` or ``"interpolated(K)"``.
    """

    dts: np.ndarray
    A: np.ndarray
    Q: np.ndarray
    dA: np.ndarray | None = None
    dQ: np.ndarray | None = None
    mode: str = "exact"

    @property
    def has_derivatives(self):
        return self.dA is not None


@dataclass
class InterpGrid:
    """Tabulated A(s), Q(s) at s_j = s0 + j ds, j = 0..K-1.

    ``A``/``Q`` (and ``dA``/``dQ``) hold K + 2 entries: the K nodes plus one
    extrapolated ghost node at each end, so every cell has 4 neighbours.
    A degenerate grid (all gaps equal) has ``ds == 0`` and no tables.
    """

    s0: float
    ds: float
    K: int
    model: object
    derivs: object
    A: np.ndarray | None
    Q: np.ndarray | None
    dA: np.ndarray | None = None
    dQ: np.ndarray | None = None

    @property
    def s_end(self):
        return self.s0 + (self.K - 1) * self.ds

    @property
    def nodes(self):
        return self.s0 + self.ds * np.arange(self.K)


def _check_gaps(dts):
    dts = np.asarray(dts, dtype=float).reshape(-1)
    if not np.all(np.isfinite(dts)):
        raise ValueError("time gaps must be finite")
    if np.any(dts < 0):
        i = int(np.argmax(dts < 0))
        raise ValueError(f"negative gap {dts[i]:.3g} at position {i}; time stamps must be sorted")
    return dts


def _check_model(model):
    if model.lyapunov_residual() > LYAPUNOV_TOL:
        raise ValueError(
            "model does not satisfy the stationary Lyapunov equation; "
            "the identity Q = P0 - A P0 A^T would be invalid"
        )


def _noise_from_identity(model, A):
    P = model.Pinf
    Q = P - np.einsum("mij,jk,mlk->mil", A, P, A)
    return 0.5 * (Q + np.swapaxes(Q, -1, -2))


def _noise_deriv(model, derivs, A, dA):
    P = model.Pinf
    AP = np.einsum("mij,jk->mik", A, P)
    dQ = np.empty_like(dA)
    for k in range(dA.shape[0]):
        t1 = np.einsum("mij,mlj->mil", dA[k], AP)
        t2 = np.einsum("mij,jk,mlk->mil", A, derivs.dPinf[k], A)
        dQ[k] = derivs.dPinf[k] - t1 - np.swapaxes(t1, -1, -2) - t2
    return 0.5 * (dQ + np.swapaxes(dQ, -1, -2))


def _exact(model, gaps, derivs):
    """A, Q (and derivatives) at every gap, no deduplication."""
    if derivs is None:
        A = expm_batch(gaps, model.F)
        return A, _noise_from_identity(model, A), None, None
    A, dA = expm_deriv_batch(gaps, model.F, derivs.dF)
    return A, _noise_from_identity(model, A), dA, _noise_deriv(model, derivs, A, dA)


def _dedupe(dts):
    """Group gaps equal to within DEDUP_RTOL; returns (representatives, inverse index)."""
    order = np.argsort(dts, kind="stable")
    g = dts[order]
    inverse = np.empty(len(dts), dtype=np.int64)
    reps = []
    start = None
    for pos, value in zip(order, g):
        if start is None or value - start > DEDUP_RTOL * max(abs(start), 1e-300):
            start = value
            reps.append(value)
        inverse[pos] = len(reps) - 1
    return np.array(reps), inverse


def discretize_exact(model, dts, derivs=None):
    """Exact discretization ``A_i = exp(dt_i F)``, ``Q_i = Pinf - A_i Pinf A_i^T``.

    Gaps equal to within a relative tolerance of 1e-12 share one matrix
    exponential. Pass ``derivs`` (a ModelDerivatives) to also get dA, dQ.
    """
    _check_model(model)
    dts = _check_gaps(dts)
    if dts.size == 0:
        return _empty(model, derivs, "exact")
    reps, inverse = _dedupe(dts)
    A, Q, dA, dQ = _exact(model, reps, derivs)
    A, Q = A[inverse], Q[inverse]
    if dA is not None:
        dA, dQ = dA[:, inverse], dQ[:, inverse]
    zero = dts == 0.0
    if np.any(zero):
        A[zero] = np.eye(model.d)
        Q[zero] = 0.0
        if dA is not None:
            dA[:, zero] = 0.0
            dQ[:, zero] = 0.0
    return DiscreteTransitions(dts, A, Q, dA, dQ, mode="exact")


def _empty(model, derivs, mode):
    d = model.d
    p = 0 if derivs is None else derivs.nparams
    e = np.empty((0, d, d))
    de = None if derivs is None else np.empty((p, 0, d, d))
    return DiscreteTransitions(np.empty(0), e, e.copy(), de, None if de is None else de.copy(), mode)


BOUNDARIES = ("keys", "replicate")


def _extend(F, boundary="keys"):
    if boundary == "keys":
        # f(-1) = 3 f(0) - 3 f(1) + f(2), mirrored at the far end; keeps O(h^3) in the edge cells
        lo = 3 * F[0] - 3 * F[1] + F[2]
        hi = 3 * F[-1] - 3 * F[-2] + F[-3]
    else:
        lo, hi = F[0], F[-1]
    return np.concatenate([lo[None], F, hi[None]], axis=0)


def keys_weights(u, a=KEYS_A):
    """Cubic-convolution weights for nodes j-1, j, j+1, j+2 at fractional offset u in [0, 1)."""
    u = np.asarray(u, dtype=float)

    def near(x):
        return ((a + 2) * x - (a + 3)) * x * x + 1

    def far(x):
        return ((a * x - 5 * a) * x + 8 * a) * x - 4 * a

    return np.stack([far(1 + u), near(u), near(1 - u), far(2 - u)], axis=-1)


def build_interp_grid(model, dts, K, derivs=None, boundary="keys"):
    """Tabulate A and Q on K equispaced nodes spanning [min dt, max dt].

    Costs K matrix exponentials (twice-size ones when ``derivs`` is given).
    ``boundary`` sets the ghost node beyond each end of the grid: ``"keys"``
    extrapolates cubically, ``"replicate"`` copies the end node.
    """
    if boundary not in BOUNDARIES:
        raise ValueError(f"unknown boundary rule '{boundary}' (choose from {BOUNDARIES})")
    K = int(K)
    if K < 4:
        raise ValueError(f"interpolation grid needs K >= 4 nodes, got {K}")
    _check_model(model)
    dts = _check_gaps(dts)
    if dts.size == 0:
        raise ValueError("cannot build an interpolation grid without gaps")
    lo, hi = float(dts.min()), float(dts.max())
    if hi - lo <= DEDUP_RTOL * max(abs(lo), 1e-300):
        return InterpGrid(lo, 0.0, K, model, derivs, None, None)
    ds = (hi - lo) / (K - 1)
    nodes = lo + ds * np.arange(K)
    A, Q, dA, dQ = _exact(model, nodes, derivs)
    grid = InterpGrid(lo, ds, K, model, derivs, _extend(A, boundary), _extend(Q, boundary))
    if dA is not None:
        grid.dA = np.stack([_extend(x, boundary) for x in dA])
        grid.dQ = np.stack([_extend(x, boundary) for x in dQ])
    return grid


def interp_transitions(grid, dts):
    """Evaluate the tabulated transitions at ``dts``; gaps off the grid are computed exactly."""
    dts = _check_gaps(dts)
    mode = f"interpolated({grid.K})"
    if grid.ds == 0.0:
        out = discretize_exact(grid.model, dts, grid.derivs)
        out.mode = mode
        return out
    tol = 1e-12 * max(grid.s_end, 1.0)
    inside = (dts >= grid.s0 - tol) & (dts <= grid.s_end + tol)
    x = np.clip((dts[inside] - grid.s0) / grid.ds, 0.0, grid.K - 1)
    j = np.minimum(np.floor(x).astype(np.int64), grid.K - 2)
    w = keys_weights(x - j)
    idx = j[:, None] + np.arange(4)[None, :]  # ghost-padded: node j-1 sits at index j

    def blend(table):
        return np.einsum("mk,mkij->mij", w, table[idx])

    d = grid.model.d
    m = dts.size
    A = np.empty((m, d, d))
    Q = np.empty((m, d, d))
    A[inside] = blend(grid.A)
    Q[inside] = blend(grid.Q)
    dA = dQ = None
    if grid.dA is not None:
        p = grid.dA.shape[0]
        dA = np.empty((p, m, d, d))
        dQ = np.empty((p, m, d, d))
        for k in range(p):
            dA[k, inside] = blend(grid.dA[k])
            dQ[k, inside] = blend(grid.dQ[k])
    if not np.all(inside):
        ex = discretize_exact(grid.model, dts[~inside], grid.derivs)
        A[~inside], Q[~inside] = ex.A, ex.Q
        if dA is not None:
            dA[:, ~inside], dQ[:, ~inside] = ex.dA, ex.dQ
    return DiscreteTransitions(dts, A, Q, dA, dQ, mode=mode)


def discretize(model, dts, K=None, derivs=None, boundary="keys"):
    """Exact discretization when ``K`` is None, otherwise grid interpolation with K nodes."""
    if K is None:
        return discretize_exact(model, dts, derivs)
    dts = _check_gaps(dts)
    if dts.size == 0:
        return _empty(model, derivs, f"interpolated({int(K)})")
    return interp_transitions(build_interp_grid(model, dts, K, derivs, boundary), dts)
