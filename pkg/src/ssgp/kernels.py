"""Covariance functions and their state-space (SDE) realizations.

A stationary Markovian covariance k(tau) is represented by the linear SDE

    df/dt = F f + L w(t),   f(t) = H f(t),   w ~ white noise with density Qc,

whose stationary covariance Pinf solves F Pinf + Pinf F^T + L Qc L^T = 0 and
reproduces k(tau) = H exp(tau F) Pinf H^T for tau >= 0.

All kernel hyperparameters live in the log domain; derivatives are taken with
respect to those log parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import UnsupportedKernelError


@dataclass(frozen=True)
class StateSpaceModel:
    """Continuous-time state-space realization (F, L, Qc, H, Pinf)."""

    F: np.ndarray
    L: np.ndarray
    Qc: np.ndarray
    H: np.ndarray
    Pinf: np.ndarray
    stationary: bool = True

    @property
    def d(self):
        return self.F.shape[0]

    @property
    def s(self):
        return self.L.shape[1]

    @property
    def P0(self):
        """Initial state covariance (equal to Pinf for stationary models)."""
        return self.Pinf

    def lyapunov_residual(self):
        """Relative Frobenius residual of the stationary Lyapunov equation."""
        R = self.F @ self.Pinf + self.Pinf @ self.F.T + self.L @ self.Qc @ self.L.T
        return np.linalg.norm(R) / max(np.linalg.norm(self.Pinf), np.finfo(float).tiny)


@dataclass(frozen=True)
class ModelDerivatives:
    """Derivatives of (F, L, Qc, H, Pinf) with respect to each log hyperparameter.

    Every array carries the parameter index on its leading axis.
    """

    dF: np.ndarray
    dL: np.ndarray
    dQc: np.ndarray
    dH: np.ndarray
    dPinf: np.ndarray
    names: tuple = field(default=())

    @property
    def nparams(self):
        return self.dF.shape[0]


class Kernel:
    """Base class: a covariance function with log-domain hyperparameters."""

    param_names: tuple = ()

    def __init__(self, params):
        params = np.array(params, dtype=float).reshape(-1)
        if params.shape[0] != len(self.param_names):
            raise ValueError(f"{type(self).__name__} expects {len(self.param_names)} parameters")
        if not np.all(np.isfinite(params)) or not np.all(np.isfinite(np.exp(params))):
            raise ValueError(f"non-finite kernel hyperparameters {params}")
        self.params = params

    @property
    def nparams(self):
        return len(self.param_names)

    def with_params(self, params):
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        Kernel.__init__(new, params)
        return new

    def __add__(self, other):
        return Sum([self, other])

    def gram(self, t1, t2=None):
        t1 = np.asarray(t1, dtype=float)
        t2 = t1 if t2 is None else np.asarray(t2, dtype=float)
        return self(t1[:, None] - t2[None, :])

    def gram_grad(self, t1, t2=None):
        t1 = np.asarray(t1, dtype=float)
        t2 = t1 if t2 is None else np.asarray(t2, dtype=float)
        return self.grad(t1[:, None] - t2[None, :])


class Matern(Kernel):
    """Half-integer Matern covariance, nu in {1/2, 3/2, 5/2}.

    Parameters are ``[log lengthscale, log sigma_f]``.
    """

    param_names = ("log_lengthscale", "log_sigma_f")

    def __init__(self, nu, lengthscale=1.0, sigma_f=1.0):
        nu = Fraction(nu).limit_denominator(8)
        if nu not in (Fraction(1, 2), Fraction(3, 2), Fraction(5, 2)):
            raise UnsupportedKernelError(f"Matern nu={nu} is not supported (use 1/2, 3/2 or 5/2)")
        self.nu = nu
        super().__init__([np.log(lengthscale), np.log(sigma_f)])

    @property
    def lengthscale(self):
        return np.exp(self.params[0])

    @property
    def sigma_f(self):
        return np.exp(self.params[1])

    @property
    def order(self):
        return int(self.nu + Fraction(1, 2))

    def __repr__(self):
        return f"Matern(nu={self.nu}, lengthscale={self.lengthscale:.6g}, sigma_f={self.sigma_f:.6g})"

    def __call__(self, tau):
        r = np.abs(np.asarray(tau, dtype=float))
        s2 = self.sigma_f**2
        a = np.sqrt(2 * float(self.nu)) * r / self.lengthscale
        if self.order == 1:
            return s2 * np.exp(-a)
        if self.order == 2:
            return s2 * (1.0 + a) * np.exp(-a)
        return s2 * (1.0 + a + a * a / 3.0) * np.exp(-a)

    def grad(self, tau):
        r = np.abs(np.asarray(tau, dtype=float))
        s2 = self.sigma_f**2
        a = np.sqrt(2 * float(self.nu)) * r / self.lengthscale
        e = np.exp(-a)
        if self.order == 1:
            d_ell = s2 * a * e
        elif self.order == 2:
            d_ell = s2 * a * a * e
        else:
            d_ell = s2 * a * a * (1.0 + a) * e / 3.0
        return np.stack([d_ell, 2.0 * self(tau)])

    def state_space(self):
        return build_matern(self.nu, self.sigma_f, self.lengthscale)

    def derivatives(self):
        model = self.state_space()
        d = model.d
        dF = np.zeros((2, d, d))
        dQc = np.zeros((2, 1, 1))
        dPinf = np.zeros((2, d, d))
        # F and Qc are proportional to lambda, and d lambda / d log(ell) = -lambda
        dF[0] = -model.F
        dQc[0] = -model.Qc
        dQc[1] = 2 * model.Qc
        dPinf[1] = 2 * model.Pinf
        return ModelDerivatives(
            dF=dF,
            dL=np.zeros((2, d, 1)),
            dQc=dQc,
            dH=np.zeros((2, 1, d)),
            dPinf=dPinf,
            names=self.param_names,
        )


class Constant(Kernel):
    """Constant covariance k(tau) = sigma_f^2 (one state, F = 0, nonstationary P0)."""

    param_names = ("log_sigma_f",)

    def __init__(self, sigma_f=1.0):
        super().__init__([np.log(sigma_f)])

    @property
    def sigma_f(self):
        return np.exp(self.params[0])

    def __repr__(self):
        return f"Constant(sigma_f={self.sigma_f:.6g})"

    def __call__(self, tau):
        return np.full(np.shape(tau), self.sigma_f**2)

    def grad(self, tau):
        return np.full((1,) + np.shape(tau), 2 * self.sigma_f**2)

    def state_space(self):
        return StateSpaceModel(
            F=np.zeros((1, 1)),
            L=np.ones((1, 1)),
            Qc=np.zeros((1, 1)),
            H=np.ones((1, 1)),
            Pinf=np.array([[self.sigma_f**2]]),
            stationary=False,
        )

    def derivatives(self):
        return ModelDerivatives(
            dF=np.zeros((1, 1, 1)),
            dL=np.zeros((1, 1, 1)),
            dQc=np.zeros((1, 1, 1)),
            dH=np.zeros((1, 1, 1)),
            dPinf=np.array([[[2 * self.sigma_f**2]]]),
            names=self.param_names,
        )


class Sum(Kernel):
    """Sum of kernels; the state is the concatenation of the component states."""

    def __init__(self, kernels):
        flat = []
        for k in kernels:
            flat.extend(k.kernels if isinstance(k, Sum) else [k])
        if not flat:
            raise ValueError("a sum kernel needs at least one component")
        self.kernels = flat
        self.param_names = tuple(
            f"{i}.{name}" for i, k in enumerate(flat) for name in k.param_names
        )
        super().__init__(np.concatenate([k.params for k in flat]))

    def with_params(self, params):
        params = np.asarray(params, dtype=float)
        parts, start = [], 0
        for k in self.kernels:
            parts.append(k.with_params(params[start:start + k.nparams]))
            start += k.nparams
        return Sum(parts)

    def __repr__(self):
        return " + ".join(repr(k) for k in self.kernels)

    def __call__(self, tau):
        return sum(k(tau) for k in self.kernels)

    def grad(self, tau):
        return np.concatenate([k.grad(tau) for k in self.kernels])

    def state_space(self):
        return build_sum([k.state_space() for k in self.kernels])

    def derivatives(self):
        models = [k.state_space() for k in self.kernels]
        d = sum(m.d for m in models)
        s = sum(m.s for m in models)
        p = self.nparams
        dF, dL = np.zeros((p, d, d)), np.zeros((p, d, s))
        dQc, dH, dPinf = np.zeros((p, s, s)), np.zeros((p, 1, d)), np.zeros((p, d, d))
        j = r = c = 0
        for k, m in zip(self.kernels, models):
            der = k.derivatives()
            sl = slice(j, j + k.nparams)
            dF[sl, r:r + m.d, r:r + m.d] = der.dF
            dL[sl, r:r + m.d, c:c + m.s] = der.dL
            dQc[sl, c:c + m.s, c:c + m.s] = der.dQc
            dH[sl, :, r:r + m.d] = der.dH
            dPinf[sl, r:r + m.d, r:r + m.d] = der.dPinf
            j, r, c = j + k.nparams, r + m.d, c + m.s
        return ModelDerivatives(dF, dL, dQc, dH, dPinf, names=self.param_names)


def build_matern(nu, sigma_f, ell):
    """Companion-form SDE realization of the Matern(nu) covariance, in a scaled state basis.

    Raises
    ------
    UnsupportedKernelError
        For nu outside {1/2, 3/2, 5/2}.
    """
    nu = Fraction(nu).limit_denominator(8)
    if not (np.isfinite(sigma_f) and np.isfinite(ell) and sigma_f > 0 and ell > 0):
        raise ValueError("sigma_f and ell must be finite and positive")
    s2 = float(sigma_f) ** 2
    lam = np.sqrt(2 * float(nu)) / ell
    # states x_k / lam^k: F = lam * C with C constant, Pinf = s2 * const; the
    # plain companion form has Pinf entries up to s2 lam^4 and loses digits in the filter
    if nu == Fraction(1, 2):
        C = np.array([[-1.0]])
        Qc = np.array([[2 * s2 * lam]])
        Pinf = np.array([[s2]])
    elif nu == Fraction(3, 2):
        C = np.array([[0.0, 1.0], [-1.0, -2.0]])
        Qc = np.array([[4 * s2 * lam]])
        Pinf = np.diag([s2, s2])
    elif nu == Fraction(5, 2):
        C = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, -3.0, -3.0]])
        Qc = np.array([[16.0 / 3.0 * s2 * lam]])
        k = s2 / 3
        Pinf = np.array([[s2, 0.0, -k], [0.0, k, 0.0], [-k, 0.0, s2]])
    else:
        raise UnsupportedKernelError(f"Matern nu={nu} is not supported (use 1/2, 3/2 or 5/2)")
    F = lam * C
    d = F.shape[0]
    L = np.zeros((d, 1))
    L[-1, 0] = 1.0
    H = np.zeros((1, d))
    H[0, 0] = 1.0
    return StateSpaceModel(F=F, L=L, Qc=Qc, H=H, Pinf=Pinf, stationary=True)


def _block_diag(blocks):
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r, c = r + b.shape[0], c + b.shape[1]
    return out


def build_sum(models):
    """Stack state-space models so that the output is the sum of their outputs."""
    models = list(models)
    if not models:
        raise ValueError("build_sum needs at least one model")
    return StateSpaceModel(
        F=_block_diag([m.F for m in models]),
        L=_block_diag([m.L for m in models]),
        Qc=_block_diag([m.Qc for m in models]),
        H=np.concatenate([m.H for m in models], axis=1),
        Pinf=_block_diag([m.Pinf for m in models]),
        stationary=all(m.stationary for m in models),
    )


def model_derivatives(kernel):
    """Analytic derivatives of the kernel's state-space matrices w.r.t. its log parameters."""
    return kernel.derivatives()


_NAMED = {
    "matern12": lambda: Matern(0.5),
    "matern32": lambda: Matern(1.5),
    "matern52": lambda: Matern(2.5),
    "constant": lambda: Constant(),
}


def parse_kernel(spec, lengthscale=None, sigma_f=None):
    """Build a kernel from a spec such as ``"matern32"`` or ``"matern52+constant"``.

    ``lengthscale`` and ``sigma_f`` set the initial values of every component
    that has such a parameter.
    """
    parts = [p.strip().lower() for p in str(spec).split("+")]
    kernels = []
    for name in parts:
        if name not in _NAMED:
            raise UnsupportedKernelError(
                f"unknown kernel '{name}' (choose from {', '.join(sorted(_NAMED))})"
            )
        k = _NAMED[name]()
        p = k.params.copy()
        if isinstance(k, Matern):
            if lengthscale is not None:
                p[0] = np.log(lengthscale)
            if sigma_f is not None:
                p[1] = np.log(sigma_f)
        elif sigma_f is not None:
            p[0] = np.log(sigma_f)
        kernels.append(k.with_params(p))
    return kernels[0] if len(kernels) == 1 else Sum(kernels)
