"""Observation models p(y | f) and the per-site quantities each inference scheme needs.

Every likelihood provides

* ``evaluate(y, f)``: log p and its first three f-derivatives;
* ``moments(y, mu, s2, order)``: log Z = log int p(y|f) N(f|mu, s2) df and its
  mu-derivatives up to ``order`` (used for moment matching);
* ``kl_expect(y, mu, v)``: E[log p], d/dmu and d^2/dmu^2 under N(mu, v);
* for super-Gaussian models, the variational representation
  log p(y | f) = b f + phi((f - z)^2) with phi convex.

Hyperparameters are stored in the log domain.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import digamma, expit, gammaln, log_expit, log_ndtr

from .errors import DomainError, UnsupportedInferenceError, UnsupportedLikelihoodError

LOG2PI = np.log(2 * np.pi)
DEFAULT_NODES = 20


@lru_cache(maxsize=None)
def gauss_hermite(nodes):
    """Probabilists' Gauss-Hermite rule normalized to integrate against N(0, 1)."""
    x, w = np.polynomial.hermite_e.hermegauss(int(nodes))
    return x, w / np.sqrt(2 * np.pi)


@dataclass
class LikelihoodEval:
    logp: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray


def _logsumexp(a, w, axis=-1):
    amax = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(amax, axis) + np.log(np.sum(w * np.exp(a - amax), axis=axis))


def _cumulants(z1, z2, z3, z4):
    # log-derivatives from raw derivative ratios Z^(k)/Z
    L1 = z1
    L2 = z2 - z1**2
    L3 = z3 - 3 * z2 * z1 + 2 * z1**3
    L4 = z4 - 4 * z3 * z1 - 3 * z2**2 + 12 * z2 * z1**2 - 6 * z1**4
    return L1, L2, L3, L4


class Likelihood:
    """Base class; subclasses implement ``_lp`` and ``_derivs``."""

    name = "base"
    param_names: tuple = ()
    log_concave = True
    super_gaussian = False

    def __init__(self, params=(), nodes=DEFAULT_NODES):
        self.params = np.array(params, dtype=float).reshape(-1)
        if self.params.shape[0] != len(self.param_names):
            raise ValueError(f"{self.name} likelihood expects {len(self.param_names)} parameters")
        if not np.all(np.isfinite(np.exp(self.params))):
            raise ValueError(f"non-finite likelihood parameters {self.params}")
        self.nodes = int(nodes)

    @property
    def nparams(self):
        return len(self.param_names)

    def with_params(self, params):
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        Likelihood.__init__(new, params, self.nodes)
        return new

    def __repr__(self):
        vals = ", ".join(f"{n}={v:.6g}" for n, v in zip(self.param_names, self.params))
        return f"{type(self).__name__}({vals})"

    # -- to be provided -----------------------------------------------------

    def check(self, y):
        """Raise DomainError if any target is outside the support."""
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise DomainError(f"{self.name} targets must be finite")
        return y

    def evaluate(self, y, f):
        raise NotImplementedError

    def param_derivs(self, y, f):
        """d/dtheta of (log p, d1, d2); each an array of shape (q, n)."""
        n = np.broadcast(np.asarray(y), np.asarray(f)).shape
        z = np.zeros((0,) + n)
        return z, z, z

    # -- generic implementations ------------------------------------------

    def logp(self, y, f):
        return self.evaluate(y, f).logp

    def _mode(self, y, mu, s2, iters=30):
        # maximum of log p(y|f) - (f - mu)^2 / (2 s2); only used to center quadrature
        f = np.array(mu, dtype=float, copy=True)
        for _ in range(iters):
            ev = self.evaluate(y, f)
            g = ev.d1 - (f - mu) / s2
            h = np.minimum(ev.d2, 0.0) - 1.0 / s2
            step = np.clip(-g / h, -3 * np.sqrt(s2), 3 * np.sqrt(s2))
            f = f + step
            if np.all(np.abs(step) < 1e-10 * (1 + np.abs(f))):
                break
        ev = self.evaluate(y, f)
        return f, 1.0 / (1.0 / s2 - np.minimum(ev.d2, 0.0))

    def moments(self, y, mu, s2, order=2, nodes=None):
        """log Z and its mu-derivatives L1..L_order for Z = int p(y|f) N(f|mu, s2) df.

        For log-concave models Gauss-Hermite quadrature is centered at the mode
        of the tilted density and scaled by its curvature. Otherwise a composite
        Gauss-Legendre rule covers the cavity and is refined around the peak of
        the likelihood (see ``_peak``).

        Returns
        -------
        tuple of arrays ``(logZ, L1, ..., L_order)``.
        """
        y = np.asarray(y, dtype=float)
        mu = np.asarray(mu, dtype=float)
        s2 = np.asarray(s2, dtype=float)
        if np.any(s2 <= 0):
            raise ValueError("cavity variance must be positive")
        s = np.sqrt(s2)[..., None]
        if self.log_concave:
            x, w = gauss_hermite(nodes or self.nodes)
            fhat, c2 = self._mode(y, mu, s2)
            sc = np.sqrt(c2)
            f = fhat[..., None] + sc[..., None] * x
            # log quadrature weight for int g(f) df
            lq = np.log(w) + 0.5 * x**2 + 0.5 * LOG2PI + np.log(sc)[..., None]
        else:
            f, lq = self._composite_rule(y, mu, s[..., 0])
        xc = (f - mu[..., None]) / s
        la = self.logp(y[..., None], f) - 0.5 * xc**2 - np.log(s) - 0.5 * LOG2PI + lq
        logZ = _logsumexp(la, 1.0)
        if not np.all(np.isfinite(logZ)):
            raise ArithmeticError("non-finite quadrature in moment matching")
        if order == 0:
            return (logZ,)
        omega = np.exp(la - logZ[..., None])
        s1 = s[..., 0]
        x2 = xc * xc
        z1 = np.sum(omega * xc, -1) / s1
        z2 = np.sum(omega * (x2 - 1), -1) / s1**2
        if order <= 2:
            return logZ, z1, z2 - z1**2
        z3 = np.sum(omega * xc * (x2 - 3), -1) / s1**3
        z4 = np.sum(omega * (x2 * x2 - 6 * x2 + 3), -1) / s1**4
        L1, L2, L3, L4 = _cumulants(z1, z2, z3, z4)
        return (logZ, L1, L2, L3, L4)[: order + 1]

    def _peak(self, y):
        """Location and width of the likelihood peak in f, used to refine quadrature."""
        y = np.asarray(y, dtype=float)
        return y, np.ones_like(y)

    def _composite_rule(self, y, mu, s, panels=16, order=8):
        lo = mu - 10 * s
        hi = mu + 10 * s
        c, wd = self._peak(y)
        c, wd = np.broadcast_arrays(c, wd)
        steps = np.array([0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0])
        steps = np.concatenate([-steps[:0:-1], steps])
        u = np.linspace(0.0, 1.0, panels + 1)
        br = np.concatenate(
            [lo[..., None] + (hi - lo)[..., None] * u, c[..., None] + wd[..., None] * steps], -1
        )
        br = np.sort(np.clip(br, lo[..., None], hi[..., None]), -1)
        gx, gw = np.polynomial.legendre.leggauss(order)
        a, b = br[..., :-1, None], br[..., 1:, None]
        half = 0.5 * (b - a)
        f = (a + half * (gx + 1)).reshape(br.shape[:-1] + (-1,))
        wq = (half * gw).reshape(f.shape)
        with np.errstate(divide="ignore"):
            return f, np.log(wq)

    def adf_site(self, y, mu, s2):
        """Moment-matched site: returns (logZ, site_b, site_W) for an uncentered cavity."""
        logZ, L1, L2 = self.moments(y, mu, s2, 2)
        W = -L2 / (1 + s2 * L2)
        b = W * mu + L1 * (1 + W * s2)
        return logZ, b, W

    def kl_expect(self, y, mu, v, nodes=None):
        """E[log p], dE/dmu and d^2E/dmu^2 under f ~ N(mu, v) by Gauss-Hermite quadrature."""
        y = np.asarray(y, dtype=float)
        mu = np.asarray(mu, dtype=float)
        v = np.asarray(v, dtype=float)
        if np.any(v < 0):
            raise ValueError("variance must be non-negative")
        x, w = gauss_hermite(nodes or self.nodes)
        f = mu[..., None] + np.sqrt(v)[..., None] * x
        ev = self.evaluate(y[..., None], f)
        out = (np.sum(w * ev.logp, -1), np.sum(w * ev.d1, -1), np.sum(w * ev.d2, -1))
        if not all(np.all(np.isfinite(o)) for o in out):
            raise ArithmeticError("non-finite quadrature in convolved likelihood")
        return out

    def kl_param_grad(self, y, mu, v, nodes=None):
        """d E[log p] / d theta under N(mu, v); shape (q, n)."""
        x, w = gauss_hermite(nodes or self.nodes)
        f = np.asarray(mu)[..., None] + np.sqrt(np.asarray(v))[..., None] * x
        dlp = self.param_derivs(np.asarray(y)[..., None], f)[0]
        return np.sum(w * dlp, -1)

    # -- variational (super-Gaussian) representation -------------------------

    def vb_sites(self, y):
        """(z, b) so that log p(y | f) = b f + phi((f - z)^2)."""
        raise UnsupportedInferenceError(f"VB needs a super-Gaussian likelihood; {self.name} is not")

    def vb_phi(self, y, x):
        """phi(x) and phi'(x)."""
        raise UnsupportedInferenceError(f"VB needs a super-Gaussian likelihood; {self.name} is not")

    def vb_phi_grad(self, y, x):
        """d phi / d theta and d phi' / d theta, each of shape (q, n)."""
        z = np.zeros((0,) + np.shape(x))
        return z, z

    def vb_smoothed(self, y, f, v):
        """Smoothed site value l(g) + b_vb (f - g) with g = sign(f - z) sqrt((f - z)^2 + v) + z."""
        z, bvb = self.vb_sites(y)
        r = np.asarray(f, dtype=float) - z
        g = np.where(r >= 0, 1.0, -1.0) * np.sqrt(r * r + v) + z
        return self.logp(y, g) + bvb * (f - g)


class Gaussian(Likelihood):
    """y ~ N(f, sigma_n^2); parameter ``log_sigma_n``."""

    name = "gaussian"
    param_names = ("log_sigma_n",)
    super_gaussian = True

    def __init__(self, sigma_n=0.1, nodes=DEFAULT_NODES):
        super().__init__([np.log(sigma_n)], nodes)

    @property
    def sn2(self):
        return np.exp(2 * self.params[0])

    def evaluate(self, y, f):
        r = np.asarray(y, dtype=float) - f
        s2 = self.sn2
        lp = -0.5 * r * r / s2 - 0.5 * (LOG2PI + np.log(s2))
        return LikelihoodEval(lp, r / s2, np.full_like(lp, -1 / s2), np.zeros_like(lp))

    def param_derivs(self, y, f):
        r = np.asarray(y, dtype=float) - f
        s2 = self.sn2
        return (
            (r * r / s2 - 1)[None],
            (-2 * r / s2)[None],
            np.full((1,) + r.shape, 2 / s2),
        )

    def moments(self, y, mu, s2, order=2, nodes=None):
        y, mu, s2 = (np.asarray(a, dtype=float) for a in (y, mu, s2))
        tot = s2 + self.sn2
        r = y - mu
        out = (-0.5 * r * r / tot - 0.5 * (LOG2PI + np.log(tot)), r / tot, -1 / tot,
               np.zeros_like(tot), np.zeros_like(tot))
        return out[: order + 1]

    def kl_expect(self, y, mu, v, nodes=None):
        r = np.asarray(y, dtype=float) - mu
        s2 = self.sn2
        return (-0.5 * (r * r + v) / s2 - 0.5 * (LOG2PI + np.log(s2)), r / s2,
                np.full_like(r, -1 / s2))

    def vb_sites(self, y):
        y = np.asarray(y, dtype=float)
        return y, np.zeros_like(y)

    def vb_phi(self, y, x):
        s2 = self.sn2
        x = np.asarray(x, dtype=float)
        return -0.5 * x / s2 - 0.5 * (LOG2PI + np.log(s2)), np.full_like(x, -0.5 / s2)

    def vb_phi_grad(self, y, x):
        x = np.asarray(x, dtype=float)
        return (x / self.sn2 - 1)[None], np.full_like(x, 1 / self.sn2)[None]


class StudentT(Likelihood):
    """Student's t with nu degrees of freedom and scale sigma_n; parameters ``[log nu, log sigma_n]``."""

    name = "studentt"
    param_names = ("log_nu", "log_sigma_n")
    log_concave = False
    super_gaussian = True

    def __init__(self, nu=1.0, sigma_n=0.1, nodes=DEFAULT_NODES):
        super().__init__([np.log(nu), np.log(sigma_n)], nodes)

    @property
    def nu(self):
        return np.exp(self.params[0])

    @property
    def a(self):
        return self.nu * np.exp(2 * self.params[1])

    def _peak(self, y):
        y = np.asarray(y, dtype=float)
        return y, np.full_like(y, np.exp(self.params[1]))

    def _const(self):
        nu = self.nu
        return gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * np.log(np.pi * self.a)

    def evaluate(self, y, f):
        r = np.asarray(y, dtype=float) - f
        nu, a = self.nu, self.a
        q = a + r * r
        lp = self._const() - 0.5 * (nu + 1) * np.log1p(r * r / a)
        d1 = (nu + 1) * r / q
        d2 = (nu + 1) * (r * r - a) / q**2
        d3 = 2 * (nu + 1) * r * (r * r - 3 * a) / q**3
        return LikelihoodEval(lp, d1, d2, d3)

    def _dphi(self, x):
        # partials of phi(x) = const - (nu+1)/2 log(1 + x/a) w.r.t. nu (a fixed) and a
        nu, a = self.nu, self.a
        d_nu = 0.5 * digamma((nu + 1) / 2) - 0.5 * digamma(nu / 2) - 0.5 * np.log1p(x / a)
        d_a = -0.5 / a + 0.5 * (nu + 1) * x / (a * (a + x))
        return d_nu, d_a

    def param_derivs(self, y, f):
        r = np.asarray(y, dtype=float) - f
        nu, a = self.nu, self.a
        q = a + r * r
        lp_nu, lp_a = self._dphi(r * r)
        d1_nu, d1_a = r / q, -(nu + 1) * r / q**2
        d2_nu, d2_a = (r * r - a) / q**2, (nu + 1) * (a - 3 * r * r) / q**3
        # log nu moves nu and a = nu sigma^2; log sigma moves a by 2a
        dlp = np.stack([nu * lp_nu + a * lp_a, 2 * a * lp_a])
        dd1 = np.stack([nu * d1_nu + a * d1_a, 2 * a * d1_a])
        dd2 = np.stack([nu * d2_nu + a * d2_a, 2 * a * d2_a])
        return dlp, dd1, dd2

    def vb_sites(self, y):
        y = np.asarray(y, dtype=float)
        return y, np.zeros_like(y)

    def vb_phi(self, y, x):
        x = np.asarray(x, dtype=float)
        nu, a = self.nu, self.a
        return self._const() - 0.5 * (nu + 1) * np.log1p(x / a), -0.5 * (nu + 1) / (a + x)

    def vb_phi_grad(self, y, x):
        x = np.asarray(x, dtype=float)
        d_nu, d_a = self._dphi(x)
        nu, a = self.nu, self.a
        g_nu, g_a = -0.5 / (a + x), 0.5 * (nu + 1) / (a + x) ** 2
        return (np.stack([nu * d_nu + a * d_a, 2 * a * d_a]),
                np.stack([nu * g_nu + a * g_a, 2 * a * g_a]))


class Poisson(Likelihood):
    """Counts y ~ Poisson(exp(f))."""

    name = "poisson"

    def check(self, y):
        y = super().check(y)
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise DomainError("Poisson targets must be non-negative integers")
        return y

    def evaluate(self, y, f):
        y = np.asarray(y, dtype=float)
        mu = np.exp(f)
        lp = y * f - mu - gammaln(y + 1)
        return LikelihoodEval(lp, y - mu, -mu, -mu)

    def kl_expect(self, y, mu, v, nodes=None):
        y = np.asarray(y, dtype=float)
        e = np.exp(mu + 0.5 * np.asarray(v))
        return y * mu - e - gammaln(y + 1), y - e, -e


class _Binary(Likelihood):
    def check(self, y):
        y = super().check(y)
        if not np.all(np.abs(y) == 1):
            raise DomainError(f"{self.name} targets must be -1 or +1")
        return y


class Logistic(_Binary):
    """p(y | f) = sigmoid(y f) with y in {-1, +1}."""

    name = "logistic"
    super_gaussian = True

    def evaluate(self, y, f):
        y = np.asarray(y, dtype=float)
        yf = y * f
        p = expit(f)
        pq = p * (1 - p)
        return LikelihoodEval(log_expit(yf), y * expit(-yf), -pq, -pq * (1 - 2 * p))

    def vb_sites(self, y):
        y = np.asarray(y, dtype=float)
        return np.zeros_like(y), 0.5 * y

    def vb_phi(self, y, x):
        x = np.asarray(x, dtype=float)
        s = 0.5 * np.sqrt(x)
        # log sigmoid(y f) = y f / 2 - log(2 cosh(f / 2))
        phi = -(s + np.log1p(np.exp(-2 * s)))
        small = s < 1e-4
        ss = np.where(small, 1.0, s)
        ratio = np.where(small, 1 - s * s / 3 + 2 * s**4 / 15, np.tanh(ss) / ss)
        return phi, -ratio / 8


class Erf(_Binary):
    """Probit model p(y | f) = Phi(y f) with y in {-1, +1}."""

    name = "erf"

    @staticmethod
    def _derivs(z):
        lp = log_ndtr(z)
        r = np.exp(-0.5 * z * z - 0.5 * LOG2PI - lp)
        q = z + r
        g2 = -r * q
        g3 = r * (q * (z + 2 * r) - 1)
        g4 = -r * q * (q * (z + 2 * r) - 1) + r * ((1 - r * q) * (z + 2 * r) + q - 2 * r * q * q)
        return lp, r, g2, g3, g4

    def evaluate(self, y, f):
        y = np.asarray(y, dtype=float)
        lp, r, g2, g3, _ = self._derivs(y * f)
        return LikelihoodEval(lp, y * r, g2, y * g3)

    def moments(self, y, mu, s2, order=2, nodes=None):
        y, mu, s2 = (np.asarray(a, dtype=float) for a in (y, mu, s2))
        c = np.sqrt(1 + s2)
        lp, r, g2, g3, g4 = self._derivs(y * mu / c)
        out = (lp, y * r / c, g2 / c**2, y * g3 / c**3, g4 / c**4)
        return out[: order + 1]


LIKELIHOODS = {
    "gaussian": Gaussian,
    "studentt": StudentT,
    "poisson": Poisson,
    "logistic": Logistic,
    "erf": Erf,
}


def parse_likelihood(name, **kwargs):
    """Build a likelihood from its name (``gaussian|studentt|poisson|logistic|erf``)."""
    key = str(name).strip().lower()
    if key not in LIKELIHOODS:
        raise UnsupportedLikelihoodError(
            f"unknown likelihood '{name}' (choose from {', '.join(LIKELIHOODS)})"
        )
    cls = LIKELIHOODS[key]
    accepted = {"gaussian": ("sigma_n",), "studentt": ("nu", "sigma_n")}.get(key, ())
    opts = {k: v for k, v in kwargs.items() if k in accepted or k == "nodes"}
    return cls(**opts)
