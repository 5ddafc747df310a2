"""Type-II maximum likelihood: minimize -log Z over log-domain hyperparameters."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import (
    SSGPError, UnsupportedInferenceError, UnsupportedKernelError, UnsupportedLikelihoodError,
)
from .inference import infer

_UNSUPPORTED = (UnsupportedInferenceError, UnsupportedKernelError, UnsupportedLikelihoodError)

log = logging.getLogger(__name__)


@dataclass
class ObjectiveEval:
    value: float
    grad: np.ndarray
    scheme: str
    grad_method: str = "analytic"


@dataclass
class OptimizeResult:
    theta: np.ndarray
    model: object
    value: float
    n_evals: int
    success: bool
    message: str
    trace: list = field(default_factory=list)


class ObjectiveError(SSGPError):
    """Inference failed at a particular hyperparameter vector."""

    def __init__(self, message, theta):
        super().__init__(message)
        self.theta = np.asarray(theta, dtype=float)


class OptimizationFailed(SSGPError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def objective(theta, model, t, y, scheme="auto", **kw):
    """-log Z and its gradient at ``theta``.

    Raises
    ------
    ObjectiveError
        Wrapping any inference failure, with ``theta`` attached.
    """
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError(f"non-finite hyperparameters {theta}")
    try:
        m = model.with_theta(theta)
    except ValueError as exc:
        raise ObjectiveError(f"invalid hyperparameters {theta.tolist()}: {exc}", theta) from exc
    try:
        res = infer(m, t, y, scheme, grad=True, **kw)
    except _UNSUPPORTED:
        raise
    except (SSGPError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise ObjectiveError(f"inference failed at theta={theta.tolist()}: {exc}", theta) from exc
    return ObjectiveEval(-res.log_z, -res.grad_log_z, res.scheme, res.extras.get("grad_method", "analytic"))


def _resolve_fixed(names, fix):
    idx = []
    for f in fix or ():
        f = f.strip()
        hits = [i for i, n in enumerate(names) if n == f or n.endswith("." + f) or n.endswith(".log_" + f)]
        if len(hits) != 1:
            raise ValueError(f"cannot fix '{f}': matches {[names[i] for i in hits]} among {list(names)}")
        idx.append(hits[0])
    return sorted(set(idx))


def optimize(model, t, y, scheme="auto", theta0=None, max_evals=100, fix=(), gtol=1e-6, **kw):
    """Quasi-Newton (L-BFGS-B) minimization of -log Z.

    Parameters
    ----------
    fix : sequence of str
        Parameter names held at their starting values: the full name
        (``kernel.log_lengthscale``), the part after the dot
        (``log_lengthscale``) or that part without ``log_`` (``lengthscale``).

    Returns
    -------
    OptimizeResult
        The best evaluated point; never worse than ``theta0``.
    """
    if max_evals < 1:
        raise ValueError("max_evals must be at least 1")
    theta0 = model.theta if theta0 is None else np.asarray(theta0, dtype=float)
    y = np.asarray(y, dtype=float)
    if not np.any(np.isfinite(y)):
        warnings.warn("no labeled data: the objective is flat, returning theta0", stacklevel=2)
        return OptimizeResult(theta0.copy(), model.with_theta(theta0), 0.0, 0, True, "no data")
    names = model.names
    fixed = _resolve_fixed(names, fix)
    free = np.array([i for i in range(len(theta0)) if i not in fixed], dtype=int)
    trace = []
    best = {"value": np.inf, "theta": theta0.copy()}

    def full(x):
        th = theta0.copy()
        th[free] = x
        return th

    def fun(x):
        th = full(x)
        try:
            ev = objective(th, model, t, y, scheme, **kw)
        except ObjectiveError as exc:
            log.info("objective failed: %s", exc)
            trace.append({"theta": th, "value": None, "error": str(exc)})
            penalty = 1e10 if not np.isfinite(best["value"]) else abs(best["value"]) * 10 + 1e10
            return penalty, np.zeros(len(free))
        trace.append({"theta": th, "value": ev.value, "grad": ev.grad})
        if ev.value < best["value"]:
            best.update(value=ev.value, theta=th)
        return ev.value, ev.grad[free]

    if free.size == 0:
        fun(np.zeros(0))
        msg, ok = "all parameters fixed", True
    else:
        out = minimize(
            fun, theta0[free], jac=True, method="L-BFGS-B",
            options={"maxfun": int(max_evals), "gtol": gtol, "maxiter": int(max_evals)},
        )
        msg, ok = str(out.message), bool(out.success)
    if not np.isfinite(best["value"]):
        raise OptimizationFailed("every objective evaluation failed", trace)
    th = best["theta"]
    return OptimizeResult(th, model.with_theta(th), best["value"], len(trace), ok, msg, trace)
