"""Prior mean functions m(t) with unconstrained parameters."""

from __future__ import annotations

import numpy as np


class Mean:
    param_names: tuple = ()

    def __init__(self, params=()):
        self.params = np.array(params, dtype=float).reshape(-1)
        if self.params.shape[0] != len(self.param_names):
            raise ValueError(f"{type(self).__name__} expects {len(self.param_names)} parameters")

    @property
    def nparams(self):
        return len(self.param_names)

    def with_params(self, params):
        new = object.__new__(type(self))
        Mean.__init__(new, params)
        return new

    def __repr__(self):
        vals = ", ".join(f"{n}={v:.6g}" for n, v in zip(self.param_names, self.params))
        return f"{type(self).__name__}({vals})"


class ZeroMean(Mean):
    def __call__(self, t):
        return np.zeros(np.shape(t))

    def grad(self, t):
        return np.zeros((0,) + np.shape(t))


class ConstMean(Mean):
    """m(t) = d."""

    param_names = ("offset",)

    def __init__(self, offset=0.0):
        super().__init__([offset])

    def __call__(self, t):
        return np.full(np.shape(t), self.params[0])

    def grad(self, t):
        return np.ones((1,) + np.shape(t))


class LinearMean(Mean):
    """m(t) = a t + d."""

    param_names = ("slope", "offset")

    def __init__(self, slope=0.0, offset=0.0):
        super().__init__([slope, offset])

    def __call__(self, t):
        return self.params[0] * np.asarray(t, dtype=float) + self.params[1]

    def grad(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack([t, np.ones_like(t)])


MEANS = {"zero": ZeroMean, "const": ConstMean, "linear": LinearMean}


def parse_mean(name):
    key = str(name).strip().lower()
    if key not in MEANS:
        raise ValueError(f"unknown mean function '{name}' (choose from {', '.join(MEANS)})")
    return MEANS[key]()
