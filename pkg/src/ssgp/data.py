"""Synthetic data sets and CSV ingestion.

Every generator draws inputs and noise from two independent PCG64 streams
spawned from one ``numpy.random.SeedSequence(seed)``, so the inputs of a data
set do not change when only the noise model changes.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

GENERATORS = ("sinusoids", "sinc", "studentt", "poisson", "logistic", "erf")
DEFAULT_SEED = 0


@dataclass
class Dataset:
    """Inputs ``t`` (non-decreasing) and targets ``y``; NaN marks a missing target."""

    t: np.ndarray
    y: np.ndarray
    name: str = ""
    f: np.ndarray | None = None

    @property
    def n(self):
        return self.t.shape[0]

    @property
    def mask(self):
        return np.isfinite(self.y)

    def to_csv(self, path):
        """Write ``t,y`` rows to a path or an open text stream; missing targets stay empty."""
        if hasattr(path, "write"):
            self._write(path)
            return
        with open(path, "w", newline="") as fh:
            self._write(fh)

    def _write(self, fh):
        w = csv.writer(fh)
        w.writerow(["t", "y"])
        for ti, yi in zip(self.t, self.y):
            w.writerow([repr(float(ti)), "" if not np.isfinite(yi) else repr(float(yi))])


def resolve_seed(seed=None):
    """``SSGP_SEED`` from the environment overrides ``seed``."""
    env = os.environ.get("SSGP_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"SSGP_SEED must be an integer, got {env!r}") from None
    return DEFAULT_SEED if seed is None else int(seed)


def streams(seed):
    """Independent (input, noise) generators for ``seed``."""
    s_in, s_noise = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.Generator(np.random.PCG64(s_in)), np.random.Generator(np.random.PCG64(s_noise))


def sinusoids_f(t):
    return 0.2 * np.sin(2 * np.pi * t + 2) + 0.5 * np.sin(0.6 * np.pi * t + 0.13)


def sinc_f(x):
    return 6 * np.sin(7 * np.pi * x) / (7 * np.pi * x + 1)


def _poisson_arrivals(rng, n, horizon=12.0):
    # a homogeneous Poisson process conditioned on n events is n sorted uniforms
    return np.sort(rng.uniform(0.0, horizon, n))


def simulate(generator, n, seed=None, noise=None, outlier_frac=0.1, outlier_scale=10.0):
    """Draw a synthetic data set.

    Parameters
    ----------
    generator : str
        ``sinusoids``: Poisson-process inputs on [0, 12], two sinusoids plus
        0.1 N(0, 1) noise. ``sinc``: uniform inputs on [0, 1], modified sinc
        plus Gaussian noise. ``studentt``: the sinc data with a fraction
        ``outlier_frac`` of targets shifted by ``outlier_scale`` N(0, 1).
        ``poisson``: counts with rate exp(sinc). ``logistic``/``erf``: sign of
        the sinc in {-1, +1}.
    n : int
    seed : int, optional
        Overridden by the ``SSGP_SEED`` environment variable when set.
    noise : float, optional
        Gaussian noise standard deviation (default 0.1 for ``sinusoids`` and
        0.5 for the sinc family).
    """
    if generator not in GENERATORS:
        raise ValueError(f"unknown generator '{generator}' (choose from {', '.join(GENERATORS)})")
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    seed = resolve_seed(seed)
    rin, rnoise = streams(seed)
    if generator == "sinusoids":
        t = _poisson_arrivals(rin, n)
        f = sinusoids_f(t)
        y = f + (0.1 if noise is None else noise) * rnoise.standard_normal(n)
        return Dataset(t, y, generator, f)
    t = np.sort(rin.uniform(0.0, 1.0, n))
    f = sinc_f(t)
    sd = 0.5 if noise is None else noise
    if generator == "sinc":
        y = f + sd * rnoise.standard_normal(n)
    elif generator == "studentt":
        y = f + sd * rnoise.standard_normal(n)
        k = int(round(outlier_frac * n))
        idx = rnoise.choice(n, size=k, replace=False)
        y[idx] += outlier_scale * rnoise.standard_normal(k)
    elif generator == "poisson":
        y = rnoise.poisson(np.exp(f)).astype(float)
    else:
        y = np.where(f >= 0, 1.0, -1.0)
    return Dataset(t, y, generator, f)


def read_csv(path):
    """Read a two-column (t, y) CSV with optional header.

    Empty y marks a missing target. Rows are sorted stably by t, so duplicate
    inputs are kept as zero-length gaps.

    Raises
    ------
    ValueError
        On a malformed row, naming its line number.
    """
    ts, ys = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            a, b = row[0].strip(), row[1].strip()
            try:
                tv = float(a)
            except ValueError:
                if lineno == 1 and not ts:
                    continue  # header
                raise ValueError(f"{path}:{lineno}: cannot parse t value {a!r}") from None
            try:
                yv = float(b) if b else np.nan
            except ValueError:
                raise ValueError(f"{path}:{lineno}: cannot parse y value {b!r}") from None
            if not np.isfinite(tv) or (b and not np.isfinite(yv)):
                raise ValueError(f"{path}:{lineno}: non-finite value")
            ts.append(tv)
            ys.append(yv)
    t = np.array(ts, dtype=float)
    y = np.array(ys, dtype=float)
    order = np.argsort(t, kind="stable")
    return Dataset(t[order], y[order], os.path.basename(str(path)))


def kfold_indices(n, k=10, seed=None):
    """Shuffled k-fold split; returns a list of test-index arrays."""
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(resolve_seed(seed)).spawn(3)[2]))
    perm = rng.permutation(n)
    return [np.sort(p) for p in np.array_split(perm, k)]
