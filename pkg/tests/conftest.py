import numpy as np
import pytest


@pytest.fixture(autouse=True)
def _no_seed_override(monkeypatch):
    # data generators honour SSGP_SEED; tests pin their own seeds
    monkeypatch.delenv("SSGP_SEED", raising=False)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.max(np.abs(a - b) / np.abs(b))


def fd_grad(fun, theta, h=1e-5):
    """Central finite differences of a scalar function."""
    theta = np.asarray(theta, dtype=float)
    out = np.zeros_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        out[j] = (fun(theta + e) - fun(theta - e)) / (2 * h)
    return out


def random_btd(rng, nb, d, spd=True):
    """Random symmetric block-tridiagonal matrix; block-diagonally dominant when ``spd``."""
    from ssgp.linalg import BTDMatrix

    lower = rng.standard_normal((max(nb - 1, 0), d, d))
    norms = np.concatenate([[0.0], [np.linalg.norm(x, 2) for x in lower], [0.0]])
    diag = np.empty((nb, d, d))
    for i in range(nb):
        X = rng.standard_normal((d, d))
        # lambda_min >= 1 by block Gershgorin
        shift = norms[i] + norms[i + 1] + 1.0 if spd else 0.0
        diag[i] = X @ X.T + shift * np.eye(d)
    return BTDMatrix(diag, lower)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail=""):
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}" + (f" [{detail}]" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
