import numpy as np
import pytest
from scipy import stats

from ssgp.data import GENERATORS, kfold_indices, read_csv, resolve_seed, simulate, sinc_f


@pytest.mark.parametrize("gen", GENERATORS)
def test_deterministic_given_seed(gen):
    a = simulate(gen, 300, seed=5)
    b = simulate(gen, 300, seed=5)
    assert a.t.tobytes() == b.t.tobytes() and a.y.tobytes() == b.y.tobytes()
    c = simulate(gen, 300, seed=6)
    assert a.t.tobytes() != c.t.tobytes()
    assert np.all(np.diff(a.t) >= 0)


def test_env_seed_overrides(monkeypatch):
    monkeypatch.setenv("SSGP_SEED", "17")
    assert resolve_seed(3) == 17
    a = simulate("sinc", 50, seed=3)
    monkeypatch.delenv("SSGP_SEED")
    b = simulate("sinc", 50, seed=17)
    np.testing.assert_array_equal(a.y, b.y)
    monkeypatch.setenv("SSGP_SEED", "abc")
    with pytest.raises(ValueError, match="SSGP_SEED"):
        resolve_seed()


def test_noise_change_keeps_inputs():
    a = simulate("sinc", 100, seed=1)
    b = simulate("poisson", 100, seed=1)
    np.testing.assert_array_equal(a.t, b.t)


def test_sinusoid_gaps_are_exponential():
    ks = []
    for seed in range(20):
        d = simulate("sinusoids", 1000, seed=seed)
        gaps = np.diff(d.t)
        ks.append(stats.kstest(gaps, "expon", args=(0, gaps.mean())).statistic)
    assert np.median(ks) < 0.05


def test_sinusoid_support_and_noise_level():
    d = simulate("sinusoids", 2000, seed=0)
    assert d.t.min() >= 0 and d.t.max() <= 12
    assert np.std(d.y - d.f) == pytest.approx(0.1, rel=0.1)


def test_sinc_at_zero():
    assert sinc_f(np.array([0.0]))[0] == 0.0
    d = simulate("sinc", 100, seed=0, noise=0.0)
    np.testing.assert_array_equal(d.y, sinc_f(d.t))


def test_likelihood_specific_targets():
    assert set(np.unique(simulate("logistic", 200, seed=0).y)) <= {-1.0, 1.0}
    y = simulate("poisson", 200, seed=0).y
    assert np.all(y >= 0) and np.all(y == np.round(y))
    d = simulate("studentt", 200, seed=0)
    base = simulate("sinc", 200, seed=0)
    # the outlier stream comes after the Gaussian noise, so 90% of targets coincide
    assert np.sum(d.y != base.y) == 20


def test_bad_arguments():
    with pytest.raises(ValueError, match="unknown generator"):
        simulate("airline", 10)
    with pytest.raises(ValueError):
        simulate("sinc", 0)


class TestReadCSV:
    def write(self, tmp_path, text):
        p = tmp_path / "data.csv"
        p.write_text(text)
        return p

    def test_three_rows(self, tmp_path):
        d = read_csv(self.write(tmp_path, "0.1,1.0\n0.2,2.0\n0.3,3.0\n"))
        assert d.n == 3
        np.testing.assert_array_equal(d.y, [1.0, 2.0, 3.0])

    def test_header_sorting_duplicates_and_missing(self, tmp_path):
        d = read_csv(self.write(tmp_path, "t,y\n2.0,5\n1.5,\n1.0,1\n2.0,6\n"))
        np.testing.assert_array_equal(d.t, [1.0, 1.5, 2.0, 2.0])
        assert np.isnan(d.y[1])
        np.testing.assert_array_equal(d.y[[0, 2, 3]], [1.0, 5.0, 6.0])
        assert d.mask.tolist() == [True, False, True, True]

    def test_malformed_row_names_line(self, tmp_path):
        with pytest.raises(ValueError, match=":3:"):
            read_csv(self.write(tmp_path, "t,y\n1,2\nx,3\n"))
        with pytest.raises(ValueError, match=":2:"):
            read_csv(self.write(tmp_path, "1,2\n1,2,3\n"))
        with pytest.raises(ValueError, match="non-finite"):
            read_csv(self.write(tmp_path, "1,inf\n"))

    def test_roundtrip(self, tmp_path):
        d = simulate("sinc", 20, seed=2)
        d.y[3] = np.nan
        p = tmp_path / "rt.csv"
        d.to_csv(p)
        e = read_csv(p)
        np.testing.assert_array_equal(e.t, d.t)
        np.testing.assert_array_equal(np.isnan(e.y), np.isnan(d.y))
        np.testing.assert_array_equal(e.y[e.mask], d.y[d.mask])


def test_kfold_partition():
    folds = kfold_indices(103, 10, seed=1)
    assert len(folds) == 10
    allidx = np.concatenate(folds)
    np.testing.assert_array_equal(np.sort(allidx), np.arange(103))
    assert {len(f) for f in folds} <= {10, 11}
    again = kfold_indices(103, 10, seed=1)
    assert all(np.array_equal(a, b) for a, b in zip(folds, again))
    with pytest.raises(ValueError):
        kfold_indices(5, 10)
