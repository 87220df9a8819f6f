import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from layered_ggm import numkit
from layered_ggm.errors import EmptyData, NotPositiveDefinite


def random_spd(rng, p):
    a = rng.standard_normal((p, p))
    return a @ a.T + p * 0.1 * np.eye(p)


def test_mvn_sample_identity_shape():
    x = numkit.mvn_sample(np.eye(2), 4, seed=3)
    assert x.shape == (4, 2)
    big = numkit.mvn_sample(np.eye(2), 20000, seed=3)
    np.testing.assert_allclose(np.cov(big.T), np.eye(2), atol=0.05)


def test_mvn_sample_correlation_large_n():
    sigma = np.array([[1.0, 0.9], [0.9, 1.0]])
    x = numkit.mvn_sample(sigma, 100_000, seed=11)
    assert abs(np.corrcoef(x.T)[0, 1] - 0.9) < 0.02


def test_mvn_sample_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        numkit.mvn_sample(np.array([[1.0, 2.0], [2.0, 1.0]]), 5, seed=0)


def test_mvn_sample_is_deterministic():
    sigma = random_spd(np.random.default_rng(0), 4)
    a = numkit.mvn_sample(sigma, 7, seed=42)
    b = numkit.mvn_sample(sigma, 7, seed=42)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, numkit.mvn_sample(sigma, 7, seed=43))


def test_sample_covariance_examples():
    assert np.array_equal(numkit.sample_covariance(np.zeros((5, 3))), np.zeros((3, 3)))
    np.testing.assert_array_equal(
        numkit.sample_covariance(np.array([[1.0, 2.0], [-1.0, -2.0]])), [[1.0, 2.0], [2.0, 4.0]]
    )
    assert numkit.sample_covariance(np.ones((4, 1)))[0, 0] == 1.0
    with pytest.raises(EmptyData):
        numkit.sample_covariance(np.zeros((0, 3)))


def test_center_columns_examples():
    np.testing.assert_array_equal(numkit.center_columns(np.array([[1.0], [2.0], [3.0]])).ravel(), [-1, 0, 1])
    np.testing.assert_array_equal(numkit.center_columns(np.array([[5.0], [5.0]])).ravel(), [0, 0])
    x = numkit.center_columns(np.random.default_rng(1).standard_normal((9, 3)))
    np.testing.assert_allclose(numkit.center_columns(x), x, atol=1e-15)


def test_log_det_examples():
    assert numkit.log_det_spd(np.eye(3)) == 0.0
    assert numkit.log_det_spd(np.diag([2.0, 3.0])) == pytest.approx(np.log(6.0), rel=1e-12)
    with pytest.raises(NotPositiveDefinite):
        numkit.log_det_spd(np.diag([1.0, -1.0]))


@pytest.mark.parametrize("seed", range(10))
def test_log_det_matches_eigenvalue_oracle(seed):
    a = random_spd(np.random.default_rng(seed), 4)
    oracle = np.sum(np.log(np.linalg.eigvalsh(a)))
    assert numkit.log_det_spd(a) == pytest.approx(oracle, rel=1e-8)
    assert numkit.log_det_spd(np.linalg.inv(a)) == pytest.approx(-oracle, rel=1e-8)


def test_eig_extremes_examples():
    assert numkit.eig_extremes(np.diag([1.0, 4.0])) == pytest.approx((1.0, 4.0))
    assert numkit.eig_extremes(np.array([[2.0, 1.0], [1.0, 2.0]])) == pytest.approx((1.0, 3.0))
    assert numkit.eig_extremes(np.eye(5)) == pytest.approx((1.0, 1.0))


def test_cholesky_tolerates_tiny_asymmetry():
    a = random_spd(np.random.default_rng(5), 3)
    a[0, 1] += 1e-15
    assert numkit.is_spd(a)


@settings(max_examples=50, deadline=None)
@given(
    n=st.integers(1, 12),
    p=st.integers(1, 6),
    seed=st.integers(0, 2**32 - 1),
)
def test_sample_covariance_is_symmetric_psd(n, p, seed):
    x = np.random.default_rng(seed).standard_normal((n, p)) * 10
    s = numkit.sample_covariance(x)
    assert np.array_equal(s, s.T)
    w = np.linalg.eigvalsh(s)
    assert w.min() >= -1e-10 * max(np.abs(s).max(), 1.0)


def test_csv_round_trip(tmp_path):
    m = np.random.default_rng(0).standard_normal((3, 4))
    numkit.write_matrix_csv(tmp_path / "m.csv", m)
    assert np.array_equal(numkit.read_matrix_csv(tmp_path / "m.csv"), m)
    col = m[:, :1]
    numkit.write_matrix_csv(tmp_path / "c.csv", col)
    assert np.array_equal(numkit.read_matrix_csv(tmp_path / "c.csv"), col)
