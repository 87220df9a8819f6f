import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from layered_ggm import evalkit, simgen
from layered_ggm.errors import TooLarge


def test_perfect_recovery():
    truth = np.array([[1.0, 0.0, 2.0], [0.0, -1.0, 0.0]])
    m = evalkit.support_metrics(truth.copy(), truth)
    assert (m.sen, m.spe, m.mcc, m.rel_fnorm) == (1.0, 1.0, 1.0, 0.0)


def test_mcc_from_counts_example():
    assert evalkit.mcc_from_counts(3, 1, 5, 1) == pytest.approx(14 / 24)


def test_counts_from_patterns():
    truth = np.array([1, 1, 1, 1, 0, 0, 0, 0, 0, 0], dtype=float)
    est = np.array([1, 1, 1, 0, 1, 0, 0, 0, 0, 0], dtype=float)
    m = evalkit.support_metrics(est, truth)
    assert (m.tp, m.fp, m.tn, m.fn) == (3, 1, 5, 1)
    assert m.sen == pytest.approx(0.75) and m.spe == pytest.approx(5 / 6)
    assert m.mcc == pytest.approx(14 / 24)


def test_all_zero_truth_conventions():
    m = evalkit.support_metrics(np.zeros((3, 3)), np.zeros((3, 3)))
    assert m.sen == 1.0 and m.spe == 1.0 and m.mcc == 0.0


def test_shape_mismatch():
    with pytest.raises(ValueError):
        evalkit.support_metrics(np.zeros((2, 3)), np.zeros((3, 2)))


def test_off_diagonal_uses_upper_triangle():
    truth = np.array([[2.0, 0.5, 0.0], [0.5, 2.0, 0.0], [0.0, 0.0, 2.0]])
    est = np.array([[1.0, 0.0, 0.3], [0.0, 1.0, 0.0], [0.3, 0.0, 1.0]])
    m = evalkit.support_metrics(est, truth, off_diagonal_only=True)
    assert m.tp + m.fp + m.tn + m.fn == 3
    assert (m.tp, m.fp, m.tn, m.fn) == (0, 1, 1, 1)


def test_threshold_ignores_round_off():
    truth = np.array([1.0, 0.0])
    m = evalkit.support_metrics(np.array([1.0, 1e-14]), truth)
    assert m.fp == 0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_mcc_symmetric_and_bounded(tp, fp, tn, fn):
    a = evalkit.mcc_from_counts(tp, fp, tn, fn)
    assert a == pytest.approx(evalkit.mcc_from_counts(tn, fn, tp, fp))
    assert -1.0 - 1e-12 <= a <= 1.0 + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_self_comparison_has_unit_mcc(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((6, 7)) * (rng.random((6, 7)) < 0.4)
    x[0, 0], x[0, 1] = 1.0, 0.0
    m = evalkit.support_metrics(x, x)
    assert m.mcc == pytest.approx(1.0)
    assert 0 <= m.sen <= 1 and 0 <= m.spe <= 1
    assert m.tp + m.fp + m.tn + m.fn == x.size


def test_capacities_examples():
    assert evalkit.capacity(np.eye(4)) == 1.0
    b = np.zeros((3, 5))
    b[1, 2] = 2.0
    assert evalkit.capacity_in(b) == 2.0 and evalkit.capacity_out(b) == 2.0


def test_node_capacities_recompute():
    truth = simgen.build_truth(simgen.ModelRecipe.three_layer("B", (8, 7, 6), 20), 5)
    caps = evalkit.node_capacities(truth)
    for m, th in truth.precisions.items():
        assert caps["theta"][m] == max(sum(abs(v) for v in row) for row in th.tolist())
    for k, b in truth.coeff.items():
        assert caps["coeff_in"][k] == max(sum(abs(v) for v in col) for col in b.T.tolist())
        assert caps["coeff_out"][k] == max(sum(abs(v) for v in row) for row in b.tolist())


def test_eigen_bound_identity_equality():
    truth = simgen.GroundTruth([3, 4, 2], {(0, 1): np.zeros((3, 4))}, {0: np.eye(3), 1: np.eye(4), 2: np.eye(2)})
    bound, actual = evalkit.eigen_lower_bound(truth)
    assert bound == pytest.approx(1.0) and actual == pytest.approx(1.0)


def test_eigen_bound_scaling_first_factor():
    truth = simgen.build_truth(simgen.ModelRecipe.three_layer("A", (6, 5, 4), 20), 2)
    bound, _ = evalkit.eigen_lower_bound(truth)
    scaled = simgen.GroundTruth(truth.layer_dims, truth.coeff, {**truth.precisions, 0: 3.0 * truth.precisions[0]})
    assert evalkit.eigen_lower_bound(scaled)[0] == pytest.approx(bound / 3.0, rel=1e-12)


def test_super_layer_precision_inverts_joint_covariance():
    rng = np.random.default_rng(1)
    t1 = simgen.gen_precision(4, 0.5, 5.0, seed=rng)
    t2 = simgen.gen_precision(3, 0.5, 5.0, seed=rng)
    b = simgen.gen_sparse_coeff(4, 3, 0.5, seed=rng)
    s1 = np.linalg.inv(t1)
    s2 = np.linalg.inv(t2)
    joint = np.block([[s1, s1 @ b], [b.T @ s1, b.T @ s1 @ b + s2]])
    assert np.allclose(evalkit.super_layer_precision(t1, t2, b) @ joint, np.eye(7), atol=1e-10)


def test_structure_checks_identity():
    r = evalkit.structure_checks(np.eye(4))
    assert r.diag_dominant and np.allclose(r.psi, 1.0) and r.incoherence_margin == 1.0


def test_structure_checks_two_by_two():
    r = evalkit.structure_checks(np.array([[1.0, 0.9], [0.9, 1.0]]))
    assert r.diag_dominant
    assert r.dominance_margin == pytest.approx(0.1)
    assert np.allclose(r.psi, 0.1)


def test_structure_checks_not_dominant():
    theta = np.array([[1.0, 0.6, 0.6], [0.6, 2.0, 0.0], [0.6, 0.0, 2.0]])
    assert not evalkit.structure_checks(theta, incoherence=False).diag_dominant


def test_psi_is_signed():
    theta = np.array([[2.0, -0.5], [-0.5, 2.0]])
    r = evalkit.structure_checks(theta, incoherence=False)
    assert np.allclose(r.psi, 2.5)
    assert r.dominance_margin == pytest.approx(1.5)


def test_incoherence_size_limit():
    with pytest.raises(TooLarge):
        evalkit.incoherence_margin(np.eye(51))


def test_incoherence_chain_is_finite():
    theta = np.eye(4) + 0.3 * (np.eye(4, k=1) + np.eye(4, k=-1))
    margin = evalkit.incoherence_margin(theta)
    assert math.isfinite(margin) and margin <= 1.0
