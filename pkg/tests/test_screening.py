import warnings

import numpy as np
import pytest

from layered_ggm import simgen
from layered_ggm.screening import ScreeningFailed, SupportSet, screen


@pytest.fixture(scope="module")
def small_problem():
    rec = simgen.ModelRecipe("two_layer_a", (12, 8), 80)
    truth = simgen.build_truth(rec, [2, 0])
    data = simgen.gen_dataset(truth, 80, [2, 1])
    return truth, data.layers[0], data.layers[1], screen(data.layers[0], data.layers[1], 0.1)


def test_zero_alpha_gives_empty_supports(small_problem):
    _, x, y, _ = small_problem
    s = screen(x, y, alpha=0.0)
    assert all(len(idx) == 0 for idx in s.per_response)
    assert s.alpha_star == 0.0


def test_alpha_star_one_gives_full_supports(small_problem):
    _, x, y, _ = small_problem
    p1, p2 = x.shape[1], y.shape[1]
    s = screen(x, y, alpha=p1 * p2)
    assert s.alpha_star == 1.0
    assert all(np.array_equal(idx, np.arange(p1)) for idx in s.per_response)


def test_bonferroni_arithmetic(small_problem):
    _, x, y, s = small_problem
    assert s.alpha_star * x.shape[1] * y.shape[1] == pytest.approx(s.alpha, rel=1e-15)


def test_monotone_in_alpha(small_problem):
    _, _, _, s = small_problem
    levels = [0.0, 1e-4, 0.01, 0.1, 0.5, 1.0, 10.0]
    sets = [s.with_alpha(a) for a in levels]
    for lo, hi in zip(sets, sets[1:]):
        for a, b in zip(lo.per_response, hi.per_response):
            assert set(a) <= set(b)


def test_with_alpha_matches_refit(small_problem):
    _, x, y, s = small_problem
    direct = screen(x, y, alpha=0.5)
    again = s.with_alpha(0.5)
    for a, b in zip(direct.per_response, again.per_response):
        assert np.array_equal(a, b)


def test_deterministic_and_thread_invariant(small_problem):
    _, x, y, s = small_problem
    t = screen(x, y, 0.1, threads=3)
    assert np.array_equal(s.p_values, t.p_values)
    for a, b in zip(s.per_response, t.per_response):
        assert np.array_equal(a, b)


def test_indices_valid_and_mask(small_problem):
    _, x, _, s = small_problem
    p1 = x.shape[1]
    mask = s.mask(p1)
    for j, idx in enumerate(s.per_response):
        assert np.all((idx >= 0) & (idx < p1))
        assert np.array_equal(np.flatnonzero(mask[:, j]), idx)


def test_strong_signals_retained(small_problem):
    truth, x, _, s = small_problem
    b = truth.coeff[(0, 1)]
    kept = s.mask(x.shape[1])
    assert kept[b != 0].mean() >= 0.9


def test_p_value_dump(small_problem, tmp_path):
    _, _, _, s = small_problem
    s.dump_p_values(tmp_path / "p.csv")
    back = np.loadtxt(tmp_path / "p.csv", delimiter=",")
    assert np.array_equal(back, s.p_values)


def test_fail_open_on_solver_error(small_problem):
    _, x, y, _ = small_problem
    y_bad = y.copy()
    y_bad[:, 2] = np.nan
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        s = screen(x, y_bad, 0.1)
    assert s.failed == (2,)
    assert any(issubclass(w.category, ScreeningFailed) for w in caught)
    assert np.array_equal(s.per_response[2], np.arange(x.shape[1]))
    assert np.all(np.isnan(s.p_values[2]))


def test_full_support_set():
    s = SupportSet.full(4, 3, alpha=0.2)
    assert len(s.per_response) == 3 and s.alpha_star == pytest.approx(0.2 / 12)


@pytest.mark.slow
def test_family_wise_rate_and_retention():
    fw, kept, total = 0, 0, 0
    for seed in range(20):
        rec = simgen.ModelRecipe("two_layer_a", (30, 60), 100)
        truth = simgen.build_truth(rec, [seed, 0])
        data = simgen.gen_dataset(truth, 100, [seed, 1])
        mask = screen(data.layers[0], data.layers[1], 0.1).mask(30)
        b = truth.coeff[(0, 1)] != 0
        fw += bool(np.any(mask & ~b))
        kept += int(np.sum(mask & b))
        total += int(b.sum())
    assert fw / 20 <= 0.2
    assert kept / total >= 0.9
