import math

import numpy as np
import pytest

from layered_ggm import evalkit, simgen
from layered_ggm.errors import BadConfig, TuningFailed
from layered_ggm.screening import screen
from layered_ggm.tuning import TuningGrid, bic, default_grid, grid_search, write_bic_table
from layered_ggm.twolayer import PenaltyConfig, fit_two_layer


@pytest.fixture(scope="module")
def problem():
    rec = simgen.ModelRecipe("two_layer_a", (12, 10), 80)
    truth = simgen.build_truth(rec, [1, 0])
    data = simgen.gen_dataset(truth, 80, [1, 1])
    x, y = data.layers
    return truth, x, y, screen(x, y)


def test_bic_identity_theta():
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((30, 3)), rng.standard_normal((30, 4))
    assert bic(np.zeros((3, 4)), np.eye(4), x, y) == pytest.approx(np.trace(y.T @ y / 30))


def test_bic_edge_counting():
    rng = np.random.default_rng(1)
    n = 40
    x, y = rng.standard_normal((n, 3)), rng.standard_normal((n, 4))
    b = np.zeros((3, 4))
    theta = 2.0 * np.eye(4)
    base = bic(b, theta, x, y)
    theta[1, 2] = theta[2, 1] = 0.3
    fit_change = 2 * 0.3 * float((y.T @ y / n)[1, 2]) - (np.log(np.linalg.det(theta)) - np.log(16.0))
    assert bic(b, theta, x, y) - base == pytest.approx(fit_change + math.log(n) / n, abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_bic_recomputation(seed):
    rng = np.random.default_rng(seed)
    n, p1, p2 = 30, 5, 4
    x, y = rng.standard_normal((n, p1)), rng.standard_normal((n, p2))
    b = rng.standard_normal((p1, p2)) * (rng.random((p1, p2)) < 0.5)
    a = rng.standard_normal((p2, p2)) * (rng.random((p2, p2)) < 0.5)
    theta = a @ a.T + p2 * np.eye(p2)
    e = y - x @ b
    s = e.T @ e / n
    k = (np.count_nonzero(theta) - p2) / 2 + np.count_nonzero(b)
    ref = -np.log(np.linalg.det(theta)) + np.trace(s @ theta) + np.log(n) / n * k
    assert bic(b, theta, x, y) == pytest.approx(ref, abs=1e-10)


def test_grid_validation():
    with pytest.raises(BadConfig):
        TuningGrid([0.2, 0.1], [0.1])
    with pytest.raises(BadConfig):
        TuningGrid([-0.1], [0.1])
    with pytest.raises(BadConfig):
        TuningGrid([], [0.1])


def test_default_grid_ranges():
    g = default_grid(100, 30, 60)
    assert len(g.lambdas) == 6 and len(g.rhos) == 6
    assert g.lambdas[0] == 0.0 and g.lambdas[-1] == pytest.approx(0.5 * math.sqrt(math.log(30) / 100))
    assert g.rhos[-1] == pytest.approx(0.5 * math.sqrt(math.log(60) / 100))


def test_single_point_grid(problem):
    _, x, y, sup = problem
    r = grid_search(x, y, sup, TuningGrid([0.03], [0.07]), PenaltyConfig())
    assert (r.lambda_star, r.rho_star) == (0.03, 0.07)
    assert len(r.table) == 1 and r.best.penalties.lam == 0.03


def test_huge_lambda_not_selected(problem):
    _, x, y, sup = problem
    r = grid_search(x, y, sup, TuningGrid([0.01, 100.0], [0.05]), PenaltyConfig())
    assert r.lambda_star == 0.01
    huge = next(row for row in r.table if row["lambda"] == 100.0)
    assert huge["card_B"] == 0


def test_selection_inside_grid_and_order_free(problem):
    _, x, y, sup = problem
    grid = TuningGrid([0.0, 0.02, 0.05], [0.02, 0.08])
    r = grid_search(x, y, sup, grid, PenaltyConfig())
    assert r.lambda_star in grid.lambdas and r.rho_star in grid.rhos
    r2 = grid_search(x, y, sup, grid, PenaltyConfig(), threads=3)
    assert (r.lambda_star, r.rho_star) == (r2.lambda_star, r2.rho_star)
    assert [row["bic"] for row in r.table] == [row["bic"] for row in r2.table]


def test_ties_prefer_larger_penalties(problem, monkeypatch):
    import layered_ggm.tuning as tuning

    _, x, y, sup = problem
    monkeypatch.setattr(tuning, "bic", lambda *a: 1.0)
    r = grid_search(x, y, sup, TuningGrid([0.01, 0.02], [0.03, 0.04]), PenaltyConfig())
    assert (r.lambda_star, r.rho_star) == (0.02, 0.04)


def test_all_points_failing(problem, monkeypatch):
    import layered_ggm.tuning as tuning

    _, x, y, sup = problem

    def boom(*a, **k):
        raise ValueError("boom")

    monkeypatch.setattr(tuning, "alternate", boom)
    with pytest.raises(TuningFailed):
        grid_search(x, y, sup, TuningGrid([0.01], [0.02]), PenaltyConfig())


def test_bic_table_export(problem, tmp_path):
    _, x, y, sup = problem
    r = grid_search(x, y, sup, TuningGrid([0.01, 0.03], [0.05]), PenaltyConfig())
    write_bic_table(tmp_path / "bic.csv", r.table)
    lines = (tmp_path / "bic.csv").read_text().splitlines()
    assert lines[0].startswith("lambda,rho,bic,card_B,card_Theta,iterations")
    assert len(lines) == 3


def test_pipeline_tunes_when_penalties_unset(problem):
    _, x, y, sup = problem
    est = fit_two_layer(x, y, PenaltyConfig(), tuning=TuningGrid([0.0, 0.03], [0.05, 0.1]), stability=False,
                        supports=sup)
    assert est.bic_table is not None and len(est.bic_table) == 4
    assert est.penalties.lam in (0.0, 0.03) and est.penalties.rho in (0.05, 0.1)


@pytest.mark.slow
def test_selected_close_to_best_in_grid():
    gaps = []
    for seed in range(10):
        rec = simgen.ModelRecipe("two_layer_a", (30, 60), 100)
        truth = simgen.build_truth(rec, [seed, 0])
        data = simgen.gen_dataset(truth, 100, [seed, 1])
        x, y = data.layers
        sup = screen(x, y)
        grid = default_grid(100, 30, 60)
        r = grid_search(x, y, sup, grid, PenaltyConfig())
        mccs = {}
        for lam, rho in grid.points():
            est = grid_search(x, y, sup, TuningGrid([lam], [rho]), PenaltyConfig(), scan_tol=False).best
            mccs[lam, rho] = evalkit.support_metrics(est.b_infty, truth.coeff[(0, 1)]).mcc
        gaps.append(max(mccs.values()) - mccs[r.lambda_star, r.rho_star])
    assert np.mean(gaps) <= 0.05
