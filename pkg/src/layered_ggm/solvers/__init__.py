"""Convex subproblem solvers: weighted Lasso, restricted OLS, weighted glasso, de-biased Lasso."""
from .lasso import LassoProblem, LassoFit, lasso_cd, lasso_kkt_residual, ols_restricted, solve_lasso
from .glasso import (
    GlassoProblem,
    GlassoFit,
    glasso,
    glasso_kkt_residual,
    glasso_objective,
    solve_glasso,
)
from .debias import DebiasConfig, DebiasResult, debiased_lasso, debias_m_matrix, scaled_lasso

__all__ = [
    "LassoProblem", "LassoFit", "lasso_cd", "lasso_kkt_residual", "ols_restricted", "solve_lasso",
    "GlassoProblem", "GlassoFit", "glasso", "glasso_kkt_residual", "glasso_objective", "solve_glasso",
    "DebiasConfig", "DebiasResult", "debiased_lasso", "debias_m_matrix", "scaled_lasso",
]
