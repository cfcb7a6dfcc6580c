"""Holdout-based scoring: prediction error, balancing factor, importance.

A holdout dataset (same covariate layout as the matching data, never
matched itself) drives two kinds of decisions. First, the quality of a
candidate retained covariate set is scored by how well linear models on
those covariates predict the holdout outcomes, separately per treatment
arm; dropping covariates that carry outcome signal shows up as a jump
in this prediction error. Second, covariate weights can be derived from
the holdout by permutation importance: covariates whose shuffling hurts
prediction the most get the largest weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ConfigError, CovariateSet, Dataset

__all__ = [
    "FitResult",
    "fit_least_squares",
    "prediction_error",
    "balancing_factor",
    "match_quality",
    "permutation_importance",
    "weights_from_importance",
]


@dataclass(frozen=True)
class FitResult:
    """Linear fit; ``coef`` has one entry per feature plus a trailing intercept."""

    coef: np.ndarray
    rank_deficient: bool

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return X @ self.coef[:-1] + self.coef[-1]


def fit_least_squares(
    X: np.ndarray, y: np.ndarray, ridge_lambda: float = 0.0
) -> FitResult:
    """Least-squares fit of y on X with an intercept appended as the last column.

    With ``ridge_lambda == 0`` the minimum-norm least-squares solution
    is used, which tolerates rank deficiency. With a positive ridge
    penalty the normal equations are solved directly; the penalty
    applies to every coefficient including the intercept.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ConfigError("X must be 2-d and y 1-d with matching rows")
    if ridge_lambda < 0:
        raise ConfigError("ridge_lambda must be nonnegative")
    n, k = X.shape
    design = np.column_stack([X, np.ones(n)])
    if ridge_lambda == 0.0:
        coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
        return FitResult(coef=coef, rank_deficient=rank < k + 1)
    gram = design.T @ design
    gram[np.diag_indices_from(gram)] += ridge_lambda
    coef = np.linalg.solve(gram, design.T @ y)
    return FitResult(coef=coef, rank_deficient=False)


def _side_loss(X: np.ndarray, y: np.ndarray, ridge_lambda: float) -> float:
    fit = fit_least_squares(X, y, ridge_lambda)
    resid = y - fit.predict(X)
    return float(np.mean(resid * resid))


def prediction_error(
    holdout: Dataset, retained: CovariateSet, ridge_lambda: float = 0.0
) -> float:
    """Two-sided training prediction error of the retained covariates.

    Fits one linear model on the holdout's control units and one on its
    treated units, each using only the retained covariate columns, and
    returns the sum of the two mean squared training residuals. Lower
    is better; a retained set that discards outcome-relevant covariates
    pays for it here.
    """
    if len(retained) == 0:
        raise ConfigError("retained covariate set must be nonempty")
    t = holdout.treatment == 1
    if not t.any() or t.all():
        raise ConfigError("holdout needs both treated and control units")
    cols = list(retained.members)
    X = holdout.codes[:, cols].astype(np.float64)
    y = holdout.outcome
    return _side_loss(X[~t], y[~t], ridge_lambda) + _side_loss(X[t], y[t], ridge_lambda)


def balancing_factor(
    matched_control: int,
    remaining_control: int,
    matched_treated: int,
    remaining_treated: int,
) -> float:
    """Fraction of available control plus fraction of available treated matched.

    ``remaining_*`` counts the units still unmatched before this round.
    An exhausted side contributes 0 when it also matched nothing and 1
    otherwise, so the value stays in [0, 2] in all cases.
    """

    def frac(matched: int, remaining: int) -> float:
        if remaining <= 0:
            return 0.0 if matched <= 0 else 1.0
        return matched / remaining

    return frac(matched_control, remaining_control) + frac(
        matched_treated, remaining_treated
    )


def match_quality(pe: float, bf: float, tradeoff_c: float) -> float:
    """Combined score: ``tradeoff_c * bf - pe``. Higher is better."""
    return tradeoff_c * bf - pe


def permutation_importance(
    holdout: Dataset,
    n_shuffles: int = 100,
    ridge_lambda: float = 0.1,
    seed: int = 0,
) -> np.ndarray:
    """Per-covariate importance scores from column shuffling on the holdout.

    For each covariate the column is randomly permuted across all
    holdout rows, both per-arm models are refit, and the two-sided loss
    is compared against the unshuffled baseline. The score is the mean
    ratio of shuffled to baseline loss over ``n_shuffles`` repeats:
    about 1 for covariates the outcome ignores, larger for covariates
    that matter. Each (covariate, repeat) pair draws from its own seed
    stream, so scores do not depend on evaluation order.
    """
    if n_shuffles < 1:
        raise ConfigError("n_shuffles must be positive")
    t = holdout.treatment == 1
    if not t.any() or t.all():
        raise ConfigError("holdout needs both treated and control units")
    X = holdout.codes.astype(np.float64)
    y = holdout.outcome
    base = _side_loss(X[~t], y[~t], ridge_lambda) + _side_loss(X[t], y[t], ridge_lambda)
    denom = max(base, 1e-12)

    n, p = X.shape
    scores = np.empty(p, dtype=np.float64)
    for j in range(p):
        total = 0.0
        for trial in range(n_shuffles):
            rng = np.random.default_rng([seed, j, trial])
            Xp = X.copy()
            Xp[:, j] = X[rng.permutation(n), j]
            loss = _side_loss(Xp[~t], y[~t], ridge_lambda) + _side_loss(
                Xp[t], y[t], ridge_lambda
            )
            total += loss / denom
        scores[j] = total / n_shuffles
    return scores


def weights_from_importance(scores: np.ndarray) -> np.ndarray:
    """Shift scores so the least important covariate sits at zero weight."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ConfigError("scores must be a nonempty 1-d array")
    w = scores - scores.min()
    return np.maximum(w, 0.0)
