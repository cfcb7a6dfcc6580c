"""Synthetic data generators for exercising and benchmarking the matcher.

All scenarios share one outcome form on binary covariates:

    y = sum_i alpha_i x_i                     (baseline, important block)
      + T * sum_i beta_i x_i                  (linear treatment effect)
      + T * U * sum_{i<j} x_i x_j             (pairwise treatment interactions)
      + tau * eps                             (noise, eps ~ N(0, noise_sd^2))

where the sums run over the first ``n_important`` covariates only; any
further covariates never touch the outcome. The true per-unit treatment
effect is therefore sum_i beta_i x_i + U * sum_{i<j} x_i x_j, constant
given the important covariate values, and every scenario returns it
alongside the data so estimates can be scored exactly.

Each scenario draws coefficients once and then generates a matching
dataset and an independent holdout from the same process, with all
randomness derived from a single integer seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ConfigError, CovariateSpec, Dataset

__all__ = [
    "ScenarioResult",
    "gen_outcome",
    "true_cate",
    "irrelevant_scenario",
    "exp_decay_scenario",
    "imbalance_scenario",
    "noise_scenario",
    "missing_scenario",
    "random_categorical_instance",
]


def _pair_sum(x: np.ndarray) -> np.ndarray:
    """Row-wise sum over i<j of x_i * x_j, via (sum^2 - sum of squares) / 2."""
    s = x.sum(axis=1)
    sq = (x * x).sum(axis=1)
    return (s * s - sq) / 2.0


def true_cate(x_important: np.ndarray, beta: np.ndarray, U: float) -> np.ndarray:
    """Per-row treatment effect implied by the shared outcome form."""
    x = np.asarray(x_important, dtype=np.float64)
    return x @ beta + U * _pair_sum(x)


def gen_outcome(
    x_important: np.ndarray,
    treatment: np.ndarray,
    alpha: np.ndarray,
    beta: np.ndarray,
    U: float = 1.0,
    tau: float = 0.0,
    noise_sd: float = 1.0,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Outcomes for the shared form; ``x_important`` excludes irrelevant columns."""
    x = np.asarray(x_important, dtype=np.float64)
    t = np.asarray(treatment, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != len(alpha) or len(alpha) != len(beta):
        raise ConfigError("x_important, alpha and beta disagree on the important count")
    y = x @ alpha + t * (x @ beta + U * _pair_sum(x))
    if tau != 0.0:
        if rng is None:
            raise ConfigError("noisy outcomes need an rng")
        y = y + tau * rng.normal(0.0, noise_sd, size=len(y))
    return y


@dataclass(frozen=True)
class ScenarioResult:
    """A generated matching dataset plus everything needed to score it."""

    data: Dataset
    holdout: Dataset
    true_cate: np.ndarray  # per unit of ``data``
    holdout_true_cate: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    U: float
    n_important: int


def _binary_specs(p: int, arity: int = 2) -> list[CovariateSpec]:
    return [CovariateSpec(f"x{j}", arity) for j in range(p)]


def _stack_arms(
    rng: np.random.Generator,
    n_control: int,
    n_treated: int,
    draw_control,
    draw_treated,
) -> tuple[np.ndarray, np.ndarray]:
    """Control rows first, then treated; returns (codes, treatment)."""
    xc = draw_control(n_control)
    xt = draw_treated(n_treated)
    codes = np.vstack([xc, xt])
    treatment = np.concatenate(
        [np.zeros(n_control, dtype=np.int8), np.ones(n_treated, dtype=np.int8)]
    )
    return codes, treatment


def _assemble(
    specs, codes, treatment, alpha, beta, U, tau, noise_sd, rng, n_important
) -> tuple[Dataset, np.ndarray]:
    x_imp = codes[:, :n_important]
    y = gen_outcome(x_imp, treatment, alpha, beta, U, tau, noise_sd, rng)
    d = Dataset(specs, codes, treatment, y)
    return d, true_cate(x_imp, beta, U)


def irrelevant_scenario(
    n_control: int = 15000,
    n_treated: int = 15000,
    n_important: int = 5,
    n_irrelevant: int = 10,
    U: float = 1.0,
    tau: float = 0.0,
    noise_sd: float = 1.0,
    holdout_n_control: Optional[int] = None,
    holdout_n_treated: Optional[int] = None,
    seed: int = 0,
) -> ScenarioResult:
    """Important covariates plus irrelevant ones whose distribution differs by arm.

    Important covariates are fair coins in both arms and carry baseline
    coefficients of magnitude about 10 with random sign; irrelevant
    covariates never enter the outcome but are rare (p=0.1) among
    controls and common (p=0.9) among treated, so matching on them
    exactly is possible yet pointless.
    """
    coef_rng = np.random.default_rng([seed, 0])
    sign = coef_rng.choice([-1.0, 1.0], size=n_important)
    alpha = coef_rng.normal(10.0 * sign, 1.0)
    beta = coef_rng.normal(1.5, 0.15, size=n_important)
    p = n_important + n_irrelevant
    specs = _binary_specs(p)

    def build(n_c: int, n_t: int, rng: np.random.Generator):
        def draw(n: int, irr_p: float) -> np.ndarray:
            imp = rng.binomial(1, 0.5, size=(n, n_important))
            irr = rng.binomial(1, irr_p, size=(n, n_irrelevant))
            return np.hstack([imp, irr]).astype(np.int64)

        codes, treatment = _stack_arms(
            rng, n_c, n_t, lambda n: draw(n, 0.1), lambda n: draw(n, 0.9)
        )
        return _assemble(
            specs, codes, treatment, alpha, beta, U, tau, noise_sd, rng, n_important
        )

    data, cates = build(n_control, n_treated, np.random.default_rng([seed, 1]))
    h_c = n_control if holdout_n_control is None else holdout_n_control
    h_t = n_treated if holdout_n_treated is None else holdout_n_treated
    holdout, h_cates = build(h_c, h_t, np.random.default_rng([seed, 2]))
    return ScenarioResult(data, holdout, cates, h_cates, alpha, beta, U, n_important)


def exp_decay_scenario(
    n_control: int = 15000,
    n_treated: int = 15000,
    p: int = 10,
    U: float = 0.0,
    tau: float = 0.0,
    noise_sd: float = 1.0,
    holdout_n_control: Optional[int] = None,
    holdout_n_treated: Optional[int] = None,
    seed: int = 0,
) -> ScenarioResult:
    """All covariates matter, with sharply decaying baseline importance.

    alpha_i = 64 * (1/2)^i, so covariate 0 dominates and each later one
    carries half the weight of the previous; beta is drawn around 1.5.
    The interesting question here is which covariates a matcher chooses
    to give up first.
    """
    coef_rng = np.random.default_rng([seed, 0])
    alpha = 64.0 * np.power(0.5, np.arange(p, dtype=np.float64))
    beta = coef_rng.normal(1.5, 0.15, size=p)
    specs = _binary_specs(p)

    def build(n_c: int, n_t: int, rng: np.random.Generator):
        draw = lambda n: rng.binomial(1, 0.5, size=(n, p)).astype(np.int64)
        codes, treatment = _stack_arms(rng, n_c, n_t, draw, draw)
        return _assemble(specs, codes, treatment, alpha, beta, U, tau, noise_sd, rng, p)

    data, cates = build(n_control, n_treated, np.random.default_rng([seed, 1]))
    h_c = n_control if holdout_n_control is None else holdout_n_control
    h_t = n_treated if holdout_n_treated is None else holdout_n_treated
    holdout, h_cates = build(h_c, h_t, np.random.default_rng([seed, 2]))
    return ScenarioResult(data, holdout, cates, h_cates, alpha, beta, U, p)


def imbalance_scenario(
    n_treated: int = 2000,
    n_control: int = 40000,
    p: int = 10,
    seed: int = 0,
    **kwargs,
) -> ScenarioResult:
    """Exponential-decay outcome with a control pool much larger than treated."""
    return exp_decay_scenario(
        n_control=n_control, n_treated=n_treated, p=p, seed=seed, **kwargs
    )


def noise_scenario(
    tau: float = 1.0,
    noise_sd: float = 1.0,
    n_control: int = 15000,
    n_treated: int = 15000,
    seed: int = 0,
    **kwargs,
) -> ScenarioResult:
    """The irrelevant-covariates setup with additive outcome noise turned on."""
    return irrelevant_scenario(
        n_control=n_control,
        n_treated=n_treated,
        tau=tau,
        noise_sd=noise_sd,
        seed=seed,
        **kwargs,
    )


def missing_scenario(
    n_control: int = 15000,
    n_treated: int = 5000,
    p: int = 10,
    block: int = 5,
    rho: float = 0.5,
    missing_rate: float = 0.2,
    U: float = 0.0,
    tau: float = 0.0,
    noise_sd: float = 1.0,
    holdout_n_control: Optional[int] = None,
    holdout_n_treated: Optional[int] = None,
    seed: int = 0,
) -> ScenarioResult:
    """Correlated binary covariates with values removed completely at random.

    Covariates come from thresholding a multivariate normal whose
    correlation is ``rho`` within consecutive blocks of ``block``
    columns and zero across blocks. Each generated cell is then masked
    with probability ``missing_rate`` independently of everything else;
    masked cells get a dedicated sentinel code (the last code of each
    covariate's alphabet) and are flagged in the dataset's missing
    mask. Outcomes are computed from the complete values before
    masking, and the holdout is generated without any masking.
    """
    if not 0.0 <= missing_rate < 1.0:
        raise ConfigError("missing_rate must be in [0, 1)")
    coef_rng = np.random.default_rng([seed, 0])
    alpha = coef_rng.normal(10.0, 1.0, size=p)
    beta = coef_rng.normal(1.5, 0.15, size=p)
    cov = np.eye(p)
    for start in range(0, p, block):
        stop = min(start + block, p)
        cov[start:stop, start:stop] = rho
    np.fill_diagonal(cov, 1.0)
    chol = np.linalg.cholesky(cov)
    # arity 3: codes 0/1 are the data, code 2 is the missing sentinel
    specs = _binary_specs(p, arity=3)

    def build(n_c: int, n_t: int, rate: float, rng: np.random.Generator):
        draw = lambda n: (rng.standard_normal((n, p)) @ chol.T > 0).astype(np.int64)
        complete, treatment = _stack_arms(rng, n_c, n_t, draw, draw)
        # outcomes and effects always use the complete pre-masking values
        y = gen_outcome(complete, treatment, alpha, beta, U, tau, noise_sd, rng)
        cates = true_cate(complete, beta, U)
        codes = complete
        mask = None
        if rate > 0.0:
            mask = rng.random(complete.shape) < rate
            codes = complete.copy()
            codes[mask] = 2
        d = Dataset(specs, codes, treatment, y, missing_mask=mask)
        return d, cates

    data, cates = build(
        n_control, n_treated, missing_rate, np.random.default_rng([seed, 1])
    )
    h_c = n_control if holdout_n_control is None else holdout_n_control
    h_t = n_treated if holdout_n_treated is None else holdout_n_treated
    holdout, h_cates = build(h_c, h_t, 0.0, np.random.default_rng([seed, 2]))
    return ScenarioResult(data, holdout, cates, h_cates, alpha, beta, U, p)


def random_categorical_instance(
    seed: int,
    n_range: tuple[int, int] = (20, 300),
    p_range: tuple[int, int] = (3, 10),
    max_arity: int = 4,
    max_weight: int = 8,
    min_weight: int = 0,
) -> tuple[Dataset, np.ndarray]:
    """Small random instance with integer weights, for oracle comparisons.

    Guarantees at least one treated and one control unit. Weights are
    small nonnegative integers so that weight sums are exact in floating
    point and independently computed optima can be compared for strict
    equality.
    """
    rng = np.random.default_rng([seed, 97])
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    p = int(rng.integers(p_range[0], p_range[1] + 1))
    arities = rng.integers(2, max_arity + 1, size=p)
    codes = np.column_stack([rng.integers(0, a, size=n) for a in arities])
    treatment = rng.integers(0, 2, size=n).astype(np.int8)
    if treatment.sum() == 0:
        treatment[int(rng.integers(0, n))] = 1
    if treatment.sum() == n:
        treatment[int(rng.integers(0, n))] = 0
    outcome = rng.normal(0.0, 1.0, size=n)
    specs = [CovariateSpec(f"x{j}", int(a)) for j, a in enumerate(arities)]
    weights = rng.integers(min_weight, max_weight + 1, size=p).astype(np.float64)
    if weights.sum() == 0:
        weights[0] = 1.0
    return Dataset(specs, codes, treatment, outcome), weights
