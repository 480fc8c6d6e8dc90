"""Numerical verification of the correlated majority-voting model.

Correlated error indicators inflate the variance of the ensemble's mean
error; the closed forms below (variance inflation, effective sample
size) are checked against Monte-Carlo draws from the same Gaussian
copula the transcription simulator uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .rng import keyed_generator


@dataclass(frozen=True)
class VoteModel:
    """Correlated Bernoulli voters: marginal error rate, pairwise correlation."""

    error_rate: float
    correlation: float
    n_voters: int
    trials: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.error_rate < 0.5:
            raise ValueError(f"error_rate must be in [0, 0.5): {self.error_rate}")
        if not 0 <= self.correlation <= 1:
            raise ValueError(f"correlation must be in [0, 1]: {self.correlation}")
        if self.n_voters < 1:
            raise ValueError(f"n_voters must be >= 1: {self.n_voters}")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1: {self.trials}")

    @property
    def margin(self) -> float:
        """Distance of the error rate below the 1/2 failure threshold."""
        return 0.5 - self.error_rate


def effective_sample_size(n: int, rho: float) -> float:
    """Independent-voter equivalent of n voters with pairwise correlation rho."""
    if n < 1:
        raise ValueError(f"n must be >= 1: {n}")
    if not 0 <= rho <= 1:
        raise ValueError(f"rho must be in [0, 1]: {rho}")
    return n / (1.0 + (n - 1) * rho)


def analytic_variance(model: VoteModel, rho: float | None = None, error_rate: float | None = None) -> float:
    """Closed-form variance of the mean error under pairwise correlation.

    ``rho``/``error_rate`` override the model's parameters so the formula
    can be evaluated at empirically measured values.
    """
    eps = model.error_rate if error_rate is None else error_rate
    r = model.correlation if rho is None else rho
    n = model.n_voters
    return eps * (1.0 - eps) / n * (1.0 + (n - 1) * r)


@dataclass(frozen=True)
class MajoritySimResult:
    mean_error: float
    var_mean_error: float
    var_standard_error: float  # Monte-Carlo SE of the variance estimate
    failure_rate: float
    rho_empirical: float
    n_trials: int


def simulate_majority_error(model: VoteModel) -> MajoritySimResult:
    """Monte-Carlo majority voting over correlated Bernoulli error vectors.

    A vote fails when the mean error reaches 1/2 (exact ties count as
    failure). Returns the empirical variance of the mean error, the
    failure rate, and the measured pairwise Bernoulli correlation.
    """
    rng = keyed_generator("theory", model.seed, model.error_rate, model.correlation, model.n_voters)
    threshold = ndtri(model.error_rate)
    rho = model.correlation

    trials, n = model.trials, model.n_voters
    means = np.empty(trials)
    failures = 0
    ones_total = 0.0
    cross_total = 0.0
    chunk = max(1, 200_000 // max(n, 1))
    done = 0
    while done < trials:
        size = min(chunk, trials - done)
        z_common = rng.standard_normal((size, 1))
        z_own = rng.standard_normal((size, n))
        latent = np.sqrt(rho) * z_common + np.sqrt(1.0 - rho) * z_own
        errors = (latent < threshold).astype(np.float64)
        row_tot = errors.sum(axis=1)
        means[done : done + size] = row_tot / n
        failures += int(np.count_nonzero(row_tot >= 0.5 * n))
        ones_total += float(row_tot.sum())
        cross_total += float((row_tot * (row_tot - 1.0)).sum())
        done += size

    mean_error = float(means.mean())
    var_mean = float(means.var(ddof=1)) if trials > 1 else 0.0
    centered = means - mean_error
    m4 = float((centered**4).mean())
    var_se = float(np.sqrt(max(m4 - var_mean**2, 0.0) / trials)) if trials > 1 else 0.0

    return MajoritySimResult(
        mean_error=mean_error,
        var_mean_error=var_mean,
        var_standard_error=var_se,
        failure_rate=failures / trials,
        rho_empirical=_mean_pairwise_correlation(ones_total, cross_total, trials, n),
        n_trials=trials,
    )


def _mean_pairwise_correlation(ones_total: float, cross_total: float, trials: int, n: int) -> float:
    """Average pairwise Pearson correlation of exchangeable 0/1 columns.

    With a common marginal p, corr = (E[XY] - p^2) / (p (1 - p)).
    """
    if n < 2:
        return float("nan")
    p = ones_total / (trials * n)
    if p <= 0.0 or p >= 1.0:
        return float("nan")
    e_xy = cross_total / (trials * n * (n - 1))
    return float((e_xy - p * p) / (p * (1.0 - p)))


def correlation_sweep_rows(
    eps_values,
    rho_values,
    n_values,
    trials: int = 100_000,
    seed: int = 0,
) -> list[dict]:
    """CSV-ready rows comparing analytic and empirical voting behavior."""
    rows = []
    for eps in eps_values:
        for rho in rho_values:
            for n in n_values:
                model = VoteModel(
                    error_rate=eps, correlation=rho, n_voters=n, trials=trials, seed=seed
                )
                sim = simulate_majority_error(model)
                rows.append(
                    {
                        "error_rate": eps,
                        "rho_param": rho,
                        "rho_empirical": sim.rho_empirical,
                        "n_voters": n,
                        "n_eff": effective_sample_size(n, rho),
                        "var_analytic": analytic_variance(model),
                        "var_empirical": sim.var_mean_error,
                        "failure_rate": sim.failure_rate,
                    }
                )
    return rows
