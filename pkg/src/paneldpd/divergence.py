"""Density power divergence objective for the panel count model.

For a tuning parameter ``gamma > 0`` the per-subject loss is::

    V(N_i) = C(theta) - (1 + 1/gamma) * f(N_i)**gamma,
    C(theta) = sum_n f(n)**(1 + gamma)

and the estimator minimises the sample mean of ``V``.  The infinite sum in
``C`` runs over the total-count simplex ``{n : sum(n) <= M_max}``; the mass
left out is exactly ``P(M > M_max)``, which is certified against
``tail_tol`` before the sum is used.

Because the score is affine in the counts, ``u(n) = base + n @ P``, every
population sum of the form ``sum_n u(n) f(n)**w`` (or with ``u u^T``)
reduces to weighted zeroth, first and second moments of the support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .model import (
    ModelParams,
    ObservationSchedule,
    PanelDataset,
    cell_rates,
    log_pmf,
    required_total,
    score,
    score_terms,
    simplex_support,
    total_count_tail,
    total_rate,
)


@dataclass(frozen=True)
class DpdConfig:
    """Tuning parameter plus truncation policy.

    ``max_total`` pins the simplex support (useful for finite-difference
    checks, where the support must not move with ``theta``); when ``None`` it
    is chosen per ``theta`` as the smallest cap at or above ``min_total`` whose
    tail mass is below ``tail_tol``.
    """

    gamma: float
    tail_tol: float = 1e-6
    min_total: int = 5
    max_total: int | None = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0; use the likelihood for gamma = 0")
        if not (0 < self.tail_tol <= 1e-3):
            raise ValueError("tail_tol must lie in (0, 1e-3]")
        if self.min_total < 0:
            raise ValueError("min_total must be nonnegative")
        if self.max_total is not None and self.max_total < 0:
            raise ValueError("max_total must be nonnegative")

    def support_total(self, theta: ModelParams, schedule: ObservationSchedule) -> int:
        if self.max_total is not None:
            return self.max_total
        return required_total(theta, schedule, self.tail_tol, self.min_total)


@dataclass(frozen=True)
class _SupportTable:
    counts: np.ndarray  # float copy of the support
    totals: np.ndarray
    log_multinomial: np.ndarray  # log M! - sum log n!


@lru_cache(maxsize=64)
def _support_table(schedule: ObservationSchedule, max_total: int) -> _SupportTable:
    support = simplex_support(schedule, max_total)
    counts = support.astype(float)
    totals = counts.sum(axis=1)
    log_mult = gammaln(totals + 1.0) - gammaln(counts + 1.0).sum(axis=1)
    for arr in (counts, totals, log_mult):
        arr.setflags(write=False)
    return _SupportTable(counts, totals, log_mult)


@dataclass(frozen=True)
class PopulationTerms:
    """Model quantities evaluated once per ``theta`` over the truncated support."""

    support: np.ndarray
    log_f: np.ndarray
    base: np.ndarray
    slope: np.ndarray
    max_total: int
    tail: float

    @property
    def f(self) -> np.ndarray:
        return np.exp(self.log_f)

    @property
    def scores(self) -> np.ndarray:
        return self.base + self.support @ self.slope

    def moments(self, power: float) -> tuple:
        """``(sum w, sum w u, sum w u u^T)`` with weights ``w = f**power``."""
        w = np.exp(power * self.log_f)
        s0 = float(np.sum(w))
        s1 = w @ self.support
        s2 = (self.support * w[:, None]).T @ self.support
        first = s0 * self.base + s1 @ self.slope
        cross = np.outer(self.base, s1 @ self.slope)
        second = s0 * np.outer(self.base, self.base) + cross + cross.T + self.slope.T @ s2 @ self.slope
        return s0, first, 0.5 * (second + second.T)


@lru_cache(maxsize=64)
def _population(theta: ModelParams, schedule: ObservationSchedule, max_total: int) -> PopulationTerms:
    table = _support_table(schedule, max_total)
    log_denom = np.log(theta.zeta + total_rate(theta, schedule))
    log_f = (
        np.log(theta.zeta)
        + table.log_multinomial
        + table.counts @ np.log(cell_rates(theta, schedule))
        - (table.totals + 1.0) * log_denom
    )
    log_f.setflags(write=False)
    terms = score_terms(theta, schedule)
    return PopulationTerms(
        support=table.counts,
        log_f=log_f,
        base=terms.base,
        slope=terms.slope,
        max_total=max_total,
        tail=total_count_tail(theta, schedule, max_total),
    )


def population_terms(theta: ModelParams, schedule: ObservationSchedule, cfg: DpdConfig) -> PopulationTerms:
    return _population(theta, schedule, cfg.support_total(theta, schedule))


def normalization_term(theta: ModelParams, schedule: ObservationSchedule, cfg: DpdConfig) -> float:
    """``C(theta) = sum_n f(n)**(1 + gamma)`` over the certified support."""
    pop = population_terms(theta, schedule, cfg)
    return float(np.sum(np.exp((1.0 + cfg.gamma) * pop.log_f)))


def v_theta(n, theta: ModelParams, schedule: ObservationSchedule, cfg: DpdConfig) -> np.ndarray:
    """Per-observation loss ``V``; ``n`` may be one vector or a stack of rows."""
    c = normalization_term(theta, schedule, cfg)
    f_gamma = np.exp(cfg.gamma * log_pmf(n, theta, schedule))
    return c - (1.0 + 1.0 / cfg.gamma) * f_gamma


def dpd_objective(data: PanelDataset, theta: ModelParams, cfg: DpdConfig) -> float:
    """Sample mean of ``V`` over the subjects of ``data``.

    The data sum is exactly rounded, so the value does not depend on row order.
    """
    c = normalization_term(theta, data.schedule, cfg)
    f_gamma = np.exp(cfg.gamma * log_pmf(data.counts, theta, data.schedule))
    return float(c - (1.0 + 1.0 / cfg.gamma) * (math.fsum(f_gamma) / data.m))


def dpd_gradient(data: PanelDataset, theta: ModelParams, cfg: DpdConfig) -> np.ndarray:
    """Gradient of :func:`dpd_objective`.

    ``(1 + gamma) * [sum_n u(n) f(n)**(1+gamma) - mean_i u(N_i) f(N_i)**gamma]``
    """
    pop = population_terms(theta, data.schedule, cfg)
    _, model_part, _ = pop.moments(1.0 + cfg.gamma)
    f_gamma = np.exp(cfg.gamma * log_pmf(data.counts, theta, data.schedule))
    u = score(data.counts, theta, data.schedule)
    data_part = f_gamma @ u / data.m
    return (1.0 + cfg.gamma) * (model_part - data_part)


def nll_objective(data: PanelDataset, theta: ModelParams) -> float:
    """Mean negative log-likelihood, the ``gamma -> 0`` counterpart of :func:`dpd_objective`."""
    return float(-math.fsum(log_pmf(data.counts, theta, data.schedule)) / data.m)


def nll_gradient(data: PanelDataset, theta: ModelParams) -> np.ndarray:
    return -np.mean(score(data.counts, theta, data.schedule), axis=0)
