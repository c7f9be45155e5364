"""Frailty-mixed nonhomogeneous Poisson model for bivariate panel counts.

Given a subject frailty ``Z ~ Exponential(rate=zeta)``, event type ``j``
follows a Poisson process with intensity ``Z * a_j * t**b_j``.  Counts are
recorded on the inspection intervals ``(tau[l-1], tau[l]]``.  Integrating
out ``Z`` gives, with ``M = sum(n)`` and ``S = sum_jl a_j * Delta_jl``::

    f(n) = zeta * M! * prod (a_j Delta_jl)**n_jl
           / (prod n_jl! * (zeta + S)**(M + 1))

Count vectors are laid out interval-major, event-minor:
``(n_11, n_21, n_12, n_22, ..., n_1k, n_2k)``.

Scaling ``(zeta, a1, a2)`` by a common positive factor leaves ``f``
unchanged, so the five parameters are identified only up to that ray.
:func:`scale_direction` returns the tangent of the orbit.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np
from scipy.special import gammaln

PARAM_NAMES = ("zeta", "a1", "b1", "a2", "b2")
N_PARAMS = 5
ENUMERATION_LIMIT = 10**8


class CapacityError(ValueError):
    """Raised when a requested support enumeration is too large."""


@dataclass(frozen=True)
class ModelParams:
    zeta: float
    a1: float
    b1: float
    a2: float
    b2: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = float(getattr(self, name))
            if not (value > 0.0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a finite positive number, got {value!r}")
            object.__setattr__(self, name, value)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "ModelParams":
        values = np.asarray(values, dtype=float).ravel()
        if values.shape != (N_PARAMS,):
            raise ValueError(f"expected {N_PARAMS} parameter values, got {values.shape}")
        return cls(*(float(v) for v in values))

    def to_array(self) -> np.ndarray:
        return np.array([self.zeta, self.a1, self.b1, self.a2, self.b2])

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(*(float(d[name]) for name in PARAM_NAMES))


@dataclass(frozen=True)
class ObservationSchedule:
    """Inspection times ``tau_0 < tau_1 < ... < tau_k`` with ``tau_0 > 0``."""

    taus: tuple

    def __post_init__(self):
        taus = tuple(float(t) for t in self.taus)
        if len(taus) < 2:
            raise ValueError("a schedule needs at least two inspection times (k >= 1)")
        if not taus[0] > 0.0:
            raise ValueError("tau_0 must be strictly positive")
        if any(not math.isfinite(t) for t in taus):
            raise ValueError("inspection times must be finite")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValueError("inspection times must be strictly increasing")
        object.__setattr__(self, "taus", taus)

    @property
    def k(self) -> int:
        return len(self.taus) - 1

    @property
    def n_cells(self) -> int:
        return 2 * self.k

    def as_array(self) -> np.ndarray:
        return np.asarray(self.taus)


@dataclass(frozen=True)
class PanelDataset:
    """``m`` subjects by ``2k`` counts, sharing one schedule."""

    schedule: ObservationSchedule
    counts: np.ndarray
    subject_ids: tuple = ()

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValueError("counts must be a 2-d array (subjects x cells)")
        if counts.shape[0] < 1:
            raise ValueError("a dataset needs at least one subject")
        if counts.shape[1] != self.schedule.n_cells:
            raise ValueError(
                f"rows have {counts.shape[1]} cells, schedule expects {self.schedule.n_cells}"
            )
        if not np.all(np.isfinite(counts)) or np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise ValueError("counts must be nonnegative integers")
        counts = counts.astype(np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        ids = tuple(str(s) for s in self.subject_ids)
        if not ids:
            ids = tuple(f"s{i + 1:04d}" for i in range(counts.shape[0]))
        if len(ids) != counts.shape[0]:
            raise ValueError("subject_ids length does not match the number of rows")
        object.__setattr__(self, "subject_ids", ids)

    @property
    def m(self) -> int:
        return self.counts.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PanelDataset):
            return NotImplemented
        return (
            self.schedule == other.schedule
            and self.subject_ids == other.subject_ids
            and np.array_equal(self.counts, other.counts)
        )

    __hash__ = None


def _as_counts(n, schedule: ObservationSchedule) -> np.ndarray:
    n = np.asarray(n)
    if n.shape[-1] != schedule.n_cells:
        raise ValueError(f"count vectors need {schedule.n_cells} entries, got {n.shape[-1]}")
    if np.any(n < 0):
        raise ValueError("counts must be nonnegative")
    return n


@lru_cache(maxsize=4096)
def _increments_cached(schedule: ObservationSchedule, b: float) -> tuple:
    taus = schedule.as_array()
    powered = taus**b
    inc = np.diff(powered)
    # d/db (tau_l**b - tau_{l-1}**b)
    dinc = np.diff(powered * np.log(taus))
    inc.setflags(write=False)
    dinc.setflags(write=False)
    return inc, dinc


def interval_increments(schedule: ObservationSchedule, b: float) -> np.ndarray:
    """Return ``tau_l**b - tau_{l-1}**b`` for ``l = 1..k`` (read-only)."""
    return _increments_cached(schedule, float(b))[0]


def _increment_derivatives(schedule: ObservationSchedule, b: float) -> np.ndarray:
    return _increments_cached(schedule, float(b))[1]


def cell_rates(theta: ModelParams, schedule: ObservationSchedule) -> np.ndarray:
    """``a_j * Delta_jl`` in the interval-major, event-minor layout."""
    rates = np.empty(schedule.n_cells)
    rates[0::2] = theta.a1 * interval_increments(schedule, theta.b1)
    rates[1::2] = theta.a2 * interval_increments(schedule, theta.b2)
    return rates


def total_rate(theta: ModelParams, schedule: ObservationSchedule) -> float:
    """``S = sum_l (a1 Delta_1l + a2 Delta_2l)``."""
    return float(
        theta.a1 * interval_increments(schedule, theta.b1).sum()
        + theta.a2 * interval_increments(schedule, theta.b2).sum()
    )


def log_pmf(n, theta: ModelParams, schedule: ObservationSchedule) -> np.ndarray:
    """Log of the marginal pmf; ``n`` may be a single vector or a stack of rows."""
    n = _as_counts(n, schedule)
    log_rates = np.log(cell_rates(theta, schedule))
    denom = math.log(theta.zeta + total_rate(theta, schedule))
    total = n.sum(axis=-1)
    return (
        math.log(theta.zeta)
        + gammaln(total + 1.0)
        + n @ log_rates
        - gammaln(n + 1.0).sum(axis=-1)
        - (total + 1.0) * denom
    )


_TINY = np.finfo(float).tiny


def pmf(n, theta: ModelParams, schedule: ObservationSchedule) -> np.ndarray:
    """Marginal probability mass; underflow is clamped to the smallest normal double."""
    return np.maximum(np.exp(log_pmf(n, theta, schedule)), _TINY)


def neg_log_likelihood(data: PanelDataset, theta: ModelParams) -> float:
    """Exact ``-sum_i log f(N_i)``, data-only constants included."""
    return float(-np.sum(log_pmf(data.counts, theta, data.schedule)))


@dataclass(frozen=True)
class ScoreTerms:
    """Pieces that make the score affine in ``(n, M)``: ``u = base + n @ per_count + M * per_total``."""

    base: np.ndarray
    per_count: np.ndarray
    per_total: np.ndarray

    @property
    def slope(self) -> np.ndarray:
        """``P`` with ``u(n) = base + n @ P`` (the total ``M`` folded into each cell)."""
        return self.per_count + self.per_total[None, :]


def score_terms(theta: ModelParams, schedule: ObservationSchedule) -> ScoreTerms:
    k = schedule.k
    d1 = interval_increments(schedule, theta.b1)
    d2 = interval_increments(schedule, theta.b2)
    dd1 = _increment_derivatives(schedule, theta.b1)
    dd2 = _increment_derivatives(schedule, theta.b2)
    denom = theta.zeta + theta.a1 * d1.sum() + theta.a2 * d2.sum()

    # the (M + 1) factor splits into a constant part and a per-event part
    per_total = np.array(
        [
            -1.0 / denom,
            -d1.sum() / denom,
            -theta.a1 * dd1.sum() / denom,
            -d2.sum() / denom,
            -theta.a2 * dd2.sum() / denom,
        ]
    )
    base = per_total.copy()
    base[0] += 1.0 / theta.zeta

    per_count = np.zeros((2 * k, N_PARAMS))
    per_count[0::2, 1] = 1.0 / theta.a1
    per_count[0::2, 2] = dd1 / d1
    per_count[1::2, 3] = 1.0 / theta.a2
    per_count[1::2, 4] = dd2 / d2
    return ScoreTerms(base, per_count, per_total)


def score(n, theta: ModelParams, schedule: ObservationSchedule) -> np.ndarray:
    """Analytic gradient of ``log f(n)`` with respect to ``(zeta, a1, b1, a2, b2)``."""
    n = _as_counts(n, schedule).astype(float)
    terms = score_terms(theta, schedule)
    total = n.sum(axis=-1)
    return terms.base + n @ terms.per_count + np.multiply.outer(total, terms.per_total)


def scale_direction(theta: ModelParams) -> np.ndarray:
    """Unit tangent of the orbit ``c -> (c zeta, c a1, b1, c a2, b2)`` along which ``f`` is constant."""
    v = np.array([theta.zeta, theta.a1, 0.0, theta.a2, 0.0])
    return v / np.linalg.norm(v)


def canonical_scale(theta: ModelParams, zeta: float) -> ModelParams:
    """Move ``theta`` along its invariance orbit to the point with the given ``zeta``."""
    c = zeta / theta.zeta
    return ModelParams(zeta, theta.a1 * c, theta.b1, theta.a2 * c, theta.b2)


# ------------------------------------------------------------------ #
# Support enumeration
# ------------------------------------------------------------------ #


def enumerate_support(schedule: ObservationSchedule, n_max: int) -> Iterator[tuple]:
    """Yield every count vector with each cell in ``[0, n_max]``, lexicographically."""
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    size = (n_max + 1) ** schedule.n_cells
    if size > ENUMERATION_LIMIT:
        raise CapacityError(
            f"box support has {size} points, above the {ENUMERATION_LIMIT} limit"
        )
    return itertools.product(range(n_max + 1), repeat=schedule.n_cells)


def box_support(schedule: ObservationSchedule, n_max: int) -> np.ndarray:
    size = (n_max + 1) ** schedule.n_cells
    if size > ENUMERATION_LIMIT:
        raise CapacityError(
            f"box support has {size} points, above the {ENUMERATION_LIMIT} limit"
        )
    grids = np.meshgrid(*([np.arange(n_max + 1)] * schedule.n_cells), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def truncation_mass(theta: ModelParams, schedule: ObservationSchedule, n_max: int) -> float:
    """Total pmf over the per-cell box ``[0, n_max]^(2k)``."""
    return float(np.sum(pmf(box_support(schedule, n_max), theta, schedule)))


def _compositions(total: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to ``total``, reverse-lex."""
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    # stars and bars: bar positions among total + parts - 1 slots
    bars = np.array(list(itertools.combinations(range(total + parts - 1), parts - 1)), dtype=np.int64)
    bars = bars.reshape(-1, parts - 1)
    edges = np.column_stack([np.full(len(bars), -1), bars, np.full(len(bars), total + parts - 1)])
    return np.diff(edges, axis=1) - 1


@lru_cache(maxsize=64)
def _simplex_support_cached(n_cells: int, max_total: int) -> np.ndarray:
    blocks = [_compositions(t, n_cells) for t in range(max_total + 1)]
    out = np.vstack(blocks)
    out.setflags(write=False)
    return out


def simplex_support(schedule: ObservationSchedule, max_total: int) -> np.ndarray:
    """All count vectors with ``sum(n) <= max_total``, ordered by total then lexicographically."""
    if max_total < 0:
        raise ValueError("max_total must be nonnegative")
    size = math.comb(max_total + schedule.n_cells, schedule.n_cells)
    if size > ENUMERATION_LIMIT:
        raise CapacityError(
            f"simplex support has {size} points, above the {ENUMERATION_LIMIT} limit"
        )
    return _simplex_support_cached(schedule.n_cells, int(max_total))


def total_count_tail(theta: ModelParams, schedule: ObservationSchedule, max_total: int) -> float:
    """Exact ``P(M > max_total)``; ``M`` is geometric with success probability ``zeta/(zeta+S)``."""
    s = total_rate(theta, schedule)
    return math.exp((max_total + 1) * math.log(s / (theta.zeta + s)))


def required_total(
    theta: ModelParams, schedule: ObservationSchedule, tail_tol: float, minimum: int = 0
) -> int:
    """Smallest ``max_total >= minimum`` whose excluded mass is at most ``tail_tol``."""
    s = total_rate(theta, schedule)
    log_q = math.log(s / (theta.zeta + s))
    needed = math.ceil(math.log(tail_tol) / log_q) - 1
    needed = max(needed, minimum, 0)
    # guard against rounding right at the boundary
    while total_count_tail(theta, schedule, needed) > tail_tol:
        needed += 1
    return needed
