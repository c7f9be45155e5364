"""Data-driven choice of the tuning parameter ``gamma``.

Two selectors share one fit cache, so for every grid value both criteria see
the very same estimate:

* generalised score matching (GSM) on the unnormalised model
  ``p(n) = exp(-C + (1 + 1/gamma) f(n)**gamma)``, comparing ``p`` at each
  count vector with its one-step neighbours ``n +/- e_s``;
* the iterated Warwick-Jones rule (IWJ), minimising
  ``|theta_gamma - theta_P|^2 + tr(Sigma_gamma) / m`` and replacing the pilot
  ``theta_P`` by the newest estimate until the choice repeats.
"""

from __future__ import annotations

import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .asymptotics import AsymptoticsResult, sigma_restricted
from .constraints import ConstraintSet
from .divergence import DpdConfig, normalization_term
from .model import PARAM_NAMES, ModelParams, ObservationSchedule, PanelDataset, log_pmf
from .scp import FitResult, ScpConfig
from .simulate import FIT_ERRORS, EstimatorSpec, fit_estimator, map_ordered, simulate_dataset

log = logging.getLogger(__name__)

DEFAULT_PILOTS = (0.01, 0.2, 0.4, 0.6, 0.8, 1.0)


def _grid_key(gamma: float) -> float:
    return round(float(gamma), 10)


@dataclass(frozen=True)
class GammaGrid:
    values: tuple = tuple(np.round(np.arange(0.20, 0.6001, 0.01), 2))

    def __post_init__(self):
        vals = tuple(float(v) for v in np.atleast_1d(self.values))
        if not vals:
            raise ValueError("the gamma grid is empty")
        if any(not v > 0 for v in vals):
            raise ValueError("grid values must be positive")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("grid values must be strictly ascending")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_range(cls, start: float, stop: float, step: float) -> "GammaGrid":
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return cls(tuple(np.round(start + step * np.arange(n), 10)))


@dataclass(frozen=True)
class TuningResult:
    gamma_opt: float
    scores: dict  # gamma -> criterion value
    per_gamma_theta: dict  # gamma -> ModelParams
    method: str
    iterations: dict = field(default_factory=dict)  # pilot gamma -> gamma path (IWJ)
    excluded: tuple = ()

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "gamma_opt": self.gamma_opt,
            "scores": {f"{g:.4f}": float(s) for g, s in self.scores.items()},
            "per_gamma_theta": {f"{g:.4f}": th.to_dict() for g, th in self.per_gamma_theta.items()},
            "iterations": {f"{g:.4f}": list(p) for g, p in self.iterations.items()},
            "excluded": list(self.excluded),
        }


class FitCache:
    """Restricted (or unrestricted) MDPDE fits of one dataset, memoised by ``gamma``.

    Fits are computed in ascending ``gamma`` order; each one after the first
    starts from the estimate at the nearest smaller ``gamma`` already in the
    cache (warm start), which keeps long grids cheap.
    """

    def __init__(self, data: PanelDataset, restricted: bool = True, scp: ScpConfig | None = None,
                 tail_tol: float = 1e-6, warm_start: bool = True, constraints: ConstraintSet | None = None):
        self.data = data
        self.constraints = constraints
        self.restricted = restricted
        self.scp = ScpConfig(restricted=restricted) if scp is None else scp.replace(restricted=restricted)
        self.tail_tol = tail_tol
        self.warm_start = warm_start
        self._fits: dict = {}

    def spec(self, gamma: float) -> EstimatorSpec:
        return EstimatorSpec(gamma=float(gamma), restricted=self.restricted, scp=self.scp, tail_tol=self.tail_tol,
                             constraints=self.constraints)

    def _start_for(self, gamma: float):
        if not self.warm_start:
            return None
        below = [g for g, r in self._fits.items() if g < gamma and not isinstance(r, Exception)]
        return self._fits[max(below)].theta_hat if below else None

    def prefit(self, gammas) -> None:
        todo = sorted(g for g in {_grid_key(g) for g in gammas} if g not in self._fits)
        for g in todo:
            try:
                self._fits[g] = fit_estimator(self.data, self.spec(g), warm_start=self._start_for(g))
            except FIT_ERRORS as exc:
                self._fits[g] = exc

    def get(self, gamma: float) -> FitResult | None:
        key = _grid_key(gamma)
        if key not in self._fits:
            self.prefit([key])
        res = self._fits[key]
        return None if isinstance(res, Exception) else res

    def dpd_config(self, gamma: float) -> DpdConfig:
        return DpdConfig(float(gamma), tail_tol=self.tail_tol)


# ------------------------------------------------------------------ #
# Generalised score matching
# ------------------------------------------------------------------ #


def log_unnormalized_model(n, theta: ModelParams, schedule: ObservationSchedule, cfg: DpdConfig):
    """``-C(theta) + (1 + 1/gamma) f(n)**gamma``."""
    c = normalization_term(theta, schedule, cfg)
    return -c + (1.0 + 1.0 / cfg.gamma) * np.exp(cfg.gamma * log_pmf(n, theta, schedule))


def _t(u):
    return 1.0 / (1.0 + u)


def _neighbor_t(counts: np.ndarray, theta, schedule, cfg) -> tuple:
    """``t_plus`` and ``t_minus`` for every row and coordinate (arrays shaped like ``counts``)."""
    coef = 1.0 + 1.0 / cfg.gamma
    fg = np.exp(cfg.gamma * log_pmf(counts, theta, schedule))
    t_plus = np.empty(counts.shape)
    t_minus = np.zeros(counts.shape)
    for s in range(counts.shape[1]):
        up = counts.copy()
        up[:, s] += 1
        t_plus[:, s] = _t(np.exp(coef * (np.exp(cfg.gamma * log_pmf(up, theta, schedule)) - fg)))
        has = counts[:, s] > 0
        if np.any(has):
            down = counts[has].copy()
            down[:, s] -= 1
            fd = np.exp(cfg.gamma * log_pmf(down, theta, schedule))
            t_minus[has, s] = _t(np.exp(coef * (fg[has] - fd)))
    return t_plus, t_minus


def neighbor_ratio_scores(n, theta: ModelParams, schedule: ObservationSchedule, cfg: DpdConfig, s: int) -> tuple:
    """``(t(p(n+e_s)/p(n)), t(p(n)/p(n-e_s)))`` with ``t(u) = 1/(1+u)``; ``s`` is 0-based.

    A zero cell has no lower neighbour, the ratio is infinite and ``t_minus`` is 0.
    """
    n = np.asarray(n, dtype=np.int64).reshape(1, -1)
    if not 0 <= s < n.shape[1]:
        raise IndexError(f"coordinate {s} out of range for {n.shape[1]} cells")
    t_plus, t_minus = _neighbor_t(n, theta, schedule, cfg)
    return float(t_plus[0, s]), float(t_minus[0, s])


def gsm_terms(data: PanelDataset, theta: ModelParams, cfg: DpdConfig, symmetric: bool = False) -> np.ndarray:
    t_plus, t_minus = _neighbor_t(data.counts, theta, data.schedule, cfg)
    terms = t_plus**2 + t_minus**2 - 2.0 * t_plus
    if symmetric:
        terms = terms - 2.0 * t_minus
    return terms


def gsm_score(data: PanelDataset, theta_gamma: ModelParams, cfg: DpdConfig, symmetric: bool = False) -> float:
    """Empirical GSM criterion averaged over subjects and coordinates."""
    return float(np.mean(gsm_terms(data, theta_gamma, cfg, symmetric)))


def _argmin_smallest(scores: dict) -> float:
    best = min(scores.values())
    return min(g for g, v in scores.items() if v == best)


def gsm_select(data: PanelDataset, grid: GammaGrid, fits: FitCache, symmetric: bool = False) -> TuningResult:
    fits.prefit(grid.values)
    scores, thetas, excluded = {}, {}, []
    for g in grid.values:
        res = fits.get(g)
        if res is None:
            warnings.warn(f"fit failed at gamma={g:g}; excluded from the GSM search", RuntimeWarning)
            excluded.append(g)
            continue
        thetas[g] = res.theta_hat
        scores[g] = gsm_score(data, res.theta_hat, fits.dpd_config(g), symmetric)
    if not scores:
        raise RuntimeError("no grid value produced a usable fit")
    return TuningResult(_argmin_smallest(scores), scores, thetas, "GSM", excluded=tuple(excluded))


# ------------------------------------------------------------------ #
# Iterated Warwick-Jones
# ------------------------------------------------------------------ #


def iwj_mse(theta_gamma: ModelParams, theta_pilot: ModelParams, sigma, m: int) -> float:
    """``|theta_gamma - theta_P|^2 + tr(Sigma) / m``."""
    sig = sigma.sigma if isinstance(sigma, AsymptoticsResult) else np.asarray(sigma)
    d = theta_gamma.to_array() - theta_pilot.to_array()
    return float(d @ d + np.trace(sig) / m)


def _sigma_for(fit: FitResult, fits: FitCache, gamma: float) -> AsymptoticsResult:
    cs = (fits.constraints or ConstraintSet()) if fits.restricted else None
    gauge = fits.scp.gauge
    return sigma_restricted(fit.theta_hat, fits.data.schedule, fits.dpd_config(gamma), cs, fit.active, gauge=gauge)


def iwj_select(
    data: PanelDataset,
    grid: GammaGrid,
    fits: FitCache,
    pilot_gammas=DEFAULT_PILOTS,
    max_iter: int = 10,
    consensus_k: int = 3,
) -> TuningResult:
    pilots = tuple(float(p) for p in pilot_gammas)
    if not pilots:
        raise ValueError("need at least one pilot gamma")
    if max_iter < 1 or consensus_k < 1:
        raise ValueError("max_iter and consensus_k must be positive")
    fits.prefit(list(grid.values) + list(pilots))

    thetas, traces, excluded = {}, {}, []
    for g in grid.values:
        res = fits.get(g)
        if res is None:
            excluded.append(g)
            continue
        try:
            traces[g] = float(np.trace(_sigma_for(res, fits, g).sigma))
        except (np.linalg.LinAlgError, ValueError) as exc:
            warnings.warn(f"covariance unavailable at gamma={g:g} ({exc}); excluded", RuntimeWarning)
            excluded.append(g)
            continue
        thetas[g] = res.theta_hat
    if not thetas:
        raise RuntimeError("no grid value produced a usable fit and covariance")

    def curve(pilot: ModelParams) -> dict:
        return {g: iwj_mse(thetas[g], pilot, np.diag([traces[g]]), data.m) for g in thetas}

    paths = {}
    for p in pilots:
        pilot_fit = fits.get(p)
        if pilot_fit is None:
            warnings.warn(f"pilot fit failed at gamma={p:g}; pilot skipped", RuntimeWarning)
            continue
        pilot = pilot_fit.theta_hat
        path = []
        for _ in range(max_iter):
            g_next = _argmin_smallest(curve(pilot))
            if path and g_next == path[-1]:
                path.append(g_next)
                break
            path.append(g_next)
            pilot = thetas[g_next]
        paths[p] = tuple(path)
    if not paths:
        raise RuntimeError("every pilot fit failed")

    votes = Counter(g for path in paths.values() for g in path[-consensus_k:])
    top = max(votes.values())
    gamma_opt = min(g for g, c in votes.items() if c == top)
    return TuningResult(gamma_opt, curve(thetas[gamma_opt]), thetas, "IWJ", paths, tuple(excluded))


# ------------------------------------------------------------------ #
# Selector comparison over simulated replications
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class SelectorSummary:
    method: str
    gammas: tuple  # selected gamma per successful replication
    mean: np.ndarray
    mse: np.ndarray
    n_ok: int
    n_failed: int

    @property
    def total_mse(self) -> float:
        return float(np.sum(self.mse))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "mean_gamma": float(np.mean(self.gammas)) if self.gammas else float("nan"),
            "gammas": list(self.gammas),
            "mean": dict(zip(PARAM_NAMES, map(float, self.mean))),
            "mse": dict(zip(PARAM_NAMES, map(float, self.mse))),
            "total_mse": self.total_mse,
            "n_ok": self.n_ok,
            "n_failed": self.n_failed,
        }


def _select_one(args) -> dict:
    sim_cfg, index, grid, pilots, restricted, scp = args
    data = simulate_dataset(sim_cfg, index)
    fits = FitCache(data, restricted=restricted, scp=scp)
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for name, run in (("GSM", lambda: gsm_select(data, grid, fits)),
                          ("IWJ", lambda: iwj_select(data, grid, fits, pilots))):
            try:
                res = run()
                out[name] = (res.gamma_opt, res.per_gamma_theta[res.gamma_opt].to_array())
            except (RuntimeError, ValueError, np.linalg.LinAlgError):
                out[name] = None
    return out


def compare_selectors(sim_cfg, n_reps: int, grid: GammaGrid = GammaGrid(), pilot_gammas=DEFAULT_PILOTS,
                      restricted: bool = True, scp: ScpConfig | None = None, threads: int = 1) -> tuple:
    """GSM and IWJ on the same replications; returns one :class:`SelectorSummary` per method.

    Each replication's estimate is the fit at the selected ``gamma``; MSE is
    taken against ``sim_cfg.theta_true``.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    jobs = [(sim_cfg, i, grid, tuple(pilot_gammas), restricted, scp) for i in range(n_reps)]
    rows = map_ordered(_select_one, jobs, threads)
    truth = sim_cfg.theta_true.to_array()
    out = []
    for name in ("GSM", "IWJ"):
        ok = [r[name] for r in rows if r[name] is not None]
        if ok:
            est = np.vstack([e for _, e in ok])
            mean, mse = est.mean(axis=0), np.mean((est - truth) ** 2, axis=0)
        else:
            mean = mse = np.full(truth.size, np.nan)
        out.append(SelectorSummary(name, tuple(g for g, _ in ok), mean, mse, len(ok), n_reps - len(ok)))
    return tuple(out)
