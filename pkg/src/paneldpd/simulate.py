"""Synthetic panel counts with optional inverse-Gaussian frailty contamination.

Replication ``i`` of a study with master seed ``s`` draws from
``default_rng(SeedSequence(s, spawn_key=(i,)))``, so any subset of
replications can be recomputed, in any order or process, bit for bit.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintSet
from .divergence import DpdConfig
from .model import PARAM_NAMES, ModelParams, ObservationSchedule, PanelDataset, cell_rates
from .scp import MLE, FitResult, ScpConfig, scp_fit

DEFAULT_THETA = ModelParams(4.5, 0.9, 0.5, 0.6, 0.2)
DEFAULT_SCHEDULE = ObservationSchedule((0.01, 0.35, 0.69, 1.12))
CONTAMINATION_LEVELS = (0.0, 0.006, 0.044, 0.085, 0.153)


@dataclass(frozen=True)
class SimConfig:
    """Generator settings.

    ``frailty_convention="rate"`` draws ``Z`` with density ``zeta exp(-zeta z)``
    (mean ``1/zeta``), the law under which the marginal pmf is derived;
    ``"scale"`` draws with mean ``zeta`` instead.

    ``zero_inflation = pi > 0`` gives a misspecified generator: each subject
    is silenced (frailty 0) with probability ``pi`` and the others have their
    frailty scaled by ``1 / (1 - pi)``, which keeps every cell mean unchanged.
    """

    theta_true: ModelParams = DEFAULT_THETA
    schedule: ObservationSchedule = DEFAULT_SCHEDULE
    m: int = 100
    epsilon: float = 0.0
    seed: int = 0
    frailty_convention: str = "rate"
    zero_inflation: float = 0.0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if not (0.0 <= self.epsilon < 1.0):
            raise ValueError("epsilon must lie in [0, 1)")
        if self.frailty_convention not in ("rate", "scale"):
            raise ValueError("frailty_convention must be 'rate' or 'scale'")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be a 64-bit nonnegative integer")
        if not (0.0 <= self.zero_inflation < 1.0):
            raise ValueError("zero_inflation must lie in [0, 1)")

    @property
    def n_contaminated(self) -> int:
        return self.m - math.floor((1.0 - self.epsilon) * self.m)


def replication_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def draw_frailty(cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    zeta = cfg.theta_true.zeta
    n_bad = cfg.n_contaminated
    scale = 1.0 / zeta if cfg.frailty_convention == "rate" else zeta
    z = rng.exponential(scale, size=cfg.m - n_bad)
    if n_bad:
        # inverse Gaussian with mean zeta and shape zeta
        z = np.concatenate([z, rng.wald(zeta, zeta, size=n_bad)])
        rng.shuffle(z)
    if cfg.zero_inflation > 0:
        pi = cfg.zero_inflation
        z = np.where(rng.random(cfg.m) < pi, 0.0, z / (1.0 - pi))
    return z


def draw_counts(
    z: np.ndarray, theta_true: ModelParams, schedule: ObservationSchedule, rng: np.random.Generator
) -> PanelDataset:
    """Cell ``(j, l)`` of subject ``i`` is Poisson with mean ``z_i a_j Delta_jl``."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("frailties must be nonnegative")
    return PanelDataset(schedule, rng.poisson(np.outer(z, cell_rates(theta_true, schedule))))


def simulate_dataset(cfg: SimConfig, index: int = 0) -> PanelDataset:
    rng = replication_rng(cfg.seed, index)
    return draw_counts(draw_frailty(cfg, rng), cfg.theta_true, cfg.schedule, rng)


# ------------------------------------------------------------------ #
# Replication studies
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class EstimatorSpec:
    """One estimator in a study: MLE when ``gamma`` is ``None``.

    ``constraints`` replaces the default ordering restrictions when the
    estimator is restricted.
    """

    gamma: float | None = None
    restricted: bool = True
    scp: ScpConfig = field(default_factory=ScpConfig)
    tail_tol: float = 1e-6
    constraints: ConstraintSet | None = None

    @property
    def label(self) -> str:
        kind = "MLE" if self.gamma is None else f"MDPDE(gamma={self.gamma:g})"
        return f"{kind} {'restricted' if self.restricted else 'unrestricted'}"

    def scp_config(self) -> ScpConfig:
        if self.scp.restricted == self.restricted:
            return self.scp
        return self.scp.replace(restricted=self.restricted)

    def dpd_config(self):
        return MLE if self.gamma is None else DpdConfig(self.gamma, tail_tol=self.tail_tol)


def fit_estimator(data: PanelDataset, spec: EstimatorSpec, warm_start: ModelParams | None = None,
                  warm_radius: float = 0.1) -> FitResult:
    """Fit ``spec`` to ``data``; ``warm_start`` replaces the starting point and shrinks the first radii."""
    scp = spec.scp_config()
    if warm_start is not None:
        scp = scp.replace(theta_init=warm_start, initial_radius_scale=warm_radius)
    return scp_fit(data, spec.dpd_config(), scp, spec.constraints)


@dataclass(frozen=True)
class EstimatorSummary:
    label: str
    mean: np.ndarray
    bias: np.ndarray
    mse: np.ndarray
    n_ok: int
    n_failed: int
    estimates: np.ndarray  # one row per successful replication

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "mean": dict(zip(PARAM_NAMES, map(float, self.mean))),
            "bias": dict(zip(PARAM_NAMES, map(float, self.bias))),
            "mse": dict(zip(PARAM_NAMES, map(float, self.mse))),
            "n_ok": self.n_ok,
            "n_failed": self.n_failed,
        }


@dataclass(frozen=True)
class ReplicationTable:
    cfg: SimConfig
    n_reps: int
    summaries: tuple

    def to_dict(self) -> dict:
        return {
            "theta_true": self.cfg.theta_true.to_dict(),
            "schedule": list(self.cfg.schedule.taus),
            "m": self.cfg.m,
            "epsilon": self.cfg.epsilon,
            "seed": self.cfg.seed,
            "frailty_convention": self.cfg.frailty_convention,
            "zero_inflation": self.cfg.zero_inflation,
            "n_reps": self.n_reps,
            "estimators": [s.to_dict() for s in self.summaries],
        }


FIT_ERRORS = (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError)


def _one_replication(args) -> list:
    cfg, index, specs = args
    data = simulate_dataset(cfg, index)
    out = []
    for spec in specs:
        try:
            out.append(fit_estimator(data, spec).theta_hat.to_array())
        except FIT_ERRORS:
            out.append(None)
    return out


def map_ordered(fn, items, threads: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally across processes; output order is fixed."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * threads))))


def summarize(label: str, estimates: list, theta_true: ModelParams) -> EstimatorSummary:
    ok = [e for e in estimates if e is not None]
    truth = theta_true.to_array()
    if ok:
        arr = np.vstack(ok)
        mean = arr.mean(axis=0)
        mse = np.mean((arr - truth) ** 2, axis=0)
    else:
        arr = np.zeros((0, truth.size))
        mean = mse = np.full(truth.size, np.nan)
    return EstimatorSummary(
        label=label,
        mean=mean,
        bias=mean - truth,
        mse=mse,
        n_ok=len(ok),
        n_failed=len(estimates) - len(ok),
        estimates=arr,
    )


def run_replications(cfg: SimConfig, n_reps: int, estimators, threads: int = 1) -> ReplicationTable:
    """Fit every estimator to the same ``n_reps`` datasets and tabulate mean, bias and MSE."""
    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    specs = tuple(estimators)
    rows = map_ordered(_one_replication, [(cfg, i, specs) for i in range(n_reps)], threads)
    summaries = tuple(
        summarize(spec.label, [row[k] for row in rows], cfg.theta_true) for k, spec in enumerate(specs)
    )
    return ReplicationTable(cfg=cfg, n_reps=n_reps, summaries=summaries)
