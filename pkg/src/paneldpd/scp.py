"""Sequential convex programming with an l1-box trust region.

Each outer iteration linearises the objective at ``theta_k`` and minimises
the linear model exactly over::

    {theta : |theta_i - theta_k,i| <= rho_i,  theta >= lower_bounds,  A theta >= 0}

which is a small LP.  Two radius policies are offered:

``"fixed"``
    Radii never change and every step is accepted.  A linear model over a
    fixed box always lands on a vertex, so this mode is a bounded number of
    sign-descent moves and usually stops by ``max_outer``.

``"adaptive"``
    Steps that fail to lower the true objective are rejected and all radii
    halved; on accepted steps each coordinate's radius is halved when the
    step changes sign and grown (up to ``max_growth`` times its initial
    value) otherwise.  This
    settles onto a stationary point, which the KKT certificate then checks.

The density is unchanged by ``(zeta, a1, a2) -> c (zeta, a1, a2)``, so the
objective is flat along that ray.  With ``gauge="zeta"`` (the default) the
frailty rate is held at its starting value, which picks one representative
per orbit without changing the attainable objective; ``gauge="none"`` lets
all five coordinates move and the landing point along the ray then depends
on the iteration path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .constraints import (
    ConstraintSet,
    KktResidual,
    active_set,
    estimate_multipliers,
    evaluate_h,
    kkt_residual_from_gradient,
)
from .divergence import DpdConfig, dpd_gradient, dpd_objective, nll_gradient, nll_objective
from .lp import InfeasibleLPError, solve_lp, solve_lp_lexicographic
from .model import N_PARAMS, ModelParams, PanelDataset

log = logging.getLogger(__name__)

DEFAULT_THETA_INIT = (4.6, 0.8, 0.4, 0.5, 0.1)
DEFAULT_RHO = (0.11464, 0.05746, 0.07415, 0.06524, 0.07670)


class InfeasibleSubproblemError(ValueError):
    pass


class _Mle:
    """Marker selecting the likelihood objective in :func:`scp_fit`."""

    def __repr__(self):
        return "MLE"


MLE = _Mle()


@dataclass(frozen=True)
class ScpConfig:
    theta_init: ModelParams = field(default_factory=lambda: ModelParams(*DEFAULT_THETA_INIT))
    rho: tuple | None = None
    max_outer: int | None = None
    step_tol: float = 1e-8
    lower_bounds: tuple = (1e-6,) * N_PARAMS
    restricted: bool = True
    radius_mode: str = "adaptive"
    shrink: float = 0.5
    grow: float = 1.2
    gauge: str = "zeta"
    max_growth: float = 10.0
    initial_radius_scale: float = 1.0

    def __post_init__(self):
        if self.gauge not in ("zeta", "none"):
            raise ValueError("gauge must be 'zeta' or 'none'")
        if self.radius_mode not in ("adaptive", "fixed", "ratio"):
            raise ValueError("radius_mode must be 'adaptive', 'ratio' or 'fixed'")
        rho = self.rho
        if rho is None:
            scale = max(1.0, float(np.max(self.theta_init.to_array())) / 5.0)
            rho = tuple(scale * r for r in DEFAULT_RHO)
        rho = tuple(float(r) for r in rho)
        if len(rho) != N_PARAMS or any(not r > 0 for r in rho):
            raise ValueError("rho needs five strictly positive radii")
        object.__setattr__(self, "rho", rho)
        lb = tuple(float(x) for x in self.lower_bounds)
        if len(lb) != N_PARAMS or any(not x > 0 for x in lb):
            raise ValueError("lower_bounds need five strictly positive entries")
        object.__setattr__(self, "lower_bounds", lb)
        if not self.step_tol > 0:
            raise ValueError("step_tol must be positive")
        if self.max_outer is None:
            object.__setattr__(self, "max_outer", 10 if self.radius_mode == "fixed" else 2000)
        if self.max_outer < 1:
            raise ValueError("max_outer must be a positive integer")
        if not (0 < self.shrink < 1 and self.grow >= 1):
            raise ValueError("need 0 < shrink < 1 <= grow")
        if not (0 < self.initial_radius_scale <= 1):
            raise ValueError("initial_radius_scale must lie in (0, 1]")
        if not self.max_growth >= 1:
            raise ValueError("max_growth must be at least 1")

    def replace(self, **changes) -> "ScpConfig":
        fields = {name: getattr(self, name) for name in self.__dataclass_fields__}
        fields.update(changes)
        return ScpConfig(**fields)

    def effective_rho(self) -> np.ndarray:
        rho = np.asarray(self.rho, dtype=float).copy()
        if self.gauge == "zeta":
            rho[0] = 0.0
        return rho


@dataclass(frozen=True)
class AffineModel:
    value: float
    gradient: np.ndarray

    def __call__(self, theta, theta_k) -> float:
        return self.value + float(self.gradient @ (np.asarray(theta) - np.asarray(theta_k)))


@dataclass(frozen=True)
class FitResult:
    theta_hat: ModelParams
    lambda_hat: np.ndarray
    objective: float
    iterations: int
    converged: bool
    active: tuple
    trace: tuple  # (theta array, objective) per accepted iterate, starting point first
    kkt: KktResidual
    estimator: str
    gamma: float | None
    restricted: bool
    descent_violations: int = 0

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "gamma": self.gamma,
            "restricted": self.restricted,
            "theta_hat": self.theta_hat.to_dict(),
            "lambda_hat": [float(x) for x in self.lambda_hat],
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "active": list(self.active),
            "kkt": self.kkt.to_dict(),
            "descent_violations": self.descent_violations,
        }


def _objective_fns(data: PanelDataset, cfg) -> tuple[Callable, Callable]:
    if cfg is MLE or cfg is None:
        return (lambda th: nll_objective(data, th)), (lambda th: nll_gradient(data, th))
    if not isinstance(cfg, DpdConfig):
        raise TypeError("cfg must be a DpdConfig or MLE")
    return (lambda th: dpd_objective(data, th, cfg)), (lambda th: dpd_gradient(data, th, cfg))


def linearize(data: PanelDataset, theta_k: ModelParams, cfg) -> AffineModel:
    """Value and gradient of the objective at ``theta_k``; ``cfg`` is a :class:`DpdConfig` or :data:`MLE`."""
    value, grad = _objective_fns(data, cfg)
    return AffineModel(value(theta_k), np.asarray(grad(theta_k), dtype=float))


def _trust_box(theta_k: np.ndarray, rho: np.ndarray, lower: np.ndarray) -> tuple:
    lo = np.maximum(theta_k - rho, lower)
    hi = np.maximum(theta_k + rho, lower)
    return lo, hi


def solve_subproblem(
    model: AffineModel,
    theta_k,
    cs: ConstraintSet | None,
    scp_cfg: ScpConfig,
    rho=None,
) -> ModelParams:
    """Exact minimiser of the linear model over the trust box and constraints.

    When ``theta_k`` already attains the optimal linear value it is returned
    unchanged; otherwise a non-unique optimum is resolved to the optimal
    point nearest ``theta_k`` in l1, so coordinates with zero gradient stay put.
    """
    theta_k = theta_k.to_array() if isinstance(theta_k, ModelParams) else np.asarray(theta_k, dtype=float)
    rho = scp_cfg.effective_rho() if rho is None else np.asarray(rho, dtype=float)
    lo, hi = _trust_box(theta_k, rho, np.asarray(scp_cfg.lower_bounds))
    if cs is not None and cs.r:
        g, b = cs.a_matrix, np.zeros(cs.r)
    else:
        g, b = None, None
    try:
        sol = solve_lp_lexicographic(model.gradient, lo, hi, g, b, incumbent=theta_k)
    except InfeasibleLPError as exc:
        raise InfeasibleSubproblemError(str(exc)) from exc
    x = sol.x
    if g is not None:
        # snap tiny roundoff violations of A theta >= 0 back onto the face
        h = g @ x
        if np.any(h < 0) and np.all(h > -1e-12):
            x = x + g.T @ np.linalg.lstsq(g @ g.T, np.maximum(-h, 0.0), rcond=None)[0]
    return ModelParams.from_array(x)


def scp_fit(
    data: PanelDataset,
    cfg,
    scp_cfg: ScpConfig | None = None,
    cs: ConstraintSet | None = None,
) -> FitResult:
    """Run SCP from ``scp_cfg.theta_init``; ``cfg`` is a :class:`DpdConfig` or :data:`MLE`."""
    scp_cfg = ScpConfig() if scp_cfg is None else scp_cfg
    if scp_cfg.restricted:
        cs = ConstraintSet() if cs is None else cs
    else:
        cs = ConstraintSet.none()
    value_fn, grad_fn = _objective_fns(data, cfg)

    theta = scp_cfg.theta_init
    if cs.r and np.any(evaluate_h(cs, theta) < -1e-12):
        raise InfeasibleSubproblemError("theta_init violates the inequality constraints")
    if np.any(theta.to_array() < np.asarray(scp_cfg.lower_bounds)):
        raise InfeasibleSubproblemError("theta_init lies below the lower bounds")

    adaptive = scp_cfg.radius_mode == "adaptive"
    ratio_mode = scp_cfg.radius_mode == "ratio"
    rho0 = scp_cfg.effective_rho()
    rho = rho0 * (scp_cfg.initial_radius_scale if adaptive or ratio_mode else 1.0)
    rho_cap = rho0 * scp_cfg.max_growth
    f_k = value_fn(theta)
    trace = [(theta.to_array(), f_k)]
    prev_step = np.zeros(N_PARAMS)
    converged = False
    violations = 0
    iterations = 0

    for iterations in range(1, scp_cfg.max_outer + 1):
        model = AffineModel(f_k, np.asarray(grad_fn(theta), dtype=float))
        cand = solve_subproblem(model, theta, cs, scp_cfg, rho)
        step = cand.to_array() - theta.to_array()
        step_norm = float(np.max(np.abs(step)))
        if step_norm < scp_cfg.step_tol:
            converged = True
            break
        f_new = value_fn(cand)

        if ratio_mode:
            predicted = -float(model.gradient @ step)
            if not f_new < f_k:
                rho *= scp_cfg.shrink
                if float(np.max(rho)) < scp_cfg.step_tol:
                    converged = True
                    break
                continue
            r = (f_k - f_new) / predicted if predicted > 0 else 0.0
            if r > 0.75:
                rho = np.minimum(rho * 2.0, rho_cap)
            elif r < 0.25:
                rho = rho * scp_cfg.shrink
        elif adaptive:
            if not f_new < f_k:
                rho *= scp_cfg.shrink
                if float(np.max(rho)) < scp_cfg.step_tol:
                    converged = True
                    break
                continue
            flipped = step * prev_step < 0
            rho = np.where(flipped, rho * scp_cfg.shrink, np.minimum(rho * scp_cfg.grow, rho_cap))
            prev_step = step
        elif f_new > f_k:
            violations += 1
            log.debug("objective rose from %.12g to %.12g at iteration %d", f_k, f_new, iterations)

        theta, f_k = cand, f_new
        trace.append((theta.to_array(), f_k))

    grad = np.asarray(grad_fn(theta), dtype=float)
    active = active_set(cs, theta) if cs.r else ()
    lam = estimate_multipliers(grad, cs, active)
    kkt = kkt_residual_from_gradient(grad, theta, lam, cs)
    return FitResult(
        theta_hat=theta,
        lambda_hat=lam,
        objective=f_k,
        iterations=iterations,
        converged=converged,
        active=active,
        trace=tuple(trace),
        kkt=kkt,
        estimator="mle" if (cfg is MLE or cfg is None) else "mdpde",
        gamma=None if (cfg is MLE or cfg is None) else cfg.gamma,
        restricted=bool(cs.r),
        descent_violations=violations,
    )


__all__ = [
    "MLE",
    "AffineModel",
    "FitResult",
    "InfeasibleSubproblemError",
    "ScpConfig",
    "linearize",
    "scp_fit",
    "solve_lp",
    "solve_subproblem",
]
