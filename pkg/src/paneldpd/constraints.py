"""Linear inequality restrictions ``A theta >= 0`` and KKT diagnostics.

Stationarity is written for minimisation with ``h(theta) >= 0`` and
``lambda >= 0``::

    grad f(theta) - H lambda = 0,   H = A^T (p x r)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .model import N_PARAMS, ModelParams

# rows: a1 - a2 >= 0, b1 - b2 >= 0
ORDERING_MATRIX = np.array(
    [
        [0.0, 1.0, 0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, -1.0],
    ]
)


class InfeasiblePointError(ValueError):
    pass


@dataclass(frozen=True)
class ConstraintSet:
    a_matrix: np.ndarray = field(default_factory=lambda: ORDERING_MATRIX.copy())

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_matrix, dtype=float))
        if a.size == 0:
            a = np.zeros((0, N_PARAMS))
        if a.shape[1] != N_PARAMS:
            raise ValueError(f"constraint rows need {N_PARAMS} columns, got {a.shape[1]}")
        if not np.all(np.isfinite(a)):
            raise ValueError("constraint matrix must be finite")
        r = a.shape[0]
        if r >= N_PARAMS:
            raise ValueError("need fewer constraints than parameters (r < p)")
        if r and np.linalg.matrix_rank(a) != r:
            raise ValueError("constraint matrix must have full row rank")
        a.setflags(write=False)
        object.__setattr__(self, "a_matrix", a)

    @classmethod
    def none(cls) -> "ConstraintSet":
        return cls(np.zeros((0, N_PARAMS)))

    @property
    def r(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def p(self) -> int:
        return N_PARAMS

    @property
    def jacobian(self) -> np.ndarray:
        """``H = d h^T / d theta``, shape ``(p, r)``."""
        return self.a_matrix.T

    def __eq__(self, other):
        if not isinstance(other, ConstraintSet):
            return NotImplemented
        return np.array_equal(self.a_matrix, other.a_matrix)

    def __hash__(self):
        return hash(self.a_matrix.tobytes())


def _vec(theta) -> np.ndarray:
    if isinstance(theta, ModelParams):
        return theta.to_array()
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (N_PARAMS,):
        raise ValueError(f"theta must have {N_PARAMS} entries")
    return theta


def evaluate_h(cs: ConstraintSet, theta) -> np.ndarray:
    return cs.a_matrix @ _vec(theta)


def default_active_tol(theta) -> float:
    return 1e-6 * (1.0 + float(np.max(np.abs(_vec(theta)))))


def active_set(cs: ConstraintSet, theta, tol: float | None = None) -> tuple:
    """Indices with ``|h_i| <= tol``; raises if some ``h_i < -tol``."""
    if tol is None:
        tol = default_active_tol(theta)
    h = evaluate_h(cs, theta)
    if np.any(h < -tol):
        bad = [int(i) for i in np.flatnonzero(h < -tol)]
        raise InfeasiblePointError(f"constraints {bad} violated: h = {h[bad]}")
    return tuple(int(i) for i in np.flatnonzero(np.abs(h) <= tol))


@dataclass(frozen=True)
class KktPoint:
    theta: ModelParams
    lam: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if np.any(lam < 0):
            raise ValueError("Lagrange multipliers must be nonnegative")
        object.__setattr__(self, "lam", lam)


@dataclass(frozen=True)
class KktResidual:
    stationarity: np.ndarray
    feasibility: np.ndarray
    complementarity: float
    dual_feasibility: float

    def certified(self, eps_s=1e-3, eps_f=1e-8, eps_c=1e-6, eps_d=0.0) -> bool:
        return bool(
            np.max(np.abs(self.stationarity), initial=0.0) <= eps_s
            and np.min(self.feasibility, initial=0.0) >= -eps_f
            and abs(self.complementarity) <= eps_c
            and self.dual_feasibility >= -eps_d
        )

    def to_dict(self) -> dict:
        return {
            "stationarity_inf": float(np.max(np.abs(self.stationarity), initial=0.0)),
            "stationarity": [float(x) for x in self.stationarity],
            "min_h": float(np.min(self.feasibility, initial=0.0)),
            "complementarity": float(self.complementarity),
            "min_lambda": float(self.dual_feasibility),
        }


def kkt_residual_from_gradient(grad: np.ndarray, theta, lam, cs: ConstraintSet) -> KktResidual:
    lam = np.asarray(lam, dtype=float).reshape(cs.r)
    h = evaluate_h(cs, theta)
    return KktResidual(
        stationarity=np.asarray(grad) - cs.jacobian @ lam,
        feasibility=h,
        complementarity=float(lam @ h),
        dual_feasibility=float(np.min(lam, initial=0.0)),
    )


def kkt_residual(data, theta, lam, cfg, cs: ConstraintSet) -> KktResidual:
    """Residuals of all four KKT blocks; ``cfg=None`` means the likelihood objective."""
    from .divergence import dpd_gradient, nll_gradient

    grad = nll_gradient(data, theta) if cfg is None else dpd_gradient(data, theta, cfg)
    return kkt_residual_from_gradient(grad, theta, lam, cs)


def estimate_multipliers(grad: np.ndarray, cs: ConstraintSet, active: tuple) -> np.ndarray:
    """Nonnegative least-squares fit of ``grad = H_active lambda``; inactive entries are 0."""
    lam = np.zeros(cs.r)
    if active:
        idx = list(active)
        sol, _ = nnls(cs.jacobian[:, idx], np.asarray(grad, dtype=float))
        lam[idx] = sol
    return lam
