"""Model-based sandwich matrices and the restricted asymptotic covariance.

With weights ``f**(1+gamma)`` and ``f**(1+2 gamma)`` over the support::

    J = sum u u^T f^(1+g)
    xi = sum u f^(1+g)
    K = sum u u^T f^(1+2g) - xi xi^T

and for active constraint columns ``H_s``::

    P = -H_s^T J^-1 H_s
    L = -[J^-1 + J^-1 H_s P^-1 H_s^T J^-1]
    Sigma = L^T K L

``J`` is singular for this model: ``(zeta, a1, 0, a2, 0)`` spans its null
space because the density is constant along the scaling orbit.  The literal
inverse therefore fails the conditioning guard.  ``gauge="zeta"`` evaluates
the same formulas with ``zeta`` held fixed (the parametrisation used by the
default SCP fit) and returns ``Sigma`` with a zero ``zeta`` row and column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .constraints import ConstraintSet
from .divergence import DpdConfig, population_terms
from .model import N_PARAMS, ModelParams, ObservationSchedule

CONDITION_LIMIT = 1e12

# gamma -> 0 uses the Fisher information; the support policy still comes from a config
_FISHER_CFG = DpdConfig(gamma=1.0)


class SingularInformationError(np.linalg.LinAlgError):
    def __init__(self, condition_number: float, what: str = "J"):
        self.condition_number = condition_number
        super().__init__(f"{what} is numerically singular (condition number {condition_number:.3g})")


@dataclass(frozen=True)
class AsymptoticsResult:
    j_matrix: np.ndarray
    k_matrix: np.ndarray
    xi: np.ndarray
    sigma: np.ndarray
    std_errors: np.ndarray
    condition_number: float
    active: tuple
    gauge: str

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma.tolist(),
            "std_errors": [float(x) for x in self.std_errors],
            "condition_number": float(self.condition_number),
            "active": list(self.active),
            "gauge": self.gauge,
        }


def _weights(cfg: DpdConfig | None) -> tuple:
    gamma = 0.0 if cfg is None else cfg.gamma
    return 1.0 + gamma, 1.0 + 2.0 * gamma


def _pop(theta, schedule, cfg):
    return population_terms(theta, schedule, _FISHER_CFG if cfg is None else cfg)


def j_matrix(theta: ModelParams, schedule: ObservationSchedule, cfg: DpdConfig | None) -> np.ndarray:
    """``sum_n u u^T f^(1+gamma)``; ``cfg=None`` gives the Fisher information."""
    w1, _ = _weights(cfg)
    return _pop(theta, schedule, cfg).moments(w1)[2]


def xi_vector(theta: ModelParams, schedule: ObservationSchedule, cfg: DpdConfig | None) -> np.ndarray:
    w1, _ = _weights(cfg)
    return _pop(theta, schedule, cfg).moments(w1)[1]


def k_matrix(theta: ModelParams, schedule: ObservationSchedule, cfg: DpdConfig | None) -> np.ndarray:
    """Variance of ``u(N) f(N)**gamma`` under the model."""
    w1, w2 = _weights(cfg)
    pop = _pop(theta, schedule, cfg)
    xi = pop.moments(w1)[1]
    k = pop.moments(w2)[2] - np.outer(xi, xi)
    return 0.5 * (k + k.T)


def _free_coordinates(gauge: str) -> np.ndarray:
    if gauge == "none":
        return np.arange(N_PARAMS)
    if gauge == "zeta":
        return np.arange(1, N_PARAMS)
    raise ValueError("gauge must be 'none' or 'zeta'")


def sandwich_l(j: np.ndarray, h_s: np.ndarray) -> np.ndarray:
    """``L`` for a given (well-conditioned) ``J`` and active-constraint columns ``H_s``."""
    p = j.shape[0]
    cho = scipy.linalg.cho_factor(j)
    j_inv = scipy.linalg.cho_solve(cho, np.eye(p))
    j_inv = 0.5 * (j_inv + j_inv.T)
    if h_s.shape[1] == 0:
        return -j_inv
    if np.linalg.matrix_rank(h_s) != h_s.shape[1]:
        raise ValueError("active constraint columns are rank deficient")
    jh = j_inv @ h_s
    pmat = -h_s.T @ jh
    return -(j_inv + jh @ np.linalg.solve(pmat, jh.T))


def sigma_restricted(
    theta: ModelParams,
    schedule: ObservationSchedule,
    cfg: DpdConfig | None,
    cs: ConstraintSet | None = None,
    active: tuple = (),
    m: int | None = None,
    gauge: str = "none",
) -> AsymptoticsResult:
    """Asymptotic covariance of the (restricted) estimator at ``theta``.

    ``std_errors`` are ``sqrt(diag(Sigma) / m)`` when ``m`` is given and
    ``sqrt(diag(Sigma))`` otherwise.
    """
    free = _free_coordinates(gauge)
    w1, w2 = _weights(cfg)
    pop = _pop(theta, schedule, cfg)
    _, xi, j = pop.moments(w1)
    k = pop.moments(w2)[2] - np.outer(xi, xi)
    k = 0.5 * (k + k.T)

    j_free = j[np.ix_(free, free)]
    cond = float(np.linalg.cond(j_free))
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularInformationError(cond)

    active = tuple(int(i) for i in active)
    if active:
        if cs is None:
            raise ValueError("an active set needs its constraint set")
        h_s = cs.jacobian[:, list(active)][free, :]
    else:
        h_s = np.zeros((free.size, 0))
    l_free = sandwich_l(j_free, h_s)
    sigma_free = l_free.T @ k[np.ix_(free, free)] @ l_free

    sigma = np.zeros((N_PARAMS, N_PARAMS))
    sigma[np.ix_(free, free)] = 0.5 * (sigma_free + sigma_free.T)
    diag = np.clip(np.diag(sigma), 0.0, None)
    se = np.sqrt(diag / m) if m else np.sqrt(diag)
    return AsymptoticsResult(
        j_matrix=j,
        k_matrix=k,
        xi=xi,
        sigma=sigma,
        std_errors=se,
        condition_number=cond,
        active=active,
        gauge=gauge,
    )
