"""Small dense linear programs with box bounds.

Solves::

    minimise    c @ x
    subject to  lo <= x <= hi          (finite bounds)
                G @ x >= b

with a two-phase bounded-variable primal simplex (Bland's rule, so it cannot
cycle).  Problem sizes here are a handful of variables and rows, so the
basis is re-factorised from scratch each pivot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InfeasibleLPError(ValueError):
    pass


@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    value: float
    duals: np.ndarray  # multipliers of G @ x >= b, nonnegative at optimum
    iterations: int
    unique: bool = True  # no movable nonbasic column has zero reduced cost


_LOWER, _UPPER, _BASIC = 0, 1, 2


def _simplex(a, b, cost, lo, hi, z, status, basis, tol, max_iter):
    """Bounded-variable primal simplex on ``a @ z = b``; modifies ``z``, ``status``, ``basis``."""
    n_cols = a.shape[1]
    iterations = 0
    while True:
        if iterations > max_iter:
            raise RuntimeError("simplex iteration limit reached")
        bmat = a[:, basis]
        if basis:
            y = np.linalg.solve(bmat.T, cost[basis])
        else:
            y = np.zeros(0)
        reduced = cost - a.T @ y

        entering = -1
        direction = 0
        for j in range(n_cols):
            if status[j] == _BASIC or hi[j] - lo[j] <= 0.0:
                continue
            if status[j] == _LOWER and reduced[j] < -tol:
                entering, direction = j, 1
                break
            if status[j] == _UPPER and reduced[j] > tol:
                entering, direction = j, -1
                break
        if entering < 0:
            return y, reduced, iterations

        if basis:
            col = np.linalg.solve(bmat, a[:, entering])
            delta = -direction * col  # change of basic values per unit move
        else:
            delta = np.zeros(0)

        step = hi[entering] - lo[entering]
        leaving_pos = -1
        for pos, var in enumerate(basis):
            d = delta[pos]
            if d < -tol:
                limit = (z[var] - lo[var]) / -d
            elif d > tol:
                limit = (hi[var] - z[var]) / d if np.isfinite(hi[var]) else np.inf
            else:
                continue
            limit = max(limit, 0.0)
            tie = leaving_pos >= 0 and np.isfinite(step) and abs(limit - step) <= tol
            if limit < step - tol or (tie and var < basis[leaving_pos]):
                step = limit
                leaving_pos = pos
        if not np.isfinite(step):
            raise RuntimeError("unbounded linear program")

        z[entering] += direction * step
        for pos, var in enumerate(basis):
            z[var] += step * delta[pos]

        if leaving_pos < 0:
            status[entering] = _UPPER if direction > 0 else _LOWER
        else:
            leaving = basis[leaving_pos]
            d = delta[leaving_pos]
            if d < 0:
                z[leaving] = lo[leaving]
                status[leaving] = _LOWER
            else:
                z[leaving] = hi[leaving]
                status[leaving] = _UPPER
            basis[leaving_pos] = entering
            status[entering] = _BASIC
        iterations += 1


def solve_lp(c, lo, hi, g=None, b=None, tol=1e-12, max_iter=500) -> LPResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != (n,) or hi.shape != (n,):
        raise ValueError("bounds must match the number of variables")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("variable bounds must be finite")
    if np.any(hi < lo):
        raise InfeasibleLPError("empty box: some upper bound is below its lower bound")
    if g is None:
        g = np.zeros((0, n))
        b = np.zeros(0)
    g = np.atleast_2d(np.asarray(g, dtype=float)).reshape(-1, n)
    b = np.asarray(b, dtype=float).reshape(g.shape[0])
    r = g.shape[0]
    scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))

    # columns: x (n), surplus (r), artificial (r);  g x - s + t = b
    a = np.hstack([g, -np.eye(r), np.eye(r)])
    n_cols = a.shape[1]
    lo_all = np.concatenate([lo, np.zeros(2 * r)])
    hi_all = np.concatenate([hi, np.full(r, np.inf), np.zeros(r)])
    z = lo_all.copy()
    status = np.full(n_cols, _LOWER)
    basis = []
    residual = g @ lo - b
    needs_phase1 = False
    for j in range(r):
        if residual[j] >= 0:
            col = n + j
            z[col] = residual[j]
        else:
            col = n + r + j
            hi_all[col] = np.inf
            z[col] = -residual[j]
            needs_phase1 = True
        status[col] = _BASIC
        basis.append(col)

    iterations = 0
    if needs_phase1:
        cost1 = np.zeros(n_cols)
        cost1[n + r :] = 1.0
        _, _, it = _simplex(a, b, cost1, lo_all, hi_all, z, status, basis, tol, max_iter)
        iterations += it
        infeas = float(np.sum(z[n + r :]))
        if infeas > 1e-9 * max(1.0, float(np.max(np.abs(b), initial=0.0))):
            raise InfeasibleLPError(f"linear constraints cannot be met (phase-1 residual {infeas:.3g})")
        for j in range(r):
            col = n + r + j
            hi_all[col] = 0.0
            if status[col] != _BASIC:
                z[col] = 0.0
                status[col] = _LOWER

    cost2 = np.zeros(n_cols)
    cost2[:n] = c
    y, reduced, it = _simplex(a, b, cost2, lo_all, hi_all, z, status, basis, tol * scale, max_iter)
    iterations += it
    movable = (status != _BASIC) & (hi_all - lo_all > 0.0)
    unique = not np.any(np.abs(reduced[movable]) <= 1e-12 * scale)
    x = np.clip(z[:n], lo, hi)
    return LPResult(x=x, value=float(c @ x), duals=np.asarray(y).reshape(r), iterations=iterations, unique=unique)


def _closest_to(inc, lo, hi, g, b, c, bound, tol) -> np.ndarray:
    """Point of the optimal face ``{c x <= bound}`` nearest to ``inc`` in l1, via ``d >= |x - inc|``."""
    n = inc.size
    eye = np.eye(n)
    cost = np.concatenate([np.zeros(n), np.ones(n)])
    big_g = np.vstack([
        np.hstack([g, np.zeros((g.shape[0], n))]),
        np.hstack([-c[None, :], np.zeros((1, n))]),
        np.hstack([-eye, eye]),  # d - x >= -inc
        np.hstack([eye, eye]),  # d + x >= inc
    ])
    big_b = np.concatenate([b, [-bound], -inc, inc])
    span = np.maximum(np.abs(hi - inc), np.abs(inc - lo))
    sol = solve_lp(cost, np.concatenate([lo, np.zeros(n)]), np.concatenate([hi, span]), big_g, big_b, tol=tol)
    return sol.x[:n], float(sol.value)


def solve_lp_lexicographic(c, lo, hi, g=None, b=None, incumbent=None, tol=1e-12) -> LPResult:
    """Optimal point with deterministic tie-breaking.

    Returns ``incumbent`` when it is feasible and already optimal.  Otherwise
    a non-unique optimum is resolved towards the incumbent: the optimal point
    nearest to it in l1 (as found by the deterministic simplex).  Without an
    incumbent ties go to the lexicographically smallest optimal point.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if g is None:
        g = np.zeros((0, n))
        b = np.zeros(0)
    g = np.atleast_2d(np.asarray(g, dtype=float)).reshape(-1, n)
    b = np.asarray(b, dtype=float).reshape(g.shape[0])
    scale = max(1.0, float(np.sum(np.abs(c) * np.maximum(np.abs(lo), np.abs(hi)))))
    slack = 1e-12 * scale

    best = solve_lp(c, lo, hi, g, b, tol=tol)
    inc = None
    if incumbent is not None:
        inc = np.asarray(incumbent, dtype=float)
        feasible = np.all(inc >= lo - 1e-12) and np.all(inc <= hi + 1e-12) and np.all(g @ inc >= b - 1e-12)
        if feasible and c @ inc <= best.value + slack:
            return LPResult(x=inc.copy(), value=float(c @ inc), duals=best.duals, iterations=best.iterations)

    # strictly positive reduced costs on every movable nonbasic column: the vertex is the only optimum
    if best.unique:
        return best

    if inc is not None:
        x, _ = _closest_to(np.clip(inc, lo, hi), lo, hi, g, b, c, best.value + slack, tol)
        return LPResult(x=x, value=float(c @ x), duals=best.duals, iterations=best.iterations)

    rows = [g, -c[None, :]]
    rhs = [b, np.array([-(best.value + slack)])]
    x = best.x
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        sub = solve_lp(e, lo, hi, np.vstack(rows), np.concatenate(rhs), tol=tol)
        x = sub.x
        rows.append(-e[None, :])
        rhs.append(np.array([-(x[i] + 1e-12 * max(1.0, abs(x[i])))]))
    return LPResult(x=x, value=float(c @ x), duals=best.duals, iterations=best.iterations)
