"""L1-regularized quadratic programs in canonical form, and two solvers.

The canonical problem is

    minimize  0.5 * x'Px - q'x + lam * ||x||_1

with P symmetric positive semidefinite. The primary solver is feature-sign
search, an active-set method that tracks the sign pattern of the solution
and solves reduced linear systems; a cyclic coordinate-descent solver is
kept alongside as an independent check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SolverError(RuntimeError):
    """Raised when a solve cannot make progress (singular reduced system)."""


@dataclass(frozen=True)
class L1QP:
    """Canonical problem data: symmetric PSD ``P``, linear term ``q``, L1
    weight ``lam``."""

    P: np.ndarray
    q: np.ndarray
    lam: float

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        q = np.asarray(self.q, dtype=np.float64)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("P must be square")
        if q.shape != (P.shape[0],):
            raise ValueError("q must match P's dimension")
        if not np.allclose(P, P.T, atol=1e-10, rtol=0):
            raise ValueError("P must be symmetric (within 1e-10)")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")

    @property
    def dim(self) -> int:
        return int(self.q.size)

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(0.5 * x @ self.P @ x - self.q @ x + self.lam * np.abs(x).sum())


@dataclass(frozen=True)
class L1QPSolution:
    x: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool = True


def kkt_residual(problem: L1QP, x: np.ndarray) -> float:
    """Maximum KKT violation of ``x`` for the canonical problem.

    For nonzero coordinates this is |(Px - q)_i + lam * sign(x_i)|; for zero
    coordinates it is the excess of |(Px - q)_i| over lam.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != problem.q.shape:
        raise ValueError("x must match the problem dimension")
    g = problem.P @ x - problem.q
    nz = x != 0
    res = 0.0
    if np.any(nz):
        res = float(np.max(np.abs(g[nz] + problem.lam * np.sign(x[nz]))))
    if np.any(~nz):
        res = max(res, float(np.max(np.abs(g[~nz])) - problem.lam), 0.0)
    return max(res, 0.0)


def soft_threshold(value: float, lam: float) -> float:
    return float(np.sign(value) * max(abs(value) - lam, 0.0))


def _solve_reduced(P_act: np.ndarray, rhs: np.ndarray, trace_scale: float):
    """Solve the active-set system, retrying once with a diagonal jitter."""
    try:
        sol = np.linalg.solve(P_act, rhs)
        if np.all(np.isfinite(sol)):
            return sol
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-9 * trace_scale
    try:
        sol = np.linalg.solve(P_act + jitter * np.eye(P_act.shape[0]), rhs)
    except np.linalg.LinAlgError:
        raise SolverError("active-set system is singular even after jitter") from None
    if not np.all(np.isfinite(sol)):
        raise SolverError("active-set system is singular even after jitter")
    return sol


def solve_feature_sign(problem: L1QP, tol: float = 1e-8, max_iter: int = 1000,
                       x0: np.ndarray | None = None) -> L1QPSolution:
    """Feature-sign search for the canonical L1-regularized QP.

    Maintains an active set with a sign vector theta, solves the reduced
    system x = P_aa^{-1} (q_a - lam * theta_a), and line-searches over the
    zero crossings between the incumbent and the analytic point whenever a
    sign would flip. Accepts an optional warm start ``x0`` (its sign pattern
    seeds the active set). Hitting ``max_iter`` returns the best iterate
    flagged as non-converged.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    K = problem.dim
    P, q, lam = problem.P, problem.q, problem.lam
    trace_scale = max(np.trace(P) / K, np.finfo(float).tiny)

    if x0 is None:
        x = np.zeros(K)
    else:
        x = np.array(x0, dtype=np.float64)
        if x.shape != (K,):
            raise ValueError("x0 must match the problem dimension")
    theta = np.sign(x)

    if lam == 0:
        # Pure quadratic: one reduced solve over all coordinates.
        x = _solve_reduced(P, q.copy(), trace_scale)
        return L1QPSolution(x, problem.objective(x), kkt_residual(problem, x), 1)

    iterations = 0
    needs_activation = True
    while iterations < max_iter:
        g = P @ x - q
        if needs_activation:
            inactive = theta == 0
            violation = np.where(inactive, np.abs(g) - lam, -np.inf)
            i = int(np.argmax(violation))
            if violation[i] <= tol:
                # All zero coordinates satisfy the subgradient condition and
                # the active ones were stationary when we got here.
                return L1QPSolution(x, problem.objective(x),
                                    kkt_residual(problem, x), iterations)
            theta[i] = -np.sign(g[i])

        iterations += 1
        active = np.flatnonzero(theta != 0)
        if active.size == 0:
            needs_activation = True
            continue
        rhs = q[active] - lam * theta[active]
        x_new_act = _solve_reduced(P[np.ix_(active, active)], rhs, trace_scale)

        # Discrete line search: objective at the analytic point and at every
        # zero crossing along the segment from the incumbent.
        x_old_act = x[active]
        best_obj = None
        best_vec = None
        candidates = [(1.0, None)]
        diff = x_new_act - x_old_act
        with np.errstate(divide="ignore", invalid="ignore"):
            t_cross = np.where(diff != 0, x_old_act / -diff, np.inf)
        for pos, t in enumerate(t_cross):
            if 0.0 < t < 1.0:
                candidates.append((float(t), pos))
        for t, crossing in candidates:
            cand = x_old_act + t * diff
            if crossing is not None:
                cand[crossing] = 0.0
            vec = x.copy()
            vec[active] = cand
            obj = problem.objective(vec)
            if best_obj is None or obj < best_obj:
                best_obj, best_vec = obj, vec
        if best_obj > problem.objective(x) + 1e-15 * max(1.0, abs(best_obj)):
            # No descent available along the segment: stall, return as-is.
            res = kkt_residual(problem, x)
            return L1QPSolution(x, problem.objective(x), res, iterations,
                                converged=res <= tol)
        x = best_vec
        x[np.abs(x) < 1e-15 * trace_scale] = 0.0
        theta = np.sign(x)

        g = P @ x - q
        nz = theta != 0
        stationary = not np.any(nz) or np.max(np.abs(g[nz] + lam * theta[nz])) <= tol
        needs_activation = stationary

    res = kkt_residual(problem, x)
    return L1QPSolution(x, problem.objective(x), res, iterations,
                        converged=res <= tol)


def solve_coordinate_descent(problem: L1QP, tol: float = 1e-10,
                             max_sweeps: int = 100000,
                             x0: np.ndarray | None = None) -> L1QPSolution:
    """Cyclic coordinate descent with exact soft-threshold updates.

    Independent reference solver used to cross-check feature-sign search;
    stops when the largest per-coordinate change in a sweep falls below
    ``tol``. Requires a strictly positive diagonal on every coordinate it
    moves.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    K = problem.dim
    P, q, lam = problem.P, problem.q, problem.lam
    x = np.zeros(K) if x0 is None else np.array(x0, dtype=np.float64)
    Px = P @ x
    diag = np.diag(P)

    sweeps = 0
    converged = False
    for sweeps in range(1, max_sweeps + 1):
        max_delta = 0.0
        for i in range(K):
            partial = Px[i] - diag[i] * x[i]  # sum_{j != i} P_ij x_j
            c = q[i] - partial
            if diag[i] <= 0:
                if abs(c) > lam:
                    raise SolverError(
                        f"coordinate {i} has zero diagonal but nonzero gradient")
                new = 0.0
            else:
                new = soft_threshold(c, lam) / diag[i]
            delta = new - x[i]
            if delta != 0.0:
                Px += P[:, i] * delta
                x[i] = new
                max_delta = max(max_delta, abs(delta))
        if sweeps % 256 == 0:
            Px = P @ x  # refresh accumulated roundoff
        if max_delta < tol:
            converged = True
            break
    return L1QPSolution(x, problem.objective(x), kkt_residual(problem, x),
                        sweeps, converged)
