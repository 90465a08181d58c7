"""Topic dictionary update: constrained least squares via the Lagrange dual.

Solves  min_D 0.5 * ||X - DV||_F^2  s.t.  ||D_k||_2^2 <= 1  for every atom,
using the analytic form D = (XV')(VV' + diag(duals))^{-1} with the duals
obtained by quasi-Newton ascent of the Lagrange dual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy import optimize

NORM_SLACK = 1e-8
SLACKNESS_TOL = 1e-6


class DualAscentError(RuntimeError):
    """Dual maximization failed to certify optimality.

    Carries the best feasible dictionary found in ``best``.
    """

    def __init__(self, message, best):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class TopicDictionary:
    """Unit-ball-constrained atoms (columns) with their dual variables."""

    atoms: np.ndarray
    duals: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=np.float64)
        duals = np.asarray(self.duals, dtype=np.float64)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "duals", duals)
        if atoms.ndim != 2:
            raise ValueError("atoms must be a d x K matrix")
        if duals.shape != (atoms.shape[1],):
            raise ValueError("one dual per atom required")
        norms = np.sum(atoms ** 2, axis=0)
        if norms.size and norms.max() > 1.0 + NORM_SLACK:
            raise ValueError(f"atom norm constraint violated: {norms.max()}")
        if duals.size and duals.min() < 0:
            raise ValueError("duals must be nonnegative")

    @property
    def dim(self) -> int:
        return int(self.atoms.shape[0])

    @property
    def n_atoms(self) -> int:
        return int(self.atoms.shape[1])


def _dictionary_for(B: np.ndarray, VVt: np.ndarray, duals: np.ndarray) -> np.ndarray:
    G = VVt + np.diag(duals)
    try:
        cho = sla.cho_factor(G, lower=True)
        W = sla.cho_solve(cho, B.T)
    except np.linalg.LinAlgError:
        W = np.linalg.solve(G + 1e-12 * np.eye(G.shape[0]) * max(np.trace(G), 1.0), B.T)
    return W.T


def _dual_ascent(B: np.ndarray, VVt: np.ndarray, duals0: np.ndarray,
                 max_iter: int):
    """Maximize the Lagrange dual on log-transformed duals (quasi-Newton)."""
    K = VVt.shape[0]
    scale = max(np.trace(VVt) / K, 1e-12)
    lo, hi = np.log(scale * 1e-14), np.log(scale * 1e14)
    eta0 = np.log(np.clip(duals0, np.exp(lo), np.exp(hi)))

    def fun(eta):
        lam = np.exp(eta)
        D = _dictionary_for(B, VVt, lam)
        # negated dual (constants dropped): tr(B G^{-1} B') + sum(lam)
        value = float(np.sum(D * B) + lam.sum())
        grad_lam = 1.0 - np.sum(D ** 2, axis=0)
        return value, grad_lam * lam

    res = optimize.minimize(fun, eta0, jac=True, method="L-BFGS-B",
                            bounds=[(lo, hi)] * K,
                            options={"maxiter": max_iter, "ftol": 1e-14,
                                     "gtol": 1e-10})
    return np.exp(res.x)


def _certification_residual(lam, norms2):
    """How far (lam, D(lam)) is from primal feasibility plus complementary
    slackness; this is what update_dictionary certifies."""
    feas = max(float(norms2.max()) - 1.0, 0.0)
    slack = float(np.max(np.abs(lam * (norms2 - 1.0)))) if lam.size else 0.0
    return max(feas, slack)


def _newton_polish(B: np.ndarray, VVt: np.ndarray, duals: np.ndarray,
                   max_iter: int = 50):
    """Projected Newton refinement of the dual variables.

    Drives active constraints to the boundary with quadratic convergence
    (the dual Hessian is -2 (D'D) o G^{-1} elementwise). Steps are accepted
    on decrease of the certification residual, which keeps making progress
    where the dual value itself changes below float resolution.
    """
    K = VVt.shape[0]
    scale = max(np.trace(VVt) / K, 1e-12)
    eps_active = 1e-6 * scale
    lam = np.maximum(duals, 0.0)
    lam[lam <= eps_active] = 0.0  # numerically zero duals are inactive

    D = _dictionary_for(B, VVt, lam)
    norms2 = np.sum(D ** 2, axis=0)
    residual = _certification_residual(lam, norms2)
    for _ in range(max_iter):
        if residual <= 1e-12 * max(scale, 1.0):
            break
        grad = norms2 - 1.0
        # Work only on coordinates free to move: clearly positive duals, or
        # duals whose constraint is violated. Slack constraints stay put.
        work = np.flatnonzero((lam > eps_active) | (grad > 0))
        if work.size == 0:
            break
        G = VVt + np.diag(lam)
        try:
            Ginv = sla.inv(G + 1e-14 * scale * np.eye(K))
        except np.linalg.LinAlgError:
            break
        H = -2.0 * (D.T @ D) * Ginv
        Hww = H[np.ix_(work, work)]
        step = np.zeros(K)
        try:
            step[work] = -np.linalg.solve(
                Hww - 1e-12 * scale * np.eye(work.size), grad[work])
        except np.linalg.LinAlgError:
            step[work] = grad[work] / np.maximum(np.abs(np.diag(Hww)), 1e-12)
        improved = False
        t = 1.0
        for _ in range(40):
            cand = np.maximum(lam + t * step, 0.0)
            cand_D = _dictionary_for(B, VVt, cand)
            cand_norms2 = np.sum(cand_D ** 2, axis=0)
            cand_residual = _certification_residual(cand, cand_norms2)
            if cand_residual < residual:
                lam, D, norms2, residual = cand, cand_D, cand_norms2, cand_residual
                improved = True
                break
            t *= 0.5
        if not improved:
            break
    return lam, norms2


def update_dictionary(X: np.ndarray, V: np.ndarray,
                      warm_duals: np.ndarray | None = None,
                      max_iter: int = 500) -> TopicDictionary:
    """Optimal dictionary for fixed profiles ``V`` under unit-norm atoms.

    ``X`` is d x M, ``V`` is K x M. The dual ascent runs on log-transformed
    duals (keeping them positive) and is polished in the original variables
    if complementary slackness is not yet met. Warm duals from a previous
    sweep speed up block-coordinate training.
    """
    X = np.asarray(X, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if X.ndim != 2 or V.ndim != 2 or X.shape[1] != V.shape[1]:
        raise ValueError("X (d x M) and V (K x M) must share the item axis")
    if not np.any(np.sum(np.abs(V), axis=1) > 0):
        raise ValueError("V has no nonzero row; every atom would be dead")

    K = V.shape[0]
    B = X @ V.T
    VVt = V @ V.T
    scale = max(np.trace(VVt) / K, 1e-12)
    if warm_duals is None:
        duals0 = np.full(K, 0.1 * scale)
    else:
        duals0 = np.clip(np.asarray(warm_duals, dtype=np.float64), 1e-12 * scale, None)

    duals = _dual_ascent(B, VVt, duals0, max_iter=max_iter)
    # The log parametrization stalls near the boundary; a projected Newton
    # pass pins active constraints to the unit sphere.
    duals, norms2 = _newton_polish(B, VVt, duals)
    slack = np.abs(duals * (norms2 - 1.0))

    D = _dictionary_for(B, VVt, duals)
    if norms2.max() > 1.0 + NORM_SLACK or slack.max() > SLACKNESS_TOL:
        over = np.sqrt(np.maximum(norms2, 1.0))
        best = TopicDictionary(D / over, np.maximum(duals, 0.0))
        raise DualAscentError(
            f"dual ascent did not certify optimality (max norm^2 "
            f"{norms2.max():.3e}, max slackness {slack.max():.3e})", best)
    return TopicDictionary(D, np.maximum(duals, 0.0))


def reconstruction_error(X: np.ndarray, atoms: np.ndarray, V: np.ndarray) -> float:
    """0.5 * ||X - DV||_F^2 for the given dictionary and profiles."""
    R = X - atoms @ V
    return 0.5 * float(np.sum(R * R))


def revive_dead_atoms(dictionary: TopicDictionary, X: np.ndarray,
                      V: np.ndarray, seed: int) -> TopicDictionary:
    """Replace atoms no profile uses with directions of unexplained content.

    An atom is dead when its row of ``V`` is identically zero. Dead atoms
    are pointed at the normalized residuals of the worst-reconstructed
    items (one item per atom, worst first); if the residual is negligible,
    a seeded random unit vector is used instead. Reconstruction ``DV`` is
    unchanged because the rewritten rows of ``V`` are zero.
    """
    X = np.asarray(X, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    dead = np.flatnonzero(np.sum(np.abs(V), axis=1) == 0)
    if dead.size == 0:
        return dictionary

    rng = np.random.default_rng(seed)
    residual = X - dictionary.atoms @ V
    resid_norms = np.linalg.norm(residual, axis=0)
    worst_first = np.argsort(-resid_norms, kind="stable")
    floor = 1e-12 * max(1.0, float(np.linalg.norm(X)))

    atoms = dictionary.atoms.copy()
    duals = dictionary.duals.copy()
    for rank, k in enumerate(dead):
        if rank < worst_first.size and resid_norms[worst_first[rank]] > floor:
            col = residual[:, worst_first[rank]]
            atoms[:, k] = col / np.linalg.norm(col)
        else:
            vec = rng.standard_normal(atoms.shape[0])
            atoms[:, k] = vec / np.linalg.norm(vec)
        duals[k] = 0.0
    return TopicDictionary(atoms, duals)
