"""Sparse topic model training: block-coordinate descent over the topic
dictionary, item profiles, and user profiles.

Each sweep exactly minimizes three convex subproblems in turn (dictionary,
one L1-regularized QP per item, one per user), so the objective trace is
non-increasing. The same engine also drives the social variant (an extra
factor-profile phase) and the L2-relaxed variant with closed-form ridge
updates instead of sparse coding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Hyperparams, SplitMasks
from .dictionary import (DualAscentError, TopicDictionary,
                         reconstruction_error, revive_dead_atoms,
                         update_dictionary)
from .l1qp import L1QP, solve_feature_sign

SUBPROBLEM_TOL = 1e-9
SUBPROBLEM_MAX_ITER = 2000


class TrainingError(RuntimeError):
    """Training aborted; the message names the offending block."""


@dataclass
class STMState:
    """Trained model: dictionary plus sparse user/item profiles."""

    dictionary: TopicDictionary
    U: np.ndarray
    V: np.ndarray
    hyper: Hyperparams
    objective_trace: list = field(default_factory=list)
    kind: str = "stm"

    @property
    def n_users(self) -> int:
        return int(self.U.shape[1])

    @property
    def n_items(self) -> int:
        return int(self.V.shape[1])

    def predict(self, i: int, j: int) -> float:
        return float(self.U[:, i] @ self.V[:, j])

    def score_items(self, i: int, item_indices) -> np.ndarray:
        return self.U[:, i] @ self.V[:, np.asarray(item_indices, dtype=np.int64)]


def predict(state, i: int, j: int) -> float:
    """Affinity of user i for item j (inner product of their profiles)."""
    return state.predict(i, j)


def recommend_top(state, i: int, candidates, n: int):
    """Top-n candidates by predicted score, ties broken by ascending index."""
    if n < 1:
        raise ValueError("n must be at least 1")
    cand = np.asarray(list(candidates), dtype=np.int64)
    if cand.size == 0:
        raise ValueError("candidates must be nonempty")
    scores = state.score_items(i, cand)
    order = np.lexsort((cand, -scores))
    return cand[order][:n].tolist()


def encode_cold_start(dictionary: TopicDictionary, x_new: np.ndarray,
                      lambda_v: float) -> np.ndarray:
    """Sparse profile for an item with no ratings, from its features alone.

    Solves min_v 0.5 * ||x - Dv||^2 + lambda_v * ||v||_1.
    """
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.shape != (dictionary.dim,):
        raise ValueError(
            f"feature vector has length {x_new.shape}, expected {dictionary.dim}")
    if lambda_v < 0:
        raise ValueError("lambda_v must be nonnegative")
    D = dictionary.atoms
    problem = L1QP(D.T @ D, D.T @ x_new, lambda_v)
    return solve_feature_sign(problem, tol=SUBPROBLEM_TOL,
                              max_iter=SUBPROBLEM_MAX_ITER).x


def _item_qp(DtD, DtX_j, U_sub, vals, lambda_r, lambda_v) -> L1QP:
    if U_sub.shape[1]:
        P = DtD + lambda_r * (U_sub @ U_sub.T)
        q = DtX_j + lambda_r * (U_sub @ vals)
    else:
        P, q = DtD, DtX_j
    return L1QP(P, q, lambda_v)


def _user_qp(V_sub, vals, lambda_r, lambda_u) -> L1QP:
    P = lambda_r * (V_sub @ V_sub.T)
    q = lambda_r * (V_sub @ vals)
    return L1QP(P, q, lambda_u)


def _social_user_qp(V_sub, r_vals, Z_sub, s_vals, lambda_r, lambda_s, lambda_u) -> L1QP:
    P = lambda_r * (V_sub @ V_sub.T)
    q = lambda_r * (V_sub @ r_vals)
    if lambda_s != 0 and Z_sub.shape[1]:
        P = P + lambda_s * (Z_sub @ Z_sub.T)
        q = q + lambda_s * (Z_sub @ s_vals)
    return L1QP(P, q, lambda_u)


def _train_entries(data: Dataset, masks: SplitMasks | None):
    r = data.ratings
    if masks is None:
        return r.users, r.items, r.values
    return r.users[masks.train], r.items[masks.train], r.values[masks.train]


def _adjacency(n_users, n_items, users, items, values):
    """Per-item rater lists and per-user item lists over the given entries."""
    raters = [[] for _ in range(n_items)]
    rated = [[] for _ in range(n_users)]
    for u, j, v in zip(users.tolist(), items.tolist(), values.tolist()):
        raters[j].append((u, v))
        rated[u].append((j, v))

    def pack(pairs):
        if not pairs:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        idx, val = zip(*pairs)
        return np.array(idx, dtype=np.int64), np.array(val)

    return [pack(p) for p in raters], [pack(p) for p in rated]


def assemble_item_subproblem(j: int, state: STMState, data: Dataset,
                             masks: SplitMasks | None = None) -> L1QP:
    """Canonical L1-QP whose solution is the optimal profile of item j.

    Uses the observed ratings on item j (restricted to ``masks.train`` when
    masks are given). Items with no ratings reduce to the pure content
    encoding problem.
    """
    users, items, values = _train_entries(data, masks)
    sel = items == j
    D = state.dictionary.atoms
    DtD, DtX_j = D.T @ D, D.T @ data.features.column(j)
    return _item_qp(DtD, DtX_j, state.U[:, users[sel]], values[sel],
                    state.hyper.lambda_r, state.hyper.lambda_v)


def assemble_user_subproblem(i: int, state: STMState, data: Dataset,
                             masks: SplitMasks | None = None) -> L1QP:
    """Canonical L1-QP whose solution is the optimal profile of user i."""
    users, items, values = _train_entries(data, masks)
    sel = users == i
    return _user_qp(state.V[:, items[sel]], values[sel],
                    state.hyper.lambda_r, state.hyper.lambda_u)


def _objective(X, D, U, V, users, items, values, hyper, *, l1,
               social_terms=None) -> float:
    content = X - D @ V
    total = 0.5 * float(np.sum(content * content))
    if users.size:
        resid = values - np.einsum("ki,ki->i", U[:, users], V[:, items])
        total += 0.5 * hyper.lambda_r * float(resid @ resid)
    if l1:
        total += hyper.lambda_u * float(np.abs(U).sum())
        total += hyper.lambda_v * float(np.abs(V).sum())
    else:
        total += hyper.lambda_u * float(np.sum(U * U))
        total += 0.5 * hyper.lambda_v * float(np.sum(V * V))
    if social_terms is not None:
        row, col, sim, Z = social_terms
        if hyper.lambda_s != 0 and row.size:
            resid = sim - np.einsum("ki,ki->i", U[:, row], Z[:, col])
            total += 0.5 * hyper.lambda_s * float(resid @ resid)
        total += hyper.lambda_z * float(np.sum(Z * Z))
    return total


def stm_objective(state: STMState, data: Dataset,
                  masks: SplitMasks | None = None) -> float:
    """Value of the joint objective: content reconstruction, masked rating
    reconstruction, and the L1 profile penalties."""
    users, items, values = _train_entries(data, masks)
    return _objective(data.features.matrix, state.dictionary.atoms, state.U,
                      state.V, users, items, values, state.hyper, l1=True)


def _encode_columns(X, D, lam, l1, warm=None):
    """Encode every column of X against D (sparse or ridge)."""
    K = D.shape[1]
    DtD, DtX = D.T @ D, D.T @ X
    V = np.zeros((K, X.shape[1]))
    if l1:
        for j in range(X.shape[1]):
            x0 = None if warm is None else warm[:, j]
            V[:, j] = solve_feature_sign(L1QP(DtD, DtX[:, j], lam),
                                         tol=SUBPROBLEM_TOL,
                                         max_iter=SUBPROBLEM_MAX_ITER, x0=x0).x
    else:
        V[:] = np.linalg.solve(DtD + lam * np.eye(K), DtX)
    return V


def _ridge_solve(P, q):
    try:
        return np.linalg.solve(P, q)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(P, q, rcond=None)[0]


def _solve_l1_guarded(problem: L1QP, incumbent: np.ndarray) -> np.ndarray:
    sol = solve_feature_sign(problem, tol=SUBPROBLEM_TOL,
                             max_iter=SUBPROBLEM_MAX_ITER, x0=incumbent)
    # Warm-started feature-sign never moves uphill, but keep the incumbent
    # if roundoff says otherwise so sweeps stay monotone.
    if sol.objective <= problem.objective(incumbent):
        return sol.x
    return incumbent


def _check_finite(arr, block):
    if not np.all(np.isfinite(arr)):
        raise TrainingError(f"non-finite values after the {block} update")


def _train_engine(data: Dataset, masks: SplitMasks, hyper: Hyperparams, *,
                  l1: bool, social: bool):
    """Shared block-coordinate loop; returns (dictionary, U, V, Z, trace)."""
    X = data.features.matrix
    d, M = X.shape
    N = data.n_users
    K = hyper.k

    users, items, values = _train_entries(data, masks)
    if users.size == 0:
        raise ValueError("training mask is empty")
    raters, rated = _adjacency(N, M, users, items, values)

    if social:
        graph = data.social
        s_row, s_col, s_sim = graph.row, graph.col, graph.sim
        links = [[] for _ in range(N)]
        for a, b, s in zip(s_row.tolist(), s_col.tolist(), s_sim.tolist()):
            links[a].append((b, s))
        links = [(np.array([m for m, _ in ln], dtype=np.int64),
                  np.array([s for _, s in ln])) for ln in links]
    else:
        s_row = s_col = s_sim = None

    rng = np.random.default_rng(hyper.seed)
    atoms = rng.standard_normal((d, K))
    atoms /= np.linalg.norm(atoms, axis=0, keepdims=True)
    dictionary = TopicDictionary(atoms, np.zeros(K))

    V = _encode_columns(X, dictionary.atoms, hyper.lambda_v, l1)
    U = np.zeros((K, N))
    Z = np.zeros((K, N)) if social else None

    def objective():
        terms = (s_row, s_col, s_sim, Z) if social else None
        return _objective(X, dictionary.atoms, U, V, users, items, values,
                          hyper, l1=l1, social_terms=terms)

    trace = [objective()]
    if not np.isfinite(trace[0]):
        raise TrainingError("non-finite objective at initialization")

    for sweep in range(1, hyper.max_iters + 1):
        # Dictionary phase: analytic constrained solve, then point dead
        # atoms at unexplained content so later sweeps can use them.
        if np.any(np.sum(np.abs(V), axis=1) > 0):
            before = reconstruction_error(X, dictionary.atoms, V)
            try:
                candidate = update_dictionary(X, V, warm_duals=dictionary.duals)
            except DualAscentError as exc:
                candidate = exc.best  # feasible but uncertified; guard decides
            if reconstruction_error(X, candidate.atoms, V) <= before + 1e-9 * max(1.0, before):
                dictionary = candidate
        dictionary = revive_dead_atoms(dictionary, X, V, seed=hyper.seed + sweep)
        _check_finite(dictionary.atoms, "dictionary")

        D = dictionary.atoms
        DtD, DtX = D.T @ D, D.T @ X

        for j in range(M):
            idx, vals = raters[j]
            if l1:
                problem = _item_qp(DtD, DtX[:, j], U[:, idx], vals,
                                   hyper.lambda_r, hyper.lambda_v)
                V[:, j] = _solve_l1_guarded(problem, V[:, j])
            else:
                P = DtD + hyper.lambda_v * np.eye(K)
                if idx.size:
                    P = P + hyper.lambda_r * (U[:, idx] @ U[:, idx].T)
                q = DtX[:, j] + (hyper.lambda_r * (U[:, idx] @ vals) if idx.size else 0.0)
                V[:, j] = _ridge_solve(P, q)
        _check_finite(V, "item profiles")

        for i in range(N):
            idx, vals = rated[i]
            if social:
                nbr, sims = links[i]
                if idx.size == 0 and (hyper.lambda_s == 0 or nbr.size == 0):
                    continue
                problem = _social_user_qp(V[:, idx], vals, Z[:, nbr], sims,
                                          hyper.lambda_r, hyper.lambda_s,
                                          hyper.lambda_u)
                U[:, i] = _solve_l1_guarded(problem, U[:, i])
            elif idx.size:
                if l1:
                    problem = _user_qp(V[:, idx], vals, hyper.lambda_r,
                                       hyper.lambda_u)
                    U[:, i] = _solve_l1_guarded(problem, U[:, i])
                else:
                    P = hyper.lambda_r * (V[:, idx] @ V[:, idx].T) \
                        + 2.0 * hyper.lambda_u * np.eye(K)
                    U[:, i] = _ridge_solve(P, hyper.lambda_r * (V[:, idx] @ vals))
        _check_finite(U, "user profiles")

        if social and hyper.lambda_s != 0:
            ridge = 2.0 * hyper.lambda_z / hyper.lambda_s
            for i in range(N):
                nbr, sims = links[i]
                if nbr.size == 0:
                    Z[:, i] = 0.0
                    continue
                Usub = U[:, nbr]
                Z[:, i] = _ridge_solve(Usub @ Usub.T + ridge * np.eye(K),
                                       Usub @ sims)
            _check_finite(Z, "factor profiles")

        trace.append(objective())
        if not np.isfinite(trace[-1]):
            raise TrainingError("non-finite objective after sweep")
        prev, cur = trace[-2], trace[-1]
        if abs(prev - cur) < hyper.tol * max(abs(prev), np.finfo(float).tiny):
            break

    return dictionary, U, V, Z, trace


def train_stm(data: Dataset, masks: SplitMasks, hyper: Hyperparams) -> STMState:
    """Fit the sparse topic model on the training entries.

    The dictionary starts as seeded random unit atoms, item profiles as
    sparse encodings of the content, and user profiles at zero; sweeps run
    dictionary, then items, then users, until the relative objective change
    drops below ``hyper.tol`` or ``hyper.max_iters`` is reached. Users with
    no training ratings keep zero profiles.
    """
    dictionary, U, V, _, trace = _train_engine(data, masks, hyper,
                                               l1=True, social=False)
    return STMState(dictionary, U, V, hyper, trace, kind="stm")
