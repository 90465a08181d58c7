"""Reference recommenders: plain matrix factorization (PMF), its social
variant (SoRec), and the L2-relaxed topic model (CTR-I).

PMF and SoRec run full-batch gradient descent with step halving on any
loss increase, so their loss traces are non-increasing. CTR-I reuses the
block-coordinate schedule with closed-form ridge updates in place of the
sparse-coding subproblems.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Hyperparams, SplitMasks
from .stm import STMState, TrainingError, _objective, _train_engine, _train_entries

LR_FLOOR = 1e-15


@dataclass
class FactorModel:
    """Latent factor model with dense profiles (and social factors for
    SoRec)."""

    U: np.ndarray
    V: np.ndarray
    Z: np.ndarray | None
    loss_trace: list
    kind: str
    config: dict = field(default_factory=dict)

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


def factor_loss_and_grads(U, V, Z, users, items, values, reg,
                          lam_social=0.0, s_row=None, s_col=None, s_sim=None):
    """Loss and gradients of the squared-error factorization objective.

    loss = sum over observed (r - u'v)^2 + reg (||U||^2 + ||V||^2)
         + lam_social * sum over observed links (s - u'z)^2

    Returns (loss, gU, gV, gZ); gZ is None when no social factors are
    passed. Used both by the trainer and by finite-difference checks.
    """
    pred = np.einsum("ki,ki->i", U[:, users], V[:, items])
    resid = values - pred
    loss = float(resid @ resid) + reg * (float(np.sum(U * U)) + float(np.sum(V * V)))
    gU = 2.0 * reg * U
    gV = 2.0 * reg * V
    np.add.at(gU.T, users, -2.0 * resid[:, None] * V[:, items].T)
    np.add.at(gV.T, items, -2.0 * resid[:, None] * U[:, users].T)
    gZ = None
    if Z is not None:
        gZ = np.zeros_like(Z)
        if lam_social != 0 and s_row is not None and s_row.size:
            s_resid = s_sim - np.einsum("ki,ki->i", U[:, s_row], Z[:, s_col])
            loss += lam_social * float(s_resid @ s_resid)
            np.add.at(gU.T, s_row, -2.0 * lam_social * s_resid[:, None] * Z[:, s_col].T)
            np.add.at(gZ.T, s_col, -2.0 * lam_social * s_resid[:, None] * U[:, s_row].T)
    return loss, gU, gV, gZ


def _gradient_descent(data: Dataset, masks: SplitMasks, n_factors, reg, lr,
                      iters, seed, lam_social, with_social: bool, kind: str):
    if n_factors < 1:
        raise ValueError("the latent dimension must be at least 1")
    if lr <= 0:
        raise ValueError("lr must be positive")
    users, items, values = _train_entries(data, masks)
    if users.size == 0:
        raise ValueError("training mask is empty")

    rng = np.random.default_rng(seed)
    U = 0.1 * rng.standard_normal((n_factors, data.n_users))
    V = 0.1 * rng.standard_normal((n_factors, data.n_items))
    Z = None
    s_row = s_col = s_sim = None
    if with_social:
        if data.social is None:
            raise ValueError("a social graph is required; none present in the dataset")
        Z = 0.1 * rng.standard_normal((n_factors, data.n_users))
        s_row, s_col, s_sim = data.social.row, data.social.col, data.social.sim

    def evaluate(U_, V_, Z_):
        return factor_loss_and_grads(U_, V_, Z_, users, items, values, reg,
                                     lam_social, s_row, s_col, s_sim)

    loss, gU, gV, gZ = evaluate(U, V, Z)
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss at initialization")
    trace = [loss]
    step = lr
    for _ in range(iters):
        while True:
            U_new = U - step * gU
            V_new = V - step * gV
            Z_new = Z - step * gZ if Z is not None else None
            new_loss, ngU, ngV, ngZ = evaluate(U_new, V_new, Z_new)
            if np.isfinite(new_loss) and new_loss <= loss:
                break
            step *= 0.5
            if step < LR_FLOOR:
                raise TrainingError(
                    "gradient descent diverged; use a smaller learning rate")
        U, V, Z = U_new, V_new, Z_new
        loss, gU, gV, gZ = new_loss, ngU, ngV, ngZ
        trace.append(loss)

    config = {"n_factors": n_factors, "reg": reg, "lr": lr, "iters": iters,
              "seed": seed, "lam_social": lam_social}
    return FactorModel(U, V, Z, trace, kind, config)


def train_pmf(data: Dataset, masks: SplitMasks, n_factors: int = 30,
              reg: float = 0.05, lr: float = 0.01, iters: int = 200,
              seed: int = 0) -> FactorModel:
    """Plain matrix factorization by full-batch gradient descent on the
    squared error over observed training ratings."""
    return _gradient_descent(data, masks, n_factors, reg, lr, iters, seed,
                             lam_social=0.0, with_social=False, kind="pmf")


def train_sorec(data: Dataset, masks: SplitMasks, n_factors: int = 30,
                reg: float = 0.05, lam_social: float = 1.0, lr: float = 0.01,
                iters: int = 200, seed: int = 0) -> FactorModel:
    """PMF fused with the social graph through shared user factors.

    Adds lam_social * sum over observed links of (s - u'z)^2 with an extra
    factor matrix z per user; with lam_social = 0 the run reproduces
    train_pmf bit for bit under the same seed.
    """
    return _gradient_descent(data, masks, n_factors, reg, lr, iters, seed,
                             lam_social=lam_social, with_social=True,
                             kind="sorec")


def train_ctr_i(data: Dataset, masks: SplitMasks, hyper: Hyperparams) -> STMState:
    """L2-relaxed topic model: the block-coordinate schedule with ridge
    profile updates (closed-form linear solves) and the same dictionary
    phase; profiles come out dense rather than sparse."""
    dictionary, U, V, _, trace = _train_engine(data, masks, hyper,
                                               l1=False, social=False)
    return STMState(dictionary, U, V, hyper, trace, kind="ctr-i")


def ctr_objective(state: STMState, data: Dataset,
                  masks: SplitMasks | None = None) -> float:
    """Objective the CTR-I updates minimize: content and masked rating
    reconstruction plus squared-norm profile penalties."""
    users, items, values = _train_entries(data, masks)
    return _objective(data.features.matrix, state.dictionary.atoms, state.U,
                      state.V, users, items, values, state.hyper, l1=False)
