"""Social extension: reconstruct the user similarity graph alongside the
ratings by giving every user a factor profile.

The user subproblem picks up a social reconstruction term and a fourth
training phase updates the factor profiles in closed form. With
``lambda_s = 0`` every operation reduces exactly to its plain counterpart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, Hyperparams, SplitMasks
from .l1qp import L1QP
from .stm import (STMState, TrainingError, _objective, _ridge_solve,
                  _social_user_qp, _train_engine, _train_entries)


@dataclass
class SoSTMState(STMState):
    """STM state plus the factor profiles used to explain social links."""

    Z: np.ndarray = None
    kind: str = "sostm"

    def __post_init__(self):
        if self.Z is None:
            self.Z = np.zeros_like(self.U)
        if self.Z.shape != self.U.shape:
            raise ValueError("Z must have the same shape as U")


def sostm_objective(state: SoSTMState, data: Dataset,
                    masks: SplitMasks | None = None) -> float:
    """Joint objective including the masked social reconstruction term and
    the squared-norm penalty on factor profiles."""
    if data.social is None:
        raise ValueError("dataset has no social graph")
    users, items, values = _train_entries(data, masks)
    g = data.social
    return _objective(data.features.matrix, state.dictionary.atoms, state.U,
                      state.V, users, items, values, state.hyper, l1=True,
                      social_terms=(g.row, g.col, g.sim, state.Z))


def assemble_user_subproblem(i: int, state: SoSTMState, data: Dataset,
                             masks: SplitMasks | None = None) -> L1QP:
    """User subproblem with the social term: the quadratic picks up the
    factor profiles of i's observed links, the linear term their observed
    similarities. With no links (or lambda_s = 0) this is exactly the plain
    user subproblem."""
    users, items, values = _train_entries(data, masks)
    sel = users == i
    if data.social is not None:
        nbr, sims = data.social.neighbors(i)
    else:
        nbr, sims = np.zeros(0, dtype=np.int64), np.zeros(0)
    return _social_user_qp(state.V[:, items[sel]], values[sel],
                           state.Z[:, nbr], sims, state.hyper.lambda_r,
                           state.hyper.lambda_s, state.hyper.lambda_u)


def update_factor_profile(i: int, state: SoSTMState, data: Dataset) -> np.ndarray:
    """Closed-form factor profile for user i.

    Solves the ridge system (U_hat U_hat' + (2 lambda_z / lambda_s) I) z =
    U_hat s_hat over the users with observed links to i; with no links the
    profile is zero, and with lambda_s = 0 the update is skipped entirely.
    """
    K = state.U.shape[0]
    hyper = state.hyper
    if hyper.lambda_s == 0:
        return np.zeros(K)
    if data.social is None:
        raise ValueError("dataset has no social graph")
    nbr, sims = data.social.neighbors(i)
    if nbr.size == 0:
        return np.zeros(K)
    Usub = state.U[:, nbr]
    ridge = 2.0 * hyper.lambda_z / hyper.lambda_s
    return _ridge_solve(Usub @ Usub.T + ridge * np.eye(K), Usub @ sims)


def train_sostm(data: Dataset, masks: SplitMasks, hyper: Hyperparams) -> SoSTMState:
    """Fit the social variant: the plain training schedule with the social
    user subproblem and a closed-form factor-profile phase per sweep.

    Factor profiles start at zero; with ``lambda_s = 0`` the run reproduces
    plain training bit for bit under the same seed.
    """
    if data.social is None:
        raise ValueError("a social graph is required; none present in the dataset")
    dictionary, U, V, Z, trace = _train_engine(data, masks, hyper,
                                               l1=True, social=True)
    return SoSTMState(dictionary, U, V, hyper, trace, kind="sostm", Z=Z)
