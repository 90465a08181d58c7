"""Ranking-based evaluation: average percentile scores, the cumulative
percentile curve, profile sparsity, topic inspection, and the cold-start
experiment protocol.

All metrics are rank-based (lower APS means liked items ranked nearer the
top); ties receive average ranks, so a constant scorer lands at the
mid-percentile rather than an arbitrary extreme.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .data import Dataset, Hyperparams, SplitMasks, full_train_masks, subset_items
from .stm import encode_cold_start, train_stm


@dataclass(frozen=True)
class RankingReport:
    """Per-user APS values and the aggregates derived from them."""

    aps_per_user: dict
    maps: float
    pps_curve: list
    n_evaluated_users: int
    n_excluded_users: int


@dataclass(frozen=True)
class ColdStartReport:
    """mAPS over held-out items for each training share."""

    unseen_items: np.ndarray
    results: list  # (train_fraction, maps, n_evaluated_users) triples
    seed: int
    unseen_fraction: float


def aps(scores: np.ndarray, liked) -> float:
    """Average percentile score of the liked items in a score ranking.

    Items are ranked by descending score with average ranks on ties; the
    percentile of rank r among M items is 100 * r / M. Lower is better.
    ``liked`` holds positions into ``scores``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    liked = np.asarray(list(liked), dtype=np.int64)
    if liked.size == 0:
        raise ValueError("liked set must be nonempty")
    if liked.min() < 0 or liked.max() >= scores.size:
        raise ValueError("liked positions out of range")
    ranks = rankdata(-scores, method="average")
    percentiles = 100.0 * ranks / scores.size
    return float(percentiles[liked].mean())


def _like_percentiles(model, data: Dataset, masks: SplitMasks):
    """Per-user APS and the percentile of every test like.

    The candidate pool is the item side of the held-out block; users
    without test likes are excluded (APS is undefined for them).
    """
    if not np.any(masks.test):
        raise ValueError("test mask is empty")
    pool = np.sort(masks.test_items)
    r = data.ratings
    t_users, t_items = r.users[masks.test], r.items[masks.test]
    liked_by_user: dict = {}
    for u, j in zip(t_users.tolist(), t_items.tolist()):
        liked_by_user.setdefault(u, []).append(j)

    aps_per_user = {}
    all_percentiles = []
    for u in sorted(liked_by_user):
        positions = np.searchsorted(pool, np.array(liked_by_user[u]))
        scores = np.asarray(model.score_items(u, pool), dtype=np.float64)
        ranks = rankdata(-scores, method="average")
        percentiles = 100.0 * ranks / pool.size
        aps_per_user[u] = float(percentiles[positions].mean())
        all_percentiles.extend(percentiles[positions].tolist())
    if not aps_per_user:
        raise ValueError("no users with test likes to evaluate")
    return aps_per_user, np.array(all_percentiles)


def _curve_from_percentiles(percentiles: np.ndarray):
    total = percentiles.size
    return [(g, float(np.count_nonzero(percentiles <= g)) / total)
            for g in range(1, 101)]


def maps(model, data: Dataset, masks: SplitMasks) -> RankingReport:
    """Mean APS over all users with at least one test like.

    Every evaluated user scores the full test-block item pool through the
    model's ``score_items``; users without test likes are excluded and
    counted.
    """
    aps_per_user, percentiles = _like_percentiles(model, data, masks)
    return RankingReport(
        aps_per_user=aps_per_user,
        maps=float(np.mean(list(aps_per_user.values()))),
        pps_curve=_curve_from_percentiles(percentiles),
        n_evaluated_users=len(aps_per_user),
        n_excluded_users=data.n_users - len(aps_per_user),
    )


def pps_curve(model, data: Dataset, masks: SplitMasks):
    """Cumulative fraction of test likes at or under each percentile
    (1..100) of the ranking."""
    _, percentiles = _like_percentiles(model, data, masks)
    return _curve_from_percentiles(percentiles)


def profile_sparsity(matrix: np.ndarray, eps: float = 1e-8) -> float:
    """Fraction of entries whose magnitude exceeds ``eps``."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    matrix = np.asarray(matrix)
    return float(np.count_nonzero(np.abs(matrix) > eps)) / matrix.size


def topic_top_items(V: np.ndarray, k: int, n: int):
    """Items with the strongest response on atom k, ties by ascending
    index."""
    V = np.asarray(V)
    if not 0 <= k < V.shape[0]:
        raise ValueError(f"topic {k} out of range")
    order = np.argsort(-V[k, :], kind="stable")
    return order[:max(n, 0)].tolist()


def cold_start_protocol(data: Dataset, seed: int, unseen_fraction: float = 0.2,
                        train_fractions=(1.0, 0.8, 0.6, 0.4, 0.2),
                        hyper: Hyperparams | None = None) -> ColdStartReport:
    """Hold out a share of items entirely and measure encoding quality.

    The unseen items contribute no ratings to any training run; their
    features are used only at test time through the cold-start encoder.
    For each train fraction, that share of the remaining items (with all
    their ratings) is used to train, the unseen items are encoded from
    content, and mAPS is computed over likes on unseen items, ranking
    within the unseen pool.
    """
    if not 0.0 < unseen_fraction < 1.0:
        raise ValueError("unseen_fraction must lie in (0, 1)")
    for f in train_fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError("train fractions must lie in (0, 1]")
    if hyper is None:
        hyper = Hyperparams()

    M = data.n_items
    rng = np.random.default_rng(seed)
    perm = rng.permutation(M)
    n_unseen = int(round(unseen_fraction * M))
    if n_unseen < 1 or M - n_unseen < 1:
        raise ValueError("holdout leaves no usable items")
    unseen = np.sort(perm[:n_unseen])
    seen = np.sort(perm[n_unseen:])

    r = data.ratings
    in_unseen = np.zeros(M, dtype=bool)
    in_unseen[unseen] = True
    unseen_mask = in_unseen[r.items]
    if not np.any(unseen_mask):
        raise ValueError("no observed likes fall on the held-out items")
    liked_by_user: dict = {}
    unseen_pos = {int(j): t for t, j in enumerate(unseen)}
    for u, j in zip(r.users[unseen_mask].tolist(), r.items[unseen_mask].tolist()):
        liked_by_user.setdefault(u, []).append(unseen_pos[j])

    results = []
    for idx, fraction in enumerate(train_fractions):
        n_keep = int(round(fraction * seen.size))
        if n_keep < 1:
            raise ValueError(f"train fraction {fraction} keeps no items")
        sub_rng = np.random.default_rng([seed, idx])
        keep = np.sort(sub_rng.choice(seen, size=n_keep, replace=False))
        sub = subset_items(data, keep)
        if sub.ratings.n_entries == 0:
            raise ValueError(f"train fraction {fraction} keeps no ratings")
        state = train_stm(sub, full_train_masks(sub), hyper)

        V_cold = np.column_stack([
            encode_cold_start(state.dictionary, data.features.column(j),
                              hyper.lambda_v)
            for j in unseen])
        user_aps = []
        for u in sorted(liked_by_user):
            scores = state.U[:, u] @ V_cold
            user_aps.append(aps(scores, liked_by_user[u]))
        results.append((float(fraction), float(np.mean(user_aps)), len(user_aps)))

    return ColdStartReport(unseen, results, seed, unseen_fraction)
