"""Domain types, dataset ingestion, splitting, and similarity measures.

The dataset model is a binary "like" matrix (absence means unobserved, not
disliked), a dense per-item content feature matrix, and optional social
information (a symmetric user similarity graph and/or group memberships).
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field

import numpy as np

FEATURES_MAGIC = b"STMF"
FEATURES_VERSION = 1


class ParseError(ValueError):
    """A malformed input row; the message names the offending line."""


class SchemaError(ValueError):
    """Structurally valid files that are inconsistent with each other."""


@dataclass(frozen=True)
class RatingMatrix:
    """Sparse binary preference matrix with an explicit observation mask.

    Entries are stored as parallel arrays (users, items, values); a pair
    (i, j) is observed exactly when it appears once in the arrays.
    """

    n_users: int
    n_items: int
    users: np.ndarray
    items: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.int64)
        items = np.asarray(self.items, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "values", values)
        if not (users.shape == items.shape == values.shape):
            raise ValueError("users, items, values must have equal length")
        if users.size:
            if users.min() < 0 or users.max() >= self.n_users:
                raise ValueError("user index out of range")
            if items.min() < 0 or items.max() >= self.n_items:
                raise ValueError("item index out of range")
            keys = users * self.n_items + items
            if np.unique(keys).size != keys.size:
                raise ValueError("duplicate (user, item) entry")
        if not np.all(np.isfinite(values)):
            raise ValueError("rating values must be finite")

    @property
    def n_entries(self) -> int:
        return int(self.users.size)

    def is_observed(self, i: int, j: int) -> bool:
        return bool(np.any((self.users == i) & (self.items == j)))

    def to_dense(self) -> np.ndarray:
        """Dense value matrix (unobserved entries are 0)."""
        R = np.zeros((self.n_users, self.n_items))
        R[self.users, self.items] = self.values
        return R

    def mask_dense(self) -> np.ndarray:
        """Dense observation mask as a float {0, 1} matrix."""
        I = np.zeros((self.n_users, self.n_items))
        I[self.users, self.items] = 1.0
        return I


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense content matrix, one column of length ``dim`` per item."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError("feature matrix must be 2-D (dim x n_items)")
        if not np.all(np.isfinite(m)):
            raise ValueError("feature values must be finite")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def n_items(self) -> int:
        return int(self.matrix.shape[1])

    def column(self, j: int) -> np.ndarray:
        return self.matrix[:, j]


@dataclass(frozen=True)
class SocialGraph:
    """Symmetric user similarity graph with similarities in [0, 1].

    Directed entries are stored for both orientations of every link, so
    inbound and outbound neighbourhoods coincide. No self-edges.
    """

    n_users: int
    row: np.ndarray
    col: np.ndarray
    sim: np.ndarray

    def __post_init__(self):
        row = np.asarray(self.row, dtype=np.int64)
        col = np.asarray(self.col, dtype=np.int64)
        sim = np.asarray(self.sim, dtype=np.float64)
        object.__setattr__(self, "row", row)
        object.__setattr__(self, "col", col)
        object.__setattr__(self, "sim", sim)
        if not (row.shape == col.shape == sim.shape):
            raise ValueError("row, col, sim must have equal length")
        if row.size:
            if min(row.min(), col.min()) < 0 or max(row.max(), col.max()) >= self.n_users:
                raise ValueError("user index out of range")
            if np.any(row == col):
                raise ValueError("self-edges are not allowed")
            if sim.min() < -1e-12 or sim.max() > 1 + 1e-12:
                raise ValueError("similarities must lie in [0, 1]")
            fwd = set(zip(row.tolist(), col.tolist()))
            for a, b in fwd:
                if (b, a) not in fwd:
                    raise ValueError(f"asymmetric link ({a}, {b})")

    @classmethod
    def from_pairs(cls, n_users: int, pairs) -> "SocialGraph":
        """Build from unordered (a, b, sim) triples; both orientations stored."""
        seen = {}
        for a, b, s in pairs:
            if a == b:
                raise ValueError(f"self-edge on user {a}")
            key = (min(a, b), max(a, b))
            if key in seen and not np.isclose(seen[key], s):
                raise ValueError(f"conflicting similarity for pair {key}")
            seen[key] = float(s)
        row, col, sim = [], [], []
        for (a, b), s in sorted(seen.items()):
            row += [a, b]
            col += [b, a]
            sim += [s, s]
        return cls(n_users, np.array(row, dtype=np.int64),
                   np.array(col, dtype=np.int64), np.array(sim, dtype=np.float64))

    @property
    def n_links(self) -> int:
        """Number of unordered linked pairs."""
        return int(self.row.size) // 2

    def neighbors(self, i: int):
        """(neighbor indices, similarities) for user i."""
        mask = self.row == i
        return self.col[mask], self.sim[mask]

    def to_dense(self) -> np.ndarray:
        S = np.zeros((self.n_users, self.n_users))
        S[self.row, self.col] = self.sim
        return S

    def mask_dense(self) -> np.ndarray:
        I = np.zeros((self.n_users, self.n_users))
        I[self.row, self.col] = 1.0
        return I


@dataclass(frozen=True)
class GroupMembership:
    """Per-user sets of group identifiers."""

    memberships: tuple
    universe: frozenset

    @classmethod
    def from_lists(cls, memberships, universe=None) -> "GroupMembership":
        sets = tuple(frozenset(m) for m in memberships)
        if universe is None:
            universe = frozenset().union(*sets) if sets else frozenset()
        else:
            universe = frozenset(universe)
        for i, s in enumerate(sets):
            extra = s - universe
            if extra:
                raise ValueError(f"user {i} has groups outside the universe: {sorted(extra)}")
        return cls(sets, universe)

    @property
    def n_users(self) -> int:
        return len(self.memberships)

    def groups_of(self, i: int) -> frozenset:
        return self.memberships[i]


@dataclass(frozen=True)
class Dataset:
    """Ratings plus item content, with optional social information."""

    ratings: RatingMatrix
    features: FeatureMatrix
    social: SocialGraph | None = None
    groups: GroupMembership | None = None

    def __post_init__(self):
        if self.ratings.n_items != self.features.n_items:
            raise SchemaError(
                f"ratings cover {self.ratings.n_items} items but features "
                f"cover {self.features.n_items}")
        if self.social is not None and self.social.n_users != self.ratings.n_users:
            raise SchemaError(
                f"social graph has {self.social.n_users} users but ratings "
                f"have {self.ratings.n_users}")

    @property
    def n_users(self) -> int:
        return self.ratings.n_users

    @property
    def n_items(self) -> int:
        return self.ratings.n_items


@dataclass(frozen=True)
class SplitMasks:
    """Train/test partition of the observed rating entries.

    Boolean masks are aligned with the entry arrays of the RatingMatrix.
    ``test_users`` and ``test_items`` are the tail blocks of the seeded
    permutations; test entries are exactly the observed entries falling in
    the (test_users x test_items) block.
    """

    train: np.ndarray
    test: np.ndarray
    test_users: np.ndarray
    test_items: np.ndarray

    def __post_init__(self):
        train = np.asarray(self.train, dtype=bool)
        test = np.asarray(self.test, dtype=bool)
        object.__setattr__(self, "train", train)
        object.__setattr__(self, "test", test)
        object.__setattr__(self, "test_users", np.asarray(self.test_users, dtype=np.int64))
        object.__setattr__(self, "test_items", np.asarray(self.test_items, dtype=np.int64))
        if train.shape != test.shape:
            raise ValueError("train and test masks must align")
        if np.any(train & test) or not np.all(train | test):
            raise ValueError("masks must partition the observed entries")


@dataclass
class Hyperparams:
    """Regularization weights and training controls.

    Defaults follow the full-scale settings (lambda_r=1.90, lambda_u=0.35,
    lambda_v=0.60, lambda_s=1.0, lambda_z=0.3, k=256); desk-scale runs
    normally override k down to 8..32.
    """

    lambda_r: float = 1.90
    lambda_u: float = 0.35
    lambda_v: float = 0.60
    lambda_s: float = 1.0
    lambda_z: float = 0.3
    k: int = 256
    max_iters: int = 10
    tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda_r", "lambda_u", "lambda_v", "lambda_s", "lambda_z"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


def _read_csv_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            yield lineno, [c.strip() for c in row]


def _parse_float(text, path, lineno):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: not a number: {text!r}") from None
    if not np.isfinite(v):
        raise ParseError(f"{path}:{lineno}: non-finite value {text!r}")
    return v


def read_features_file(path):
    """Read a features file (CSV or STMF binary container).

    Returns (item_ids, matrix) where matrix is dim x n_items and item_ids
    gives the raw identifier of each column.
    """
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == FEATURES_MAGIC:
        return _read_features_binary(path)
    return _read_features_csv(path)


def _read_features_binary(path):
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != FEATURES_MAGIC:
            raise ParseError(f"{path}: bad features header")
        version, dim, n_items = struct.unpack("<III", header[4:])
        if version != FEATURES_VERSION:
            raise ParseError(f"{path}: unsupported features version {version}")
        data = np.fromfile(fh, dtype="<f4", count=dim * n_items)
    if data.size != dim * n_items:
        raise ParseError(f"{path}: truncated features payload")
    matrix = data.reshape((dim, n_items), order="F").astype(np.float64)
    return [str(j) for j in range(n_items)], matrix


def _read_features_csv(path):
    ids, columns, dim = [], [], None
    rows = _read_csv_rows(path)
    try:
        lineno, header = next(rows)
    except StopIteration:
        raise ParseError(f"{path}: empty features file") from None
    if not header or header[0] != "item":
        raise ParseError(f"{path}:{lineno}: expected header starting with 'item'")
    for lineno, row in rows:
        if len(row) < 2:
            raise ParseError(f"{path}:{lineno}: feature row needs an item id and values")
        item_id, vals = row[0], row[1:]
        if dim is None:
            dim = len(vals)
        elif len(vals) != dim:
            raise SchemaError(
                f"{path}:{lineno}: row has {len(vals)} values, expected {dim}")
        if item_id in ids:
            raise ParseError(f"{path}:{lineno}: duplicate item id {item_id!r}")
        ids.append(item_id)
        columns.append([_parse_float(v, path, lineno) for v in vals])
    if not ids:
        raise ParseError(f"{path}: no feature rows")
    return ids, np.array(columns, dtype=np.float64).T


def write_features_binary(path, matrix: np.ndarray):
    """Write the STMF binary container (16-byte header + column-major f32)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    d, m = matrix.shape
    with open(path, "wb") as fh:
        fh.write(FEATURES_MAGIC)
        fh.write(struct.pack("<III", FEATURES_VERSION, d, m))
        fh.write(np.asfortranarray(matrix, dtype="<f4").tobytes(order="F"))


def standardize_features(matrix: np.ndarray) -> np.ndarray:
    """Per-dimension zero mean, unit variance over items.

    Constant dimensions are left at zero after centering.
    """
    centered = matrix - matrix.mean(axis=1, keepdims=True)
    std = centered.std(axis=1, keepdims=True)
    std[std == 0] = 1.0
    return centered / std


def ingest_dataset(ratings_file, features_file, social_file=None,
                   groups_file=None, standardize=True) -> Dataset:
    """Load a dataset from disk and densify identifiers to 0-based indices.

    Item identity is defined by the features file; every rated item must
    have a feature column. Users are collected from the ratings file first,
    then from the social and groups files, in order of first appearance.
    With ``standardize`` (the default) feature dimensions are normalized to
    zero mean and unit variance over items.
    """
    item_ids, matrix = read_features_file(features_file)
    item_index = {raw: j for j, raw in enumerate(item_ids)}
    if standardize:
        matrix = standardize_features(matrix)
    features = FeatureMatrix(matrix)

    user_index: dict = {}

    def user_of(raw):
        if raw not in user_index:
            user_index[raw] = len(user_index)
        return user_index[raw]

    triples, seen_pairs = [], {}
    rows = _read_csv_rows(ratings_file)
    try:
        lineno, header = next(rows)
    except StopIteration:
        raise ParseError(f"{ratings_file}: empty ratings file") from None
    if header[:3] != ["user", "item", "value"]:
        raise ParseError(f"{ratings_file}:{lineno}: expected header 'user,item,value'")
    for lineno, row in rows:
        if len(row) != 3:
            raise ParseError(f"{ratings_file}:{lineno}: expected 3 columns, got {len(row)}")
        raw_u, raw_i, raw_v = row
        if raw_i not in item_index:
            raise SchemaError(
                f"{ratings_file}:{lineno}: item {raw_i!r} has no feature column")
        value = _parse_float(raw_v, ratings_file, lineno)
        pair = (raw_u, raw_i)
        if pair in seen_pairs:
            raise ParseError(
                f"{ratings_file}:{lineno}: duplicate rating for {pair} "
                f"(first seen on line {seen_pairs[pair]})")
        seen_pairs[pair] = lineno
        triples.append((user_of(raw_u), item_index[raw_i], value))

    social_pairs = []
    if social_file is not None:
        rows = _read_csv_rows(social_file)
        lineno, header = next(rows, (0, []))
        if header[:3] != ["user_a", "user_b", "similarity"]:
            raise ParseError(f"{social_file}:{lineno}: expected header "
                             "'user_a,user_b,similarity'")
        for lineno, row in rows:
            if len(row) != 3:
                raise ParseError(f"{social_file}:{lineno}: expected 3 columns")
            s = _parse_float(row[2], social_file, lineno)
            if not 0.0 <= s <= 1.0:
                raise ParseError(f"{social_file}:{lineno}: similarity {s} outside [0, 1]")
            a, b = user_of(row[0]), user_of(row[1])
            if a == b:
                raise ParseError(f"{social_file}:{lineno}: self-edge on user {row[0]!r}")
            social_pairs.append((a, b, s))

    group_rows = []
    if groups_file is not None:
        rows = _read_csv_rows(groups_file)
        lineno, header = next(rows, (0, []))
        if header[:2] != ["user", "group"]:
            raise ParseError(f"{groups_file}:{lineno}: expected header 'user,group'")
        for lineno, row in rows:
            if len(row) != 2:
                raise ParseError(f"{groups_file}:{lineno}: expected 2 columns")
            group_rows.append((user_of(row[0]), row[1]))

    n_users = len(user_index)
    if triples:
        uu, ii, vv = (np.array(x) for x in zip(*triples))
    else:
        uu = ii = np.zeros(0, dtype=np.int64)
        vv = np.zeros(0)
    ratings = RatingMatrix(n_users, features.n_items, uu, ii, vv)

    social = None
    if social_file is not None:
        try:
            social = SocialGraph.from_pairs(n_users, social_pairs)
        except ValueError as exc:
            raise ParseError(f"{social_file}: {exc}") from None

    groups = None
    if groups_file is not None:
        memberships = [set() for _ in range(n_users)]
        for u, g in group_rows:
            memberships[u].add(g)
        groups = GroupMembership.from_lists(memberships)

    return Dataset(ratings, features, social, groups)


def write_dataset(dataset: Dataset, out_dir, features_format="csv"):
    """Serialize a dataset to the same on-disk formats ingest_dataset reads.

    Identifiers are written as the dense indices, ratings sorted by
    (user, item), so re-ingesting reproduces the same index assignment.
    Returns the dict of written paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    r = dataset.ratings
    order = np.lexsort((r.items, r.users))
    paths["ratings"] = os.path.join(out_dir, "ratings.csv")
    with open(paths["ratings"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "item", "value"])
        for e in order:
            w.writerow([r.users[e], r.items[e], repr(float(r.values[e]))])

    X = dataset.features.matrix
    if features_format == "binary":
        paths["features"] = os.path.join(out_dir, "features.bin")
        write_features_binary(paths["features"], X)
    elif features_format == "csv":
        paths["features"] = os.path.join(out_dir, "features.csv")
        with open(paths["features"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["item"] + [f"f{k}" for k in range(X.shape[0])])
            for j in range(X.shape[1]):
                w.writerow([j] + [repr(float(v)) for v in X[:, j]])
    else:
        raise ValueError(f"unknown features format {features_format!r}")

    if dataset.social is not None:
        g = dataset.social
        paths["social"] = os.path.join(out_dir, "social.csv")
        with open(paths["social"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["user_a", "user_b", "similarity"])
            for a, b, s in sorted(zip(g.row.tolist(), g.col.tolist(), g.sim.tolist())):
                if a < b:
                    w.writerow([a, b, repr(float(s))])

    if dataset.groups is not None:
        paths["groups"] = os.path.join(out_dir, "groups.csv")
        with open(paths["groups"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["user", "group"])
            for u in range(dataset.groups.n_users):
                for g_id in sorted(dataset.groups.groups_of(u)):
                    w.writerow([u, g_id])

    return paths


def block_split(dataset: Dataset, seed: int, user_fraction: float = 0.5,
                item_fraction: float = 0.5) -> SplitMasks:
    """Hold out the bottom-right block of a seeded user/item permutation.

    Users and items are permuted uniformly at random; the observed entries
    whose user falls in the last ``user_fraction`` of the user permutation
    and whose item falls in the last ``item_fraction`` of the item
    permutation form the test set, everything else is train. Every test
    user keeps its head-item ratings in train and every test item keeps its
    head-user ratings, whenever such entries exist.
    """
    if not 0.0 < user_fraction < 1.0:
        raise ValueError("user_fraction must lie in (0, 1)")
    if not 0.0 < item_fraction < 1.0:
        raise ValueError("item_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    user_perm = rng.permutation(dataset.n_users)
    item_perm = rng.permutation(dataset.n_items)
    n_tu = int(round(user_fraction * dataset.n_users))
    n_ti = int(round(item_fraction * dataset.n_items))
    test_users = np.sort(user_perm[dataset.n_users - n_tu:])
    test_items = np.sort(item_perm[dataset.n_items - n_ti:])

    in_tu = np.zeros(dataset.n_users, dtype=bool)
    in_tu[test_users] = True
    in_ti = np.zeros(dataset.n_items, dtype=bool)
    in_ti[test_items] = True

    r = dataset.ratings
    test = in_tu[r.users] & in_ti[r.items]
    return SplitMasks(~test, test, test_users, test_items)


def full_train_masks(dataset: Dataset) -> SplitMasks:
    """Masks marking every observed entry as train (empty test block)."""
    n = dataset.ratings.n_entries
    return SplitMasks(np.ones(n, dtype=bool), np.zeros(n, dtype=bool),
                      np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))


def subset_items(dataset: Dataset, item_indices) -> Dataset:
    """Restrict a dataset to the given items (reindexed to 0..len-1).

    Ratings on other items are dropped; users and social information are
    kept as-is.
    """
    keep = np.asarray(sorted(set(int(j) for j in item_indices)), dtype=np.int64)
    if keep.size == 0:
        raise ValueError("item subset must be nonempty")
    if keep.min() < 0 or keep.max() >= dataset.n_items:
        raise ValueError("item index out of range")
    features = FeatureMatrix(dataset.features.matrix[:, keep])
    r = dataset.ratings
    in_keep = np.zeros(dataset.n_items, dtype=bool)
    in_keep[keep] = True
    sel = in_keep[r.items]
    new_items = np.searchsorted(keep, r.items[sel])
    ratings = RatingMatrix(r.n_users, keep.size, r.users[sel], new_items,
                           r.values[sel])
    return Dataset(ratings, features, dataset.social, dataset.groups)


def social_similarity_from_groups(groups: GroupMembership) -> SocialGraph:
    """Jaccard similarity of group memberships, one link per overlapping pair.

    Pairs with no shared group are omitted (observation mask stays 0 there).
    """
    if all(len(groups.groups_of(i)) == 0 for i in range(groups.n_users)):
        raise ValueError("at least one user must have a nonempty group set")
    by_group: dict = {}
    for i in range(groups.n_users):
        for g in groups.groups_of(i):
            by_group.setdefault(g, []).append(i)
    candidates = set()
    for members in by_group.values():
        for a_pos, a in enumerate(members):
            for b in members[a_pos + 1:]:
                candidates.add((a, b))
    pairs = []
    for a, b in sorted(candidates):
        ga, gb = groups.groups_of(a), groups.groups_of(b)
        inter = len(ga & gb)
        if inter:
            pairs.append((a, b, inter / len(ga | gb)))
    return SocialGraph.from_pairs(groups.n_users, pairs)


def tag_similarity(bag_a: np.ndarray, bag_b: np.ndarray) -> float:
    """Cosine similarity of two bag-of-tags count vectors."""
    a = np.asarray(bag_a, dtype=np.float64)
    b = np.asarray(bag_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("tag bags must be over the same dictionary")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("tag bags must be nonzero")
    return float(a @ b / (na * nb))
