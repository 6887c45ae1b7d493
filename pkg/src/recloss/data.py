"""Implicit-feedback interaction data: loading, splitting, popularity."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.sparse as sp

Format = Literal["adjacency", "pairs"]


class DataFormatError(ValueError):
    """A malformed interaction file."""


def _csr(rows: np.ndarray, cols: np.ndarray, n_rows: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((cols, rows))
    counts = np.bincount(rows, minlength=n_rows)
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, cols[order].astype(np.int64)


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    """Observed positive (user, item) pairs stored in both CSR orientations.

    ``user_indptr``/``user_indices`` hold the sorted items of every user and
    ``item_indptr``/``item_indices`` the sorted users of every item.
    """

    n_users: int
    n_items: int
    user_indptr: np.ndarray
    user_indices: np.ndarray
    item_indptr: np.ndarray
    item_indices: np.ndarray

    @classmethod
    def from_pairs(cls, users, items, n_users: int | None = None,
                   n_items: int | None = None) -> InteractionDataset:
        users = np.asarray(users, dtype=np.int64).ravel()
        items = np.asarray(items, dtype=np.int64).ravel()
        if users.shape != items.shape:
            raise ValueError("users and items must have the same length")
        if users.size and (users.min() < 0 or items.min() < 0):
            raise ValueError("indices must be non-negative")
        nu = int(users.max()) + 1 if users.size else 0
        ni = int(items.max()) + 1 if items.size else 0
        if n_users is not None:
            if n_users < nu:
                raise ValueError(f"n_users={n_users} but saw user index {nu - 1}")
            nu = n_users
        if n_items is not None:
            if n_items < ni:
                raise ValueError(f"n_items={n_items} but saw item index {ni - 1}")
            ni = n_items
        if users.size:
            keys = np.unique(users * max(ni, 1) + items)
            users, items = keys // max(ni, 1), keys % max(ni, 1)
        u_ptr, u_idx = _csr(users, items, nu)
        i_ptr, i_idx = _csr(items, users, ni)
        return cls(nu, ni, u_ptr, u_idx, i_ptr, i_idx)

    @property
    def n_interactions(self) -> int:
        return int(self.user_indices.size)

    def items_of(self, u: int) -> np.ndarray:
        return self.user_indices[self.user_indptr[u]:self.user_indptr[u + 1]]

    def users_of(self, i: int) -> np.ndarray:
        return self.item_indices[self.item_indptr[i]:self.item_indptr[i + 1]]

    @property
    def user_degree(self) -> np.ndarray:
        return np.diff(self.user_indptr)

    @property
    def item_degree(self) -> np.ndarray:
        return np.diff(self.item_indptr)

    @property
    def pos_by_user(self) -> list[list[int]]:
        return [self.items_of(u).tolist() for u in range(self.n_users)]

    @property
    def pos_by_item(self) -> list[list[int]]:
        return [self.users_of(i).tolist() for i in range(self.n_items)]

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """All (user, item) pairs in user-major order."""
        users = np.repeat(np.arange(self.n_users, dtype=np.int64), self.user_degree)
        return users, self.user_indices.copy()

    def to_csr(self, dtype=np.float64) -> sp.csr_matrix:
        data = np.ones(self.n_interactions, dtype=dtype)
        return sp.csr_matrix((data, self.user_indices, self.user_indptr),
                             shape=(self.n_users, self.n_items))

    def contains(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        """Vectorized membership test of (users[k], items[k]) pairs."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        keys = self._keys()
        q = users * self.n_items + items
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, max(keys.size - 1, 0))
        if keys.size == 0:
            return np.zeros(q.shape, dtype=bool)
        return keys[pos] == q

    def _keys(self) -> np.ndarray:
        cached = self.__dict__.get("_key_cache")
        if cached is None:
            users, items = self.pairs()
            cached = users * self.n_items + items
            object.__setattr__(self, "_key_cache", cached)
        return cached

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InteractionDataset):
            return NotImplemented
        return (self.n_users == other.n_users and self.n_items == other.n_items
                and np.array_equal(self.user_indptr, other.user_indptr)
                and np.array_equal(self.user_indices, other.user_indices))

    def __repr__(self) -> str:
        return (f"InteractionDataset(n_users={self.n_users}, n_items={self.n_items}, "
                f"n_interactions={self.n_interactions})")


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    seed: int = 0
    strategy: str = "leave-ratio-out-per-user"

    def __post_init__(self):
        if self.strategy != "leave-ratio-out-per-user":
            raise ValueError(f"unknown split strategy {self.strategy!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class PopularityTable:
    counts: np.ndarray
    probs: np.ndarray


def _parse_header(line: str) -> tuple[int, int] | None:
    parts = line.lstrip("#").split()
    if len(parts) == 2 and all(p.isdigit() for p in parts):
        return int(parts[0]), int(parts[1])
    return None


def load_interactions(path: str | Path, format: Format = "pairs") -> InteractionDataset:
    """Read an interaction file.

    ``pairs`` holds one ``user item`` pair per line; ``adjacency`` holds
    ``user item1 item2 ...`` per line. A first line of the form
    ``# n_users n_items`` fixes the dimensions; otherwise they are one more
    than the largest index seen. Other lines starting with ``#`` are skipped.
    """
    if format not in ("pairs", "adjacency"):
        raise ValueError(f"unknown format {format!r}")
    path = Path(path)
    users: list[int] = []
    items: list[int] = []
    header = None
    n_records = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if lineno == 1:
                    header = _parse_header(line)
                continue
            try:
                nums = [int(tok) for tok in line.split()]
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-integer token in {line!r}") from None
            if any(n < 0 for n in nums):
                raise DataFormatError(f"{path}:{lineno}: negative index")
            if format == "pairs":
                if len(nums) != 2:
                    raise DataFormatError(f"{path}:{lineno}: expected 'user item', got {line!r}")
                users.append(nums[0])
                items.append(nums[1])
            else:
                u, rest = nums[0], nums[1:]
                if not rest:
                    # placeholder so an item-less user still counts toward n_users
                    rest = [-1]
                users.extend([u] * len(rest))
                items.extend(rest)
            n_records += 1
    if n_records == 0:
        raise DataFormatError(f"{path}: no interactions")
    u = np.asarray(users, dtype=np.int64)
    i = np.asarray(items, dtype=np.int64)
    keep = i >= 0
    n_users = int(u.max()) + 1
    n_items = int(i[keep].max()) + 1 if keep.any() else 0
    if header is not None:
        n_users, n_items = header
    return InteractionDataset.from_pairs(u[keep], i[keep], n_users=n_users, n_items=n_items)


def write_pairs(ds: InteractionDataset, path: str | Path) -> None:
    """Write ``ds`` in pairs format with a dimension header."""
    users, items = ds.pairs()
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"# {ds.n_users} {ds.n_items}\n")
        for u, i in zip(users.tolist(), items.tolist()):
            fh.write(f"{u} {i}\n")


def densify(ds: InteractionDataset) -> tuple[InteractionDataset, np.ndarray, np.ndarray]:
    """Drop empty users/items and remap the rest to contiguous indices.

    Returns the new dataset and the raw ids of its users and items.
    """
    user_ids = np.flatnonzero(ds.user_degree)
    item_ids = np.flatnonzero(ds.item_degree)
    umap = np.full(ds.n_users, -1, dtype=np.int64)
    imap = np.full(ds.n_items, -1, dtype=np.int64)
    umap[user_ids] = np.arange(user_ids.size)
    imap[item_ids] = np.arange(item_ids.size)
    users, items = ds.pairs()
    out = InteractionDataset.from_pairs(umap[users], imap[items],
                                        n_users=user_ids.size, n_items=item_ids.size)
    return out, user_ids, item_ids


def write_id_map(raw_ids: np.ndarray, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for idx, raw in enumerate(raw_ids.tolist()):
            fh.write(f"{raw} {idx}\n")


def split(ds: InteractionDataset, spec: SplitSpec) -> tuple[InteractionDataset, InteractionDataset]:
    """Hold out ``ceil(test_fraction * |I_u|)`` items per user (at most ``|I_u| - 1``).

    Users with fewer than two interactions keep everything in train. Each
    user's items are shuffled with a generator seeded by ``spec.seed``.
    """
    rng = np.random.default_rng(spec.seed)
    tr_u, tr_i, te_u, te_i = [], [], [], []
    for u in range(ds.n_users):
        items = ds.items_of(u)
        n = items.size
        if n == 0:
            continue
        n_test = 0 if n < 2 else min(math.ceil(spec.test_fraction * n), n - 1)
        perm = rng.permutation(items)
        te_i.append(perm[:n_test])
        tr_i.append(perm[n_test:])
        te_u.append(np.full(n_test, u, dtype=np.int64))
        tr_u.append(np.full(n - n_test, u, dtype=np.int64))

    def build(us, its):
        if not us:
            return InteractionDataset.from_pairs([], [], ds.n_users, ds.n_items)
        return InteractionDataset.from_pairs(np.concatenate(us), np.concatenate(its),
                                             ds.n_users, ds.n_items)

    return build(tr_u, tr_i), build(te_u, te_i)


def popularity(ds: InteractionDataset) -> PopularityTable:
    if ds.n_interactions == 0:
        raise ValueError("popularity of an empty dataset is undefined")
    counts = ds.item_degree.astype(np.int64)
    return PopularityTable(counts=counts, probs=counts / ds.n_interactions)


def synthetic(n_users: int = 1000, n_items: int = 1700, interactions_per_user: float = 100.0,
              n_factors: int = 12, popularity_skew: float = 1.0, sharpness: float = 3.0,
              seed: int = 0) -> InteractionDataset:
    """Sample a latent-factor implicit dataset with a long-tailed item popularity.

    Each user draws ``~ interactions_per_user`` distinct items with
    probability proportional to ``exp(sharpness * <a_u, b_i> + popularity_skew * log pop_i)``
    (Gumbel top-k). The default sizes mimic MovieLens-100k.
    """
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n_users, n_factors)) / math.sqrt(n_factors)
    b = rng.normal(size=(n_items, n_factors))
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    pop = rng.zipf(1.5, size=n_items).clip(max=1000).astype(float)
    logits = sharpness * (a @ b.T) * math.sqrt(n_factors) / 2 + popularity_skew * np.log(pop)
    sizes = np.clip(rng.geometric(1.0 / interactions_per_user, size=n_users), 5, n_items // 2)
    users, items = [], []
    for u in range(n_users):
        g = logits[u] + rng.gumbel(size=n_items)
        top = np.argpartition(-g, sizes[u])[:sizes[u]]
        users.append(np.full(top.size, u))
        items.append(top)
    return InteractionDataset.from_pairs(np.concatenate(users), np.concatenate(items),
                                         n_users, n_items)
