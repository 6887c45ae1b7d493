"""Negative / extra-positive sampling and the per-user positive-class prior."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .data import InteractionDataset, popularity

NegativeMode = Literal["uniform-all", "uniform-unobserved", "popularity"]


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named sub-stream of a top-level seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


@dataclass(frozen=True)
class SamplerConfig:
    negative_mode: NegativeMode = "uniform-all"
    n_negatives: int = 800
    m_extra_positives: int = 0
    shared_pool: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.negative_mode not in ("uniform-all", "uniform-unobserved", "popularity"):
            raise ValueError(f"unknown negative_mode {self.negative_mode!r}")
        if self.n_negatives < 1:
            raise ValueError("n_negatives must be >= 1")
        if self.m_extra_positives < 0:
            raise ValueError("m_extra_positives must be >= 0")


@dataclass(frozen=True)
class TauPolicy:
    """How to set the prior probability that a random item is positive for a user.

    ``topk``: (|I_u| + k) / |I|.  ``proportional``: (1 + alpha) |I_u| / |I|.
    """

    mode: Literal["topk", "proportional"] = "proportional"
    k: int = 20
    alpha: float = 0.0

    def __post_init__(self):
        if self.mode not in ("topk", "proportional"):
            raise ValueError(f"unknown tau mode {self.mode!r}")
        if self.k < 0 or self.alpha < 0:
            raise ValueError("k and alpha must be non-negative")


_TAU_MAX = 1.0 - 1e-9


def tau_plus(policy: TauPolicy, ds: InteractionDataset, u: int) -> float:
    n_pos = int(ds.user_degree[u])
    if n_pos < 1:
        raise ValueError(f"user {u} has no positives; tau_plus undefined")
    return float(tau_plus_all(policy, ds)[u])


def tau_plus_all(policy: TauPolicy, ds: InteractionDataset) -> np.ndarray:
    """tau_plus for every user (users with no positives get NaN)."""
    deg = ds.user_degree.astype(np.float64)
    if policy.mode == "topk":
        tau = (deg + policy.k) / ds.n_items
    else:
        tau = (1.0 + policy.alpha) * deg / ds.n_items
    tau = np.minimum(tau, _TAU_MAX)
    tau[deg == 0] = np.nan
    return tau


def debias_weights(policy: TauPolicy, ds: InteractionDataset) -> np.ndarray:
    """c_u = |I| tau_u / |I_u| (constant 1 + alpha under the proportional policy)."""
    deg = ds.user_degree.astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        return ds.n_items * tau_plus_all(policy, ds) / deg


class AliasTable:
    """Walker/Vose alias table for O(1) draws from a fixed discrete distribution."""

    def __init__(self, probs: np.ndarray):
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0 or (p < 0).any() or p.sum() <= 0:
            raise ValueError("probs must be a non-empty non-negative vector with positive sum")
        n = p.size
        scaled = p * (n / p.sum())
        prob = np.zeros(n)
        alias = np.zeros(n, dtype=np.int64)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, g = small.pop(), large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] = scaled[g] + scaled[s] - 1.0
            (small if scaled[g] < 1.0 else large).append(g)
        for i in large + small:
            prob[i] = 1.0
            alias[i] = i
        self.prob = prob
        self.alias = alias

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        n = self.prob.size
        idx = rng.integers(0, n, size=size)
        flip = rng.random(size=size) >= self.prob[idx]
        return np.where(flip, self.alias[idx], idx)


class Sampler:
    """Batched sampler bound to one training dataset."""

    def __init__(self, cfg: SamplerConfig, ds: InteractionDataset):
        if ds.n_interactions == 0:
            raise ValueError("cannot sample from an empty dataset")
        self.cfg = cfg
        self.ds = ds
        self._alias = None
        self._pop = None
        if cfg.negative_mode == "popularity":
            self._pop = popularity(ds).probs
            self._alias = AliasTable(self._pop)

    def negatives(self, users: np.ndarray, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """(len(users), N) negatives, i.i.d. with replacement.

        In shared-pool mode a single set of N items is drawn and repeated for
        every row.
        """
        users = np.asarray(users, dtype=np.int64)
        n = self.cfg.n_negatives if n is None else n
        ds = self.ds
        mode = self.cfg.negative_mode
        if self.cfg.shared_pool and mode != "uniform-unobserved":
            pool = self._draw(rng, (1, n))
            return np.repeat(pool, users.size, axis=0)
        if mode == "uniform-unobserved":
            full = ds.user_degree[users] >= ds.n_items
            if full.any():
                raise ValueError(f"user {int(users[full][0])} has no unobserved items")
        out = self._draw(rng, (users.size, n))
        if mode == "uniform-unobserved":
            rows = np.broadcast_to(users[:, None], out.shape)
            bad = ds.contains(rows, out)
            while bad.any():
                out[bad] = rng.integers(0, ds.n_items, size=int(bad.sum()))
                bad[bad] = ds.contains(rows[bad], out[bad])
        return out

    def _draw(self, rng, size):
        if self._alias is not None:
            return self._alias.draw(rng, size)
        return rng.integers(0, self.ds.n_items, size=size)

    def extra_positives(self, users: np.ndarray, rng: np.random.Generator, m: int | None = None) -> np.ndarray:
        """(len(users), M) items drawn uniformly with replacement from each user's positives."""
        users = np.asarray(users, dtype=np.int64)
        m = self.cfg.m_extra_positives if m is None else m
        deg = self.ds.user_degree[users]
        if m > 0 and (deg == 0).any():
            raise ValueError(f"user {int(users[deg == 0][0])} has no positives")
        offs = np.floor(rng.random((users.size, m)) * deg[:, None]).astype(np.int64)
        return self.ds.user_indices[self.ds.user_indptr[users][:, None] + offs]

    def proposal_probs(self, users: np.ndarray, negs: np.ndarray) -> np.ndarray:
        """Per-draw probability of each sampled negative under the configured distribution."""
        ds = self.ds
        mode = self.cfg.negative_mode
        if mode == "popularity":
            return self._pop[negs]
        if mode == "uniform-unobserved":
            free = (ds.n_items - ds.user_degree[np.asarray(users)]).astype(np.float64)
            return np.broadcast_to(1.0 / free[:, None], negs.shape).copy()
        return np.full(negs.shape, 1.0 / ds.n_items)


def sample_negatives(cfg: SamplerConfig, ds: InteractionDataset, u: int,
                     rng: np.random.Generator) -> list[int]:
    return Sampler(cfg, ds).negatives(np.array([u]), rng)[0].tolist()


def sample_extra_positives(ds: InteractionDataset, u: int, m: int,
                           rng: np.random.Generator) -> list[int]:
    if ds.user_degree[u] == 0:
        raise ValueError(f"user {u} has no positives")
    offs = np.floor(rng.random(m) * ds.user_degree[u]).astype(np.int64)
    return ds.items_of(u)[offs].tolist()
