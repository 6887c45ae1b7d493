"""Matrix-factorization embeddings and the dot / cosine scoring functions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

ScoreMode = Literal["dot", "cosine"]

# rows with a norm below this score 0 in cosine mode and receive no gradient
NORM_EPS = 1e-12


@dataclass
class MfModel:
    user_emb: np.ndarray
    item_emb: np.ndarray
    score_mode: ScoreMode = "dot"

    def __post_init__(self):
        if self.score_mode not in ("dot", "cosine"):
            raise ValueError(f"unknown score_mode {self.score_mode!r}")
        if self.user_emb.ndim != 2 or self.item_emb.ndim != 2 or \
                self.user_emb.shape[1] != self.item_emb.shape[1]:
            raise ValueError("embedding tables must be 2-D with matching width")

    @property
    def d(self) -> int:
        return self.user_emb.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_emb.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_emb.shape[0]

    def copy(self) -> MfModel:
        return MfModel(self.user_emb.copy(), self.item_emb.copy(), self.score_mode)


def init(n_users: int, n_items: int, d: int, scheme: str = "normal", sigma: float = 0.1,
         seed: int = 0, score_mode: ScoreMode = "dot") -> MfModel:
    """Random embeddings; ``normal`` draws N(0, sigma^2), ``xavier`` draws N(0, 2 / (d + d))."""
    if d < 1:
        raise ValueError("embedding dimension must be >= 1")
    rng = np.random.default_rng(seed)
    if scheme == "normal":
        std = sigma
    elif scheme == "xavier":
        std = math.sqrt(2.0 / (d + d))
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    users = rng.normal(0.0, 1.0, size=(n_users, d)) * std
    items = rng.normal(0.0, 1.0, size=(n_items, d)) * std
    return MfModel(users, items, score_mode)


def normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit-normalize rows; dead rows (norm < NORM_EPS) map to zero. Returns (normed, norms)."""
    norms = np.linalg.norm(x, axis=-1)
    safe = np.where(norms < NORM_EPS, 1.0, norms)
    out = x / safe[..., None]
    out[norms < NORM_EPS] = 0.0
    return out, norms


def normalize_rows_backward(normed: np.ndarray, norms: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Pull dL/d(normed row) back through x -> x / ||x||."""
    safe = np.where(norms < NORM_EPS, 1.0, norms)
    proj = grad - normed * np.sum(grad * normed, axis=-1, keepdims=True)
    out = proj / safe[..., None]
    out[norms < NORM_EPS] = 0.0
    return out


def score(m: MfModel, u: int, i: int) -> float:
    w, h = m.user_emb[u], m.item_emb[i]
    dot = float(w @ h)
    if m.score_mode == "dot":
        return dot
    nw, nh = np.linalg.norm(w), np.linalg.norm(h)
    if nw < NORM_EPS or nh < NORM_EPS:
        return 0.0
    return dot / (nw * nh)


def score_users(m: MfModel, users) -> np.ndarray:
    """Full item score matrix for a block of users."""
    users = np.atleast_1d(np.asarray(users, dtype=np.int64))
    if m.score_mode == "dot":
        return m.user_emb[users] @ m.item_emb.T
    un, _ = normalize_rows(m.user_emb[users])
    hn, _ = normalize_rows(m.item_emb)
    return un @ hn.T


def score_all_items(m: MfModel, u: int) -> np.ndarray:
    return score_users(m, [u])[0]


_HEADER = "header.txt"


def save(m: MfModel, directory: str | Path) -> None:
    """Write ``header.txt`` ("n_users n_items d score_mode") plus one .npy file per table."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / _HEADER).write_text(f"{m.n_users} {m.n_items} {m.d} {m.score_mode}\n")
    np.save(directory / "user_emb.npy", m.user_emb)
    np.save(directory / "item_emb.npy", m.item_emb)


def load(directory: str | Path) -> MfModel:
    directory = Path(directory)
    n_users, n_items, d, mode = (directory / _HEADER).read_text().split()
    users = np.load(directory / "user_emb.npy")
    items = np.load(directory / "item_emb.npy")
    if users.shape != (int(n_users), int(d)) or items.shape != (int(n_items), int(d)):
        raise ValueError(f"checkpoint {directory} tables do not match header")
    return MfModel(users, items, mode)
