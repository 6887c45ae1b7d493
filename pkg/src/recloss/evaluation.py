"""Full-catalog top-K evaluation (Recall@K, NDCG@K) and a popularity baseline.

Recall@K divides by |Test(u)|, not min(K, |Test(u)|). Users without test
items are left out of the means. Ties in score go to the smaller item index.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .data import InteractionDataset

# block of user indices -> (len(block), n_items) score matrix
ScoresFn = Callable[[np.ndarray], np.ndarray]

REPORT_HEADER = ("model", "loss", "K", "recall", "ndcg", "n_users")


@dataclass
class EvalReport:
    K: int
    recall_at_k: float
    ndcg_at_k: float
    n_users_evaluated: int
    per_user_recall: np.ndarray | None = None
    per_user_ndcg: np.ndarray | None = None
    users: np.ndarray | None = None

    def csv_row(self, model: str = "", loss: str = "") -> tuple:
        return (model, loss, self.K, f"{self.recall_at_k:.6f}", f"{self.ndcg_at_k:.6f}",
                self.n_users_evaluated)


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best entries per row, best first, ties to the smaller index."""
    n = scores.shape[1]
    k = min(k, n)
    if k == n:
        return np.argsort(-scores, axis=1, kind="stable")
    # the k-th largest value per row; everything strictly above it is in, ties
    # at the threshold are resolved by a stable sort over a candidate set
    kth = -np.partition(-scores, k - 1, axis=1)[:, k - 1:k]
    out = np.empty((scores.shape[0], k), dtype=np.int64)
    for r in range(scores.shape[0]):
        cand = np.flatnonzero(scores[r] >= kth[r])
        order = np.argsort(-scores[r, cand], kind="stable")
        out[r] = cand[order[:k]]
    return out


def _discounts(k: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, k + 2))


def evaluate(scores_fn: ScoresFn, train: InteractionDataset, test: InteractionDataset,
             K: int = 20, block: int = 256, keep_per_user: bool = False) -> EvalReport:
    if K < 1:
        raise ValueError("K must be >= 1")
    if test.n_interactions == 0:
        raise ValueError("test set is empty")
    if train.n_items != test.n_items or train.n_users != test.n_users:
        raise ValueError("train and test datasets have different dimensions")
    users = np.flatnonzero(test.user_degree > 0)
    disc = _discounts(K)
    idcg_cum = np.cumsum(disc)
    recalls = np.empty(users.size)
    ndcgs = np.empty(users.size)
    for start in range(0, users.size, block):
        ub = users[start:start + block]
        s = np.array(scores_fn(ub), dtype=np.float64)
        if s.shape != (ub.size, train.n_items):
            raise ValueError(f"scores_fn returned shape {s.shape}, expected {(ub.size, train.n_items)}")
        if np.isnan(s).any():
            raise FloatingPointError("scores contain NaN")
        rows = np.repeat(np.arange(ub.size), train.user_degree[ub])
        cols = np.concatenate([train.items_of(u) for u in ub]) if rows.size else np.zeros(0, np.int64)
        s[rows, cols] = -np.inf
        top = top_k(s, K)
        hit = test.contains(np.broadcast_to(ub[:, None], top.shape), top)
        n_test = test.user_degree[ub]
        recalls[start:start + ub.size] = hit.sum(axis=1) / n_test
        dcg = hit @ disc[:top.shape[1]]
        ndcgs[start:start + ub.size] = dcg / idcg_cum[np.minimum(n_test, K) - 1]
    rep = EvalReport(K, float(recalls.mean()), float(ndcgs.mean()), int(users.size))
    if keep_per_user:
        rep.per_user_recall, rep.per_user_ndcg, rep.users = recalls, ndcgs, users
    return rep


def popularity_baseline(train: InteractionDataset) -> ScoresFn:
    """Every user gets the item ranking by descending training count."""
    if train.n_interactions == 0:
        raise ValueError("popularity baseline needs a non-empty training set")
    counts = train.item_degree.astype(np.float64)

    def scores(users):
        return np.broadcast_to(counts, (len(np.atleast_1d(users)), counts.size)).copy()
    return scores


def random_baseline(n_items: int, seed: int = 0) -> ScoresFn:
    rng = np.random.default_rng(seed)

    def scores(users):
        return rng.random((len(np.atleast_1d(users)), n_items))
    return scores


def write_report_csv(rows, path: str | Path) -> None:
    """``rows`` are (model, loss, report) triples."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for model, loss, rep in rows:
            w.writerow(rep.csv_row(model, loss))


def format_table(rows) -> str:
    """Aligned plain-text table of (model, loss, report) triples."""
    cells = [("model", "loss", "K", "Recall", "NDCG", "users")]
    for model, loss, rep in rows:
        cells.append((model, loss, str(rep.K), f"{rep.recall_at_k:.4f}", f"{rep.ndcg_at_k:.4f}",
                      str(rep.n_users_evaluated)))
    widths = [max(len(r[c]) for r in cells) for c in range(len(cells[0]))]
    buf = io.StringIO()
    for j, r in enumerate(cells):
        buf.write("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() + "\n")
        if j == 0:
            buf.write("  ".join("-" * w for w in widths) + "\n")
    return buf.getvalue()
