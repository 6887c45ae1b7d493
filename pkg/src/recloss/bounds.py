"""Numerical certification of the InfoNCE / MINE / BPR inequality chains.

All checked inequalities are algebraic facts on a fixed finite sample of
scores, with d_j = s_j - p:

    (a) info >= mine
    (b) max_j(0, d_j) + log(N + 1) >= info
    (c) mine >= max_j d_j
    (d) mine >= mean_j d_j + log N
    (e) bpr >= sum_j max(0, d_j)
    (f) bpr >= sum_j d_j
    (g) info >= mean_j d_j + log N

where info = log(1 + sum_j e^{d_j}), mine = log sum_j e^{d_j} and
bpr = sum_j log(1 + e^{d_j}). The sample-to-expectation approximation steps
are not inequalities and are only measured as slack.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .losses import LossSpec, ScoreBatch, evaluate_batch

INEQUALITIES = ("a", "b", "c", "d", "e", "f", "g")
INFO_MINE_CHAIN = ("a", "b", "c", "d")
BPR_CHAIN = ("e", "f", "g")
TOLERANCE = -1e-10
CSV_HEADER = ("inequality", "N", "sigma", "mean_slack", "min_slack", "violations")

_INFO = LossSpec("infonce", temperature=1.0, score_mode="dot")
_MINE = LossSpec("mine")
_BPR = LossSpec("bpr")


@dataclass
class BoundRecord:
    name: str
    lhs: float
    rhs: float
    slack: float
    holds: bool


@dataclass
class BoundReport:
    records: list[BoundRecord]
    batch: dict = field(default_factory=dict)
    counterexample: dict | None = None

    @property
    def holds(self) -> bool:
        return all(r.holds for r in self.records)

    def __getitem__(self, name: str) -> BoundRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)


def sides(pos: np.ndarray, negs: np.ndarray, backend: str | None = None) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """(lhs, rhs) arrays of every inequality for a block of score batches."""
    pos = np.asarray(pos, dtype=np.float64)
    negs = np.asarray(negs, dtype=np.float64)
    n = negs.shape[1]
    info = evaluate_batch(_INFO, pos, negs, backend=backend)[0]
    mine = evaluate_batch(_MINE, pos, negs, backend=backend)[0]
    bpr = evaluate_batch(_BPR, pos, negs, backend=backend)[0]
    diff = negs - pos[:, None]
    dmax = diff.max(axis=1)
    dmean = diff.mean(axis=1)
    logn = math.log(n)
    return {
        "a": (info, mine),
        "b": (np.maximum(dmax, 0.0) + math.log(n + 1), info),
        "c": (mine, dmax),
        "d": (mine, dmean + logn),
        "e": (bpr, np.maximum(diff, 0.0).sum(axis=1)),
        "f": (bpr, diff.sum(axis=1)),
        "g": (info, dmean + logn),
    }


def slacks(pos, negs, backend: str | None = None) -> dict[str, np.ndarray]:
    return {k: lhs - rhs for k, (lhs, rhs) in sides(pos, negs, backend).items()}


def _report(b: ScoreBatch, names: Iterable[str]) -> BoundReport:
    s = sides(np.array([b.pos]), b.negs[None, :])
    records = []
    for name in names:
        lhs, rhs = float(s[name][0][0]), float(s[name][1][0])
        slack = lhs - rhs
        records.append(BoundRecord(name, lhs, rhs, slack, slack >= TOLERANCE))
    report = BoundReport(records, {"N": b.n, "pos": b.pos})
    if not report.holds:
        report.counterexample = {"pos": b.pos, "negs": b.negs.tolist()}
    return report


def check_info_mine_chain(b: ScoreBatch) -> BoundReport:
    """Inequalities (a)-(d) on one batch."""
    return _report(b, INFO_MINE_CHAIN)


def check_bpr_chain(b: ScoreBatch) -> BoundReport:
    """Inequalities (e)-(g) on one batch."""
    return _report(b, BPR_CHAIN)


ScoreSource = Callable[[np.random.Generator, int, int], tuple[np.ndarray, np.ndarray]]


def gaussian_source(sigma: float) -> ScoreSource:
    def draw(rng, n, trials):
        return rng.normal(0.0, sigma, size=trials), rng.normal(0.0, sigma, size=(trials, n))
    return draw


def model_source(model, ds) -> ScoreSource:
    """Scores of a trained model: a random observed (u, i) against N uniform items."""
    from .model import score_users

    users, items = ds.pairs()

    def draw(rng, n, trials):
        pick = rng.integers(0, users.size, size=trials)
        u, i = users[pick], items[pick]
        negs = rng.integers(0, ds.n_items, size=(trials, n))
        s = score_users(model, u)
        rows = np.arange(trials)
        return s[rows, i], s[rows[:, None], negs]
    return draw


@dataclass
class SweepRow:
    inequality: str
    N: int
    sigma: float | str
    mean_slack: float
    min_slack: float
    violations: int
    counterexample: dict | None = None

    def as_tuple(self):
        return (self.inequality, self.N, self.sigma, self.mean_slack, self.min_slack, self.violations)


def tightness_sweep(source: ScoreSource, n_list: Iterable[int], trials: int, seed: int = 0,
                    sigma_label: float | str = "", chunk: int = 20000,
                    backend: str | None = None) -> list[SweepRow]:
    """Mean/min slack and violation count of every inequality for each N."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rows: list[SweepRow] = []
    for n in n_list:
        rng = np.random.default_rng([seed, int(n)])
        total = {k: 0.0 for k in INEQUALITIES}
        low = {k: math.inf for k in INEQUALITIES}
        bad = {k: 0 for k in INEQUALITIES}
        example = {}
        done = 0
        step = max(1, min(chunk, chunk * 64 // max(n, 1)))
        while done < trials:
            size = min(step, trials - done)
            pos, negs = source(rng, int(n), size)
            for k, sl in slacks(pos, negs, backend).items():
                total[k] += float(sl.sum())
                low[k] = min(low[k], float(sl.min()))
                hits = np.flatnonzero(sl < TOLERANCE)
                bad[k] += int(hits.size)
                if hits.size and k not in example:
                    j = hits[0]
                    example[k] = {"pos": float(pos[j]), "negs": negs[j].tolist(), "slack": float(sl[j])}
            done += size
        for k in INEQUALITIES:
            rows.append(SweepRow(k, int(n), sigma_label, total[k] / trials, low[k], bad[k],
                                 example.get(k)))
    return rows


def certify(trials: int = 100_000, n_list=(1, 2, 8, 64, 800), sigmas=(0.01, 1.0, 10.0),
            seed: int = 0, backend: str | None = None) -> list[SweepRow]:
    """Randomized certification over a grid of N and score scales.

    ``trials`` batches are split evenly across the (N, sigma) grid.
    """
    per_cell = max(1, math.ceil(trials / (len(n_list) * len(sigmas))))
    rows: list[SweepRow] = []
    for j, sigma in enumerate(sigmas):
        rows += tightness_sweep(gaussian_source(sigma), n_list, per_cell, seed=seed * 1000 + j,
                                sigma_label=sigma, backend=backend)
    return rows


def write_csv(rows: Iterable[SweepRow], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow(r.as_tuple())


def equal_score_slacks(n: int, score: float = 0.0, backend: str | None = None) -> dict[str, tuple[float, float]]:
    """Slack of (a) and (c) when all N + 1 scores coincide, next to their closed forms.

    With every d_j = 0: info = log(N + 1) and mine = log N, so (a) has slack
    log((N + 1) / N) and (c) has slack log N.
    """
    s = slacks(np.array([score]), np.full((1, n), score), backend)
    return {
        "a": (float(s["a"][0]), math.log((n + 1) / n)),
        "c": (float(s["c"][0]), math.log(n)),
    }
