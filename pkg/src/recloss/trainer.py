"""Mini-batch Adam training of MfModel under any loss family."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import model as mf
from .data import InteractionDataset, SplitSpec, split
from .evaluation import evaluate
from .kernels import get_backend
from .losses import FAMILIES, LossSpec, ScoreBatch, evaluate_batch, regime, relative_error
from .sampling import Sampler, SamplerConfig, TauPolicy, rng_stream, tau_plus_all

logger = logging.getLogger(__name__)

# full-softmax training scores every item for every positive
SOFTMAX_FULL_MAX_ITEMS = 50_000


class TrainingDivergedError(FloatingPointError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class TrainConfig:
    loss: LossSpec = field(default_factory=lambda: LossSpec("bpr"))
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    tau: TauPolicy = field(default_factory=TauPolicy)
    batch_size: int = 512
    lr: float = 1e-4
    lr_floor: float = 1e-6
    lr_decay: float = 0.5
    plateau_patience: int = 5
    plateau_tol: float = 1e-5
    l2_reg: float = 1e-8
    max_epochs: int = 500
    eval_every: int = 5
    d: int = 64
    init_scheme: str = "normal"
    init_sigma: float = 0.1
    valid_fraction: float = 0.1
    eval_k: int = 20
    freeze_extra: bool = False
    seed: int = 0
    backend: str | None = None

    def __post_init__(self):
        if not 0 < self.lr_decay < 1:
            raise ValueError("lr_decay must lie in (0, 1)")
        if not 0 < self.lr_floor < self.lr:
            raise ValueError("need 0 < lr_floor < lr")
        if self.batch_size < 1 or self.max_epochs < 0 or self.eval_every < 1 or self.d < 1:
            raise ValueError("batch_size, eval_every, d must be >= 1 and max_epochs >= 0")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if self.l2_reg < 0:
            raise ValueError("l2_reg must be >= 0")
        if self.loss.debiased and self.sampler.m_extra_positives < 1:
            raise ValueError(f"{self.loss.family} needs sampler.m_extra_positives >= 1")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    recall20: float
    lr: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0
    best_recall: float = float("nan")
    seconds: float = 0.0

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("epoch", "loss", "recall20", "lr"))
            for r in self.records:
                rec = "" if math.isnan(r.recall20) else repr(r.recall20)
                w.writerow((r.epoch, repr(r.loss), rec, repr(r.lr)))

    def same_as(self, other: TrainHistory) -> bool:
        a = [(r.epoch, r.loss, r.recall20, r.lr) for r in self.records]
        b = [(r.epoch, r.loss, r.recall20, r.lr) for r in other.records]
        return np.array_equal(np.array(a, dtype=float), np.array(b, dtype=float), equal_nan=True) \
            and self.stop_reason == other.stop_reason


@dataclass
class Batch:
    """One mini-batch of training positives with their sampled items."""

    users: np.ndarray
    pos: np.ndarray
    negs: np.ndarray
    extra: np.ndarray
    tau: np.ndarray | None = None
    q: np.ndarray | None = None


@dataclass
class Gradients:
    users: np.ndarray
    items: np.ndarray
    d_user: np.ndarray
    d_item: np.ndarray


def _embed(table: np.ndarray, cosine: bool):
    if not cosine:
        return table, None
    return mf.normalize_rows(table)


def batch_objective(m: mf.MfModel, spec: LossSpec, b: Batch, l2_reg: float = 0.0,
                    freeze_extra: bool = False, backend: str | None = None,
                    with_grad: bool = True):
    """Mean batch loss plus L2 on the touched rows, and its gradient.

    Returns (objective, mean loss, Gradients or None). Gradients hold
    derivatives for the unique user and item rows the batch touches.
    """
    kern = get_backend(backend)
    cosine = m.score_mode == "cosine"
    B = b.users.size
    uu, uinv = np.unique(b.users, return_inverse=True)
    if spec.family == "softmax_full":
        iu = np.arange(m.n_items)
        cols = b.pos[:, None]
    else:
        cols = np.concatenate([b.pos[:, None], b.negs, b.extra], axis=1)
        iu, flat = np.unique(cols, return_inverse=True)
        cols = flat.reshape(cols.shape)
    W_raw, H_raw = m.user_emb[uu], m.item_emb[iu]
    W, wn = _embed(W_raw, cosine)
    H, hn = _embed(H_raw, cosine)
    rows = uinv.astype(np.int64)
    cols = np.ascontiguousarray(cols, dtype=np.int64)

    if spec.family == "softmax_full":
        S_all = W[rows] @ H.T
        pos_s = S_all[np.arange(B), b.pos]
        vals, dpos, dall = evaluate_batch(spec, pos_s, S_all, backend=backend)[:3]
        G_all = dall / B
        G_all[np.arange(B), b.pos] += dpos / B
    else:
        S = kern.gather_scores(np.ascontiguousarray(W), np.ascontiguousarray(H), rows, cols)
        n = b.negs.shape[1]
        vals, dpos, dnegs, dextra = evaluate_batch(
            spec, S[:, 0], S[:, 1:1 + n], S[:, 1 + n:] if spec.debiased else None,
            b.tau, b.q, backend)
    loss = float(vals.mean())
    reg = l2_reg * (float(np.sum(W_raw ** 2)) + float(np.sum(H_raw ** 2)))
    if not with_grad:
        return loss + reg, loss, None

    if spec.family == "softmax_full":
        gW = np.zeros_like(W)
        np.add.at(gW, rows, G_all @ H)
        gH = G_all.T @ W[rows]
    else:
        G = np.zeros_like(S)
        G[:, 0] = dpos
        G[:, 1:1 + n] = dnegs
        if spec.debiased and not freeze_extra:
            G[:, 1 + n:] = dextra
        G /= B
        gW = np.zeros_like(W)
        gH = np.zeros_like(H)
        kern.scatter_grads(np.ascontiguousarray(W), np.ascontiguousarray(H), rows, cols, G, gW, gH)
    if cosine:
        gW = mf.normalize_rows_backward(W, wn, gW)
        gH = mf.normalize_rows_backward(H, hn, gH)
    gW += 2.0 * l2_reg * W_raw
    gH += 2.0 * l2_reg * H_raw
    return loss + reg, loss, Gradients(uu, iu, gW, gH)


class Adam:
    """Adam over the two embedding tables; moments are dense, updates touch only given rows."""

    def __init__(self, m: mf.MfModel, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.state = {
            "user": (np.zeros_like(m.user_emb), np.zeros_like(m.user_emb)),
            "item": (np.zeros_like(m.item_emb), np.zeros_like(m.item_emb)),
        }

    def step(self, m: mf.MfModel, g: Gradients, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for key, table, idx, grad in (("user", m.user_emb, g.users, g.d_user),
                                      ("item", m.item_emb, g.items, g.d_item)):
            mom, vel = self.state[key]
            # rows outside the batch have zero gradient: their moments decay
            mom *= b1
            vel *= b2
            mom[idx] += (1 - b1) * grad
            vel[idx] += (1 - b2) * grad ** 2
            table -= lr * (mom / c1) / (np.sqrt(vel / c2) + self.eps)


class BatchBuilder:
    def __init__(self, cfg: TrainConfig, ds: InteractionDataset):
        self.cfg = cfg
        self.ds = ds
        self.sampler = Sampler(cfg.sampler, ds)
        self.tau = tau_plus_all(cfg.tau, ds) if cfg.loss.debiased else None

    def build(self, users, pos, rng: np.random.Generator) -> Batch:
        spec = self.cfg.loss
        if spec.family == "softmax_full":
            empty = np.zeros((users.size, 0), dtype=np.int64)
            return Batch(users, pos, empty, empty)
        negs = self.sampler.negatives(users, rng)
        if spec.debiased:
            extra = self.sampler.extra_positives(users, rng)
        else:
            extra = np.zeros((users.size, 0), dtype=np.int64)
        tau = self.tau[users] if self.tau is not None else None
        q = None
        if spec.family == "sampled_softmax":
            # expected number of draws of each sampled item
            q = negs.shape[1] * self.sampler.proposal_probs(users, negs)
        return Batch(users, pos, negs, extra, tau, q)


def _check_compatible(cfg: TrainConfig, train_ds, valid_ds):
    if train_ds.n_interactions == 0:
        raise ValueError("training set is empty")
    if valid_ds is not None and (valid_ds.n_users != train_ds.n_users
                                 or valid_ds.n_items != train_ds.n_items):
        raise ValueError("train and validation datasets have different dimensions")
    if cfg.loss.family == "softmax_full" and train_ds.n_items > SOFTMAX_FULL_MAX_ITEMS:
        raise ValueError(f"softmax_full training is limited to {SOFTMAX_FULL_MAX_ITEMS} items")


def train(cfg: TrainConfig, train_ds: InteractionDataset,
          valid_ds: InteractionDataset | None = None) -> tuple[mf.MfModel, TrainHistory]:
    """Train an MfModel; returns the model with the best validation Recall@K.

    Without ``valid_ds`` a validation split of ``cfg.valid_fraction`` of each
    user's training positives is carved off first.
    """
    if valid_ds is None and cfg.valid_fraction > 0:
        train_ds, valid_ds = split(train_ds, SplitSpec(cfg.valid_fraction, seed=cfg.seed))
        if valid_ds.n_interactions == 0:
            valid_ds = None
    _check_compatible(cfg, train_ds, valid_ds)
    spec = cfg.loss
    init_seed = int(rng_stream(cfg.seed, "init").integers(2 ** 31))
    model = mf.init(train_ds.n_users, train_ds.n_items, cfg.d, cfg.init_scheme, cfg.init_sigma,
                    seed=init_seed, score_mode=spec.score_mode)
    opt = Adam(model)
    builder = BatchBuilder(cfg, train_ds)
    shuffle_rng = rng_stream(cfg.seed, "shuffle")
    sample_rng = rng_stream(cfg.seed, "sampler")
    users_all, items_all = train_ds.pairs()
    hist = TrainHistory()
    best = model.copy()
    lr = cfg.lr
    stale = 0
    start = time.perf_counter()
    hist.stop_reason = "max_epochs"

    def recall(m):
        return evaluate(lambda u: mf.score_users(m, u), train_ds, valid_ds, cfg.eval_k).recall_at_k

    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(users_all.size)
        total = 0.0
        for bi, s in enumerate(range(0, order.size, cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            batch = builder.build(users_all[idx], items_all[idx], sample_rng)
            obj, loss, grads = batch_objective(model, spec, batch, cfg.l2_reg, cfg.freeze_extra,
                                               cfg.backend)
            if not math.isfinite(obj) or not (np.isfinite(grads.d_user).all()
                                              and np.isfinite(grads.d_item).all()):
                diag = {"epoch": epoch, "batch": bi, "lr": lr, "loss": obj,
                        "users": batch.users[:10].tolist(),
                        "max_abs_user_emb": float(np.abs(model.user_emb).max()),
                        "max_abs_item_emb": float(np.abs(model.item_emb).max())}
                raise TrainingDivergedError(f"non-finite loss or gradient: {diag}", diag)
            total += loss * idx.size
            opt.step(model, grads, lr)
        rec = float("nan")
        if valid_ds is not None and epoch % cfg.eval_every == 0:
            rec = recall(model)
            if math.isnan(hist.best_recall) or rec - hist.best_recall >= cfg.plateau_tol:
                hist.best_recall, hist.best_epoch = rec, epoch
                best = model.copy()
                stale = 0
            else:
                stale += 1
        hist.records.append(EpochRecord(epoch, total / order.size, rec, lr))
        logger.info("epoch %d loss %.6f recall %.4f lr %.3g", epoch, total / order.size, rec, lr)
        if stale >= cfg.plateau_patience:
            lr *= cfg.lr_decay
            stale = 0
            if lr < cfg.lr_floor:
                hist.stop_reason = "lr_floor"
                break
    hist.seconds = time.perf_counter() - start
    if valid_ds is None:
        best = model
        hist.best_epoch = len(hist.records)
    return best, hist


# ---------------------------------------------------------------------------
# embedding-level gradient certification


@dataclass
class GradientReport:
    worst: dict[str, float]
    checked: dict[str, int]
    skipped: dict[str, int]
    notices: list[str] = field(default_factory=list)

    @property
    def worst_overall(self) -> float:
        return max(self.worst.values(), default=0.0)


def _spec_for(family: str, score_mode: str | None = None) -> LossSpec:
    kw = {}
    if family in ("mse", "debiased_mse", "bpr", "sampled_softmax", "mine", "softmax_full",
                  "mine_plus", "infonce", "debiased_infonce"):
        kw["score_mode"] = score_mode
    if family in ("ccl", "debiased_ccl"):
        kw["score_mode"] = "cosine"
    return LossSpec(family, **kw)


# families whose loss has a ReLU or clamp; the rest are smooth everywhere
_KINKED = frozenset({"ccl", "debiased_ccl", "debiased_mse", "debiased_infonce"})


def _row_regimes(m: mf.MfModel, spec: LossSpec, b: Batch) -> tuple:
    if spec.family not in _KINKED:
        return ()
    cols = np.concatenate([b.pos[:, None], b.negs, b.extra], axis=1)
    W, _ = _embed(m.user_emb[b.users], m.score_mode == "cosine")
    H, _ = _embed(m.item_emb[cols], m.score_mode == "cosine")
    S = np.einsum("bd,bkd->bk", W, H)
    n = b.negs.shape[1]
    out = []
    for r in range(S.shape[0]):
        sb = ScoreBatch(S[r, 0], S[r, 1:1 + n], S[r, 1 + n:],
                        None if b.tau is None else float(b.tau[r]))
        out.append(regime(spec, sb))
    return tuple(out)


def micro_instance(spec: LossSpec, rng: np.random.Generator, n_users: int = 3, n_items: int = 12,
                   d: int = 4, batch: int = 3, n_neg: int = 5, m_extra: int = 2):
    """A random small model plus batch for ``spec``."""
    mode = spec.score_mode
    m = mf.MfModel(rng.normal(0, 0.7, (n_users, d)), rng.normal(0, 0.7, (n_items, d)), mode)
    users = rng.integers(0, n_users, batch)
    pos = rng.integers(0, n_items, batch)
    if spec.family == "softmax_full":
        empty = np.zeros((batch, 0), dtype=np.int64)
        return m, Batch(users, pos, empty, empty)
    negs = rng.integers(0, n_items, (batch, n_neg))
    extra = rng.integers(0, n_items, (batch, m_extra if spec.debiased else 0))
    tau = rng.uniform(0.01, 0.3, batch) if spec.debiased else None
    q = rng.uniform(0.2, 2.0, (batch, n_neg)) if spec.family == "sampled_softmax" else None
    return m, Batch(users, pos, negs, extra, tau, q)


def embedding_grad_check(m: mf.MfModel, spec: LossSpec, b: Batch, l2_reg: float = 0.0,
                         h: float = 1e-6, backend: str | None = None) -> tuple[float, int, int]:
    """Worst relative error of the analytic embedding gradient; returns (worst, checked, skipped)."""
    _, _, g = batch_objective(m, spec, b, l2_reg, backend=backend)
    base = _row_regimes(m, spec, b)
    worst, checked, skipped = 0.0, 0, 0
    for table, idx, grad in ((m.user_emb, g.users, g.d_user), (m.item_emb, g.items, g.d_item)):
        for r_pos, r in enumerate(idx):
            for c in range(table.shape[1]):
                x0 = table[r, c]
                kink = False
                for step in (10 * h, -10 * h) if spec.family in _KINKED else ():
                    table[r, c] = x0 + step
                    kink |= _row_regimes(m, spec, b) != base
                if kink:
                    table[r, c] = x0
                    skipped += 1
                    continue
                table[r, c] = x0 + h
                fp = batch_objective(m, spec, b, l2_reg, backend=backend, with_grad=False)[0]
                table[r, c] = x0 - h
                fm = batch_objective(m, spec, b, l2_reg, backend=backend, with_grad=False)[0]
                table[r, c] = x0
                num = (fp - fm) / (2 * h)
                worst = max(worst, float(relative_error(grad[r_pos, c], num)))
                checked += 1
    return worst, checked, skipped


def gradient_suite(instances: int = 20, seed: int = 0, families=FAMILIES, score_modes=("dot", "cosine"),
                   l2_reg: float = 1e-3, backend: str | None = None) -> GradientReport:
    """End-to-end finite-difference check of every family through the scoring function.

    ``instances`` micro-instances per family, split evenly over its score modes.
    """
    rep = GradientReport({}, {}, {})
    for fam in families:
        modes = ("cosine",) if fam in ("ccl", "debiased_ccl") else score_modes
        per_mode = -(-instances // len(modes))
        for mode in modes:
            spec = _spec_for(fam, mode)
            key = f"{fam}/{mode}"
            rng = rng_stream(seed, key)
            worst, chk, skp = 0.0, 0, 0
            for _ in range(per_mode):
                m, b = micro_instance(spec, rng)
                w, c, s = embedding_grad_check(m, spec, b, l2_reg, backend=backend)
                worst, chk, skp = max(worst, w), chk + c, skp + s
            rep.worst[key], rep.checked[key], rep.skipped[key] = worst, chk, skp
    # dead rows: the gradient is defined as zero and no finite-difference check is attempted
    spec = LossSpec("ccl")
    m, b = micro_instance(spec, rng_stream(seed, "dead-row"))
    m.user_emb[b.users[0]] = 0.0
    g = batch_objective(m, spec, b, 0.0, backend=backend)[2]
    dead = np.flatnonzero(g.users == b.users[0])
    if not np.all(g.d_user[dead] == 0):
        rep.worst["dead-row"] = float("inf")
    rep.notices.append(f"user {int(b.users[0])} has a zero embedding in cosine mode: "
                       "gradient set to 0, finite-difference check skipped")
    return rep


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **kw)
