"""Closed-form linear recommenders: iALS and EASE, original and debiased.

Debiased iALS replaces the squared loss on observed entries by the debiased
pointwise MSE with per-user weight ``c_u``; for user u with item factors H
the exact block minimizer solves

    (c_u (1 - a0) H_S^T H_S + a0 H^T H + lam_u I) w_u = c_u H_S^T 1

(rows of H are item vectors, H_S the rows observed by u). Original iALS
solves (H_S^T H_S + a0 H^T H + lam_u I) w_u = H_S^T 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .data import InteractionDataset

logger = logging.getLogger(__name__)


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class IalsConfig:
    d: int = 64
    alpha0: float = 0.1
    lam: float = 1e-3
    nu: float = 0.0
    c: float = 1.0
    debiased: bool = False
    iters: int = 10
    init_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.d < 1 or self.iters < 0:
            raise ValueError("d must be >= 1 and iters >= 0")
        if self.alpha0 <= 0 or self.lam <= 0 or self.nu < 0 or self.c <= 0:
            raise ValueError("alpha0, lam, c must be > 0 and nu >= 0")
        if self.debiased and (1.0 - self.alpha0) * self.c <= 0:
            raise ValueError("debiased iALS needs (1 - alpha0) * c > 0")


@dataclass(frozen=True)
class EaseConfig:
    lam: float = 500.0
    alpha: float = 0.0
    debiased: bool = False

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be > 0")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")


@dataclass
class LinearModel:
    kind: str
    user_factors: np.ndarray | None = None
    item_factors: np.ndarray | None = None
    weights: np.ndarray | None = None
    history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.kind == "ease":
            if self.weights is None:
                raise ValueError("ease model needs a weight matrix")
            if np.abs(np.diag(self.weights)).max(initial=0.0) > 1e-8:
                raise ValueError("ease weight matrix must have a zero diagonal")
        elif self.kind == "ials":
            if self.user_factors is None or self.item_factors is None:
                raise ValueError("ials model needs user and item factors")
        else:
            raise ValueError(f"unknown linear model kind {self.kind!r}")


def _reg_weights(lam: float, degree: np.ndarray, alpha0: float, n_other: int, nu: float) -> np.ndarray:
    return lam * (degree + alpha0 * n_other) ** nu


def _spd_solve(a: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    try:
        return la.cho_solve(la.cho_factor(a, lower=True, check_finite=False), b, check_finite=False)
    except la.LinAlgError:
        raise SingularSystemError(f"normal matrix for {what} is not positive definite") from None


def _half_step(indptr, indices, fixed, alpha0, reg, weights, scale_pos, kind):
    """Solve every row's block system with the other side's factors held fixed.

    ``weights`` holds the per-row weight on observed entries (c_u, or for the
    item side the weights of the observing users), ``scale_pos`` the factor
    (1 - a0) applied to those weights in the quadratic term.
    """
    n = indptr.size - 1
    d = fixed.shape[1]
    gram = alpha0 * (fixed.T @ fixed)
    out = np.zeros((n, d))
    eye = np.eye(d)
    for r in range(n):
        idx = indices[indptr[r]:indptr[r + 1]]
        wts = weights(r, idx)
        fs = fixed[idx]
        a = (fs.T * (scale_pos * wts)) @ fs + gram + reg[r] * eye
        b = fs.T @ wts
        out[r] = _spd_solve(a, b, f"{kind} {r}")
    return out


def _user_step(ds, H, cfg: IalsConfig, c_user: np.ndarray, alpha0=None, lam=None):
    alpha0 = cfg.alpha0 if alpha0 is None else alpha0
    lam = cfg.lam if lam is None else lam
    reg = _reg_weights(lam, ds.user_degree, alpha0, ds.n_items, cfg.nu)
    if cfg.debiased:
        return _half_step(ds.user_indptr, ds.user_indices, H, alpha0, reg,
                          lambda r, idx: np.full(idx.size, c_user[r]), 1.0 - alpha0, "user")
    return _half_step(ds.user_indptr, ds.user_indices, H, alpha0, reg,
                      lambda r, idx: np.ones(idx.size), 1.0, "user")


def _item_step(ds, W, cfg: IalsConfig, c_user: np.ndarray, alpha0=None, lam=None):
    alpha0 = cfg.alpha0 if alpha0 is None else alpha0
    lam = cfg.lam if lam is None else lam
    reg = _reg_weights(lam, ds.item_degree, alpha0, ds.n_users, cfg.nu)
    if cfg.debiased:
        return _half_step(ds.item_indptr, ds.item_indices, W, alpha0, reg,
                          lambda r, idx: c_user[idx], 1.0 - alpha0, "item")
    return _half_step(ds.item_indptr, ds.item_indices, W, alpha0, reg,
                      lambda r, idx: np.ones(idx.size), 1.0, "item")


def _c_user(ds, cfg: IalsConfig, c_per_user) -> np.ndarray:
    if c_per_user is None:
        return np.full(ds.n_users, cfg.c)
    c = np.asarray(c_per_user, dtype=np.float64)
    if c.shape != (ds.n_users,):
        raise ValueError("c_per_user must have one entry per user")
    return c


def ials_objective(ds: InteractionDataset, W: np.ndarray, H: np.ndarray, cfg: IalsConfig,
                   c_per_user=None) -> float:
    """The iALS objective (debiased form when ``cfg.debiased``), evaluated directly."""
    c = _c_user(ds, cfg, c_per_user)
    users, items = ds.pairs()
    y = np.einsum("kd,kd->k", W[users], H[items])
    if cfg.debiased:
        cu = c[users]
        observed = np.sum(cu * (y - 1.0) ** 2 - cu * cfg.alpha0 * y ** 2)
    else:
        observed = np.sum((y - 1.0) ** 2)
    # ||W H^T||_F^2 = tr((W^T W)(H^T H))
    unobserved = cfg.alpha0 * np.sum((W.T @ W) * (H.T @ H))
    ru = _reg_weights(cfg.lam, ds.user_degree, cfg.alpha0, ds.n_items, cfg.nu)
    ri = _reg_weights(cfg.lam, ds.item_degree, cfg.alpha0, ds.n_users, cfg.nu)
    reg = np.sum(ru * np.sum(W ** 2, axis=1)) + np.sum(ri * np.sum(H ** 2, axis=1))
    return float(observed + unobserved + reg)


def ials_init(ds: InteractionDataset, cfg: IalsConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    return rng.normal(0.0, cfg.init_std, size=(ds.n_items, cfg.d))


def ials_fit(train: InteractionDataset, cfg: IalsConfig, c_per_user=None,
             init_items: np.ndarray | None = None, track_objective: bool = False) -> LinearModel:
    """Alternating exact block solves, user side first, for ``cfg.iters`` sweeps.

    With ``track_objective`` the objective after every half-sweep is kept in
    ``model.history``.
    """
    c = _c_user(train, cfg, c_per_user)
    H = ials_init(train, cfg) if init_items is None else np.array(init_items, dtype=np.float64)
    W = np.zeros((train.n_users, cfg.d))
    history = []
    if track_objective:
        history.append(ials_objective(train, W, H, cfg, c))
    for sweep in range(cfg.iters):
        W = _user_step(train, H, cfg, c)
        if track_objective:
            history.append(ials_objective(train, W, H, cfg, c))
        H = _item_step(train, W, cfg, c)
        if track_objective:
            history.append(ials_objective(train, W, H, cfg, c))
        logger.debug("ials sweep %d done", sweep + 1)
    return LinearModel("ials", user_factors=W, item_factors=H, history=history)


def remap_ials_params(alpha0: float, lam: float, c: float) -> tuple[float, float]:
    """Original-iALS (alpha0', lambda') whose block solutions are proportional to debiased iALS."""
    if alpha0 >= 1:
        raise ValueError("alpha0 must be < 1")
    denom = (1.0 - alpha0) * c
    if denom <= 0:
        raise ValueError("(1 - alpha0) * c must be > 0")
    return alpha0 / denom, lam / denom


def _scalar_fit(a: np.ndarray, b: np.ndarray) -> tuple[float, float, float]:
    """Best k with a ~ k b; returns (k, worst 1 - |cos| over rows, max relative deviation)."""
    k = float(np.sum(a * b) / np.sum(b * b))
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    live = (na > 0) & (nb > 0)
    cos = np.sum(a[live] * b[live], axis=1) / (na[live] * nb[live])
    cos_dev = float(np.max(1.0 - np.abs(cos), initial=0.0))
    rel = float(np.max(np.abs(a - k * b)) / max(np.max(np.abs(a)), 1e-300))
    return k, cos_dev, rel


def topk_lists(scores: np.ndarray, k: int, exclude: InteractionDataset | None = None) -> np.ndarray:
    """Top-k item indices per row; ties go to the smaller index, excluded items never appear."""
    s = np.array(scores, dtype=np.float64)
    if exclude is not None:
        users, items = exclude.pairs()
        s[users, items] = -np.inf
    order = np.argsort(-s, axis=1, kind="stable")
    return order[:, :k]


@dataclass
class Theorem1Report:
    alpha0_prime: float
    lam_prime: float
    user_k: float
    user_cos_dev: float
    user_rel_dev: float
    item_k: float
    item_cos_dev: float
    item_rel_dev: float
    topk_agreement: float
    naive_topk_agreement: float

    @property
    def max_cos_dev(self) -> float:
        return max(self.user_cos_dev, self.item_cos_dev)


def verify_theorem1(train: InteractionDataset, d: int, alpha0: float, lam: float, c: float,
                    seed: int = 0, sweeps: int = 10, k: int = 20) -> Theorem1Report:
    """Certify that debiased iALS block solutions are a global multiple of remapped original ones.

    Half-steps: from identical fixed factors, the debiased solve with
    (alpha0, lam, c) and the original solve with the remapped (alpha0', lam')
    are compared row by row. Full fit: after ``sweeps`` sweeps, per-user
    top-k lists of the debiased model are compared with original iALS using
    alpha0' and lam / c started from item factors scaled by sqrt(1 - alpha0);
    this composition is exact because the debiased objective equals a
    rescaled original objective. ``naive_topk_agreement`` reports the same
    comparison for (alpha0', lam') and identical initialization.
    """
    a0p, lp = remap_ials_params(alpha0, lam, c)
    deb = IalsConfig(d=d, alpha0=alpha0, lam=lam, nu=0.0, c=c, debiased=True, iters=sweeps, seed=seed)
    org = IalsConfig(d=d, alpha0=a0p, lam=lp, nu=0.0, c=1.0, debiased=False, iters=sweeps, seed=seed)
    cvec = np.full(train.n_users, c)
    ones = np.ones(train.n_users)
    H0 = ials_init(train, deb)
    Wd = _user_step(train, H0, deb, cvec)
    Wo = _user_step(train, H0, org, ones)
    uk, ucos, urel = _scalar_fit(Wd, Wo)
    W0 = np.random.default_rng(seed + 1).normal(0.0, 0.1, size=(train.n_users, d))
    Hd = _item_step(train, W0, deb, cvec)
    Ho = _item_step(train, W0, org, ones)
    ik, icos, irel = _scalar_fit(Hd, Ho)

    full_d = ials_fit(train, deb)
    composed = IalsConfig(d=d, alpha0=a0p, lam=lam / c, nu=0.0, iters=sweeps, seed=seed)
    full_o = ials_fit(train, composed, init_items=H0 * np.sqrt(1.0 - alpha0))
    naive = ials_fit(train, org)
    top_d = topk_lists(full_d.user_factors @ full_d.item_factors.T, k, train)
    top_o = topk_lists(full_o.user_factors @ full_o.item_factors.T, k, train)
    top_n = topk_lists(naive.user_factors @ naive.item_factors.T, k, train)
    live = train.user_degree > 0
    agree = float(np.mean(np.all(top_d == top_o, axis=1)[live]))
    naive_agree = float(np.mean(np.all(top_d == top_n, axis=1)[live]))
    return Theorem1Report(a0p, lp, uk, ucos, urel, ik, icos, irel, agree, naive_agree)


def _gram(X) -> np.ndarray:
    if isinstance(X, InteractionDataset):
        X = X.to_csr()
    if hasattr(X, "toarray"):
        return np.asarray((X.T @ X).toarray(), dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    return X.T @ X


def _spd_inverse(a: np.ndarray) -> np.ndarray:
    try:
        fac = la.cho_factor(a, lower=True, check_finite=False)
    except la.LinAlgError:
        raise SingularSystemError("regularized Gram matrix is not positive definite") from None
    return la.cho_solve(fac, np.eye(a.shape[0]), check_finite=False)


def ease_fit(X, cfg: EaseConfig) -> LinearModel:
    """EASE closed form; the debiased variant scales by 1/(1 - alpha) and uses lam / (1 - alpha)."""
    G = _gram(X)
    if cfg.debiased:
        reg, scale = cfg.lam / (1.0 - cfg.alpha), 1.0 / (1.0 - cfg.alpha)
    else:
        reg, scale = cfg.lam, 1.0
    P = _spd_inverse(G + reg * np.eye(G.shape[0]))
    W = -P / np.diag(P)[None, :]
    np.fill_diagonal(W, 0.0)
    W *= scale
    if not np.isfinite(W).all():
        raise FloatingPointError("EASE solve produced non-finite weights")
    return LinearModel("ease", weights=W)


def remap_ease_lambda(lam: float, alpha: float, with_cu: bool = False) -> float:
    """lambda' of the original EASE equivalent to debiased EASE(lam, alpha).

    ``with_cu`` divides additionally by c_u = 1 + alpha.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    lp = lam / (1.0 - alpha)
    return lp / (1.0 + alpha) if with_cu else lp


@dataclass
class Theorem2Report:
    lam_prime: float
    max_rel_dev: float
    topk_identical: bool
    topk_agreement: float


def verify_theorem2(X, lam: float, alpha: float, k: int = 10) -> Theorem2Report:
    """Compare (1 - alpha) * debiased EASE(lam, alpha) against EASE(lam / (1 - alpha))."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    lp = remap_ease_lambda(lam, alpha)
    Wd = ease_fit(X, EaseConfig(lam=lam, alpha=alpha, debiased=True)).weights
    Wo = ease_fit(X, EaseConfig(lam=lp)).weights
    a, b = (1.0 - alpha) * Wd, Wo
    denom = np.maximum(np.abs(a), np.abs(b))
    rel = np.divide(np.abs(a - b), denom, out=np.zeros_like(a), where=denom > 0)
    Xd = X.to_csr().toarray() if isinstance(X, InteractionDataset) else \
        (X.toarray() if hasattr(X, "toarray") else np.asarray(X, dtype=np.float64))
    exclude = InteractionDataset.from_pairs(*np.nonzero(Xd), n_users=Xd.shape[0], n_items=Xd.shape[1])
    top_d = topk_lists(Xd @ Wd, k, exclude)
    top_o = topk_lists(Xd @ Wo, k, exclude)
    same = np.all(top_d == top_o, axis=1)
    return Theorem2Report(lp, float(rel.max()), bool(same.all()), float(same.mean()))


def linear_scores(m: LinearModel, train: InteractionDataset, users) -> np.ndarray:
    """Full item score rows for ``users`` (x_u W for EASE, <w_u, h_i> for iALS)."""
    users = np.atleast_1d(np.asarray(users, dtype=np.int64))
    if m.kind == "ease":
        if m.weights.shape != (train.n_items, train.n_items):
            raise ValueError("EASE weights do not match the dataset's item count")
        return np.asarray(train.to_csr()[users] @ m.weights)
    if m.user_factors.shape[0] != train.n_users or m.item_factors.shape[0] != train.n_items:
        raise ValueError("iALS factors do not match the dataset dimensions")
    return m.user_factors[users] @ m.item_factors.T



def save_linear(m: LinearModel, directory) -> None:
    """``kind.txt`` plus ``weights.npy`` (EASE) or an MF checkpoint of the factors (iALS)."""
    from pathlib import Path

    from . import model as mf

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "kind.txt").write_text(m.kind + "\n")
    if m.kind == "ease":
        np.save(directory / "weights.npy", m.weights)
    else:
        mf.save(mf.MfModel(m.user_factors, m.item_factors, "dot"), directory)


def load_linear(directory) -> LinearModel:
    from pathlib import Path

    from . import model as mf

    directory = Path(directory)
    kind = (directory / "kind.txt").read_text().strip()
    if kind == "ease":
        return LinearModel("ease", weights=np.load(directory / "weights.npy"))
    f = mf.load(directory)
    return LinearModel(kind, user_factors=f.user_emb, item_factors=f.item_emb)


def export_ease_text(m: LinearModel, path) -> None:
    """Dense whitespace-separated text dump of the EASE weight matrix, one row per line."""
    if m.kind != "ease":
        raise ValueError("only EASE models have an item-item weight matrix")
    np.savetxt(path, m.weights, fmt="%.17g")
