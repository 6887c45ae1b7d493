"""Recommendation loss kernels with analytic score derivatives.

Every family maps one positive score, N negative scores and (for the
debiased families) M extra-positive scores to a scalar loss plus its partial
derivatives. ``evaluate_batch`` runs a family row-wise over arrays using the
selected kernel backend; the per-family functions below wrap it for a
single ``ScoreBatch``.

Temperature-scaled families (infonce, debiased_infonce, mine_plus) receive
raw scores and divide by ``t`` internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .kernels import FAMILY_CODES, get_backend

FAMILIES = (
    "softmax_full", "sampled_softmax", "infonce", "debiased_infonce", "mine", "mine_plus",
    "bpr", "mse", "debiased_mse", "ccl", "debiased_ccl",
)
TEMPERATURE_FAMILIES = frozenset({"infonce", "debiased_infonce", "mine_plus"})
MARGIN_FAMILIES = frozenset({"ccl", "debiased_ccl"})
NEG_WEIGHT_FAMILIES = frozenset({"debiased_infonce", "mine_plus", "debiased_mse", "debiased_ccl"})
WEIGHT_FAMILIES = frozenset({"mse", "ccl"})
DEBIASED_FAMILIES = frozenset({"debiased_infonce", "debiased_mse", "debiased_ccl"})

DEFAULT_SCORE_MODE = {
    "softmax_full": "dot", "sampled_softmax": "dot", "infonce": "cosine",
    "debiased_infonce": "cosine", "mine": "dot", "mine_plus": "cosine", "bpr": "dot",
    "mse": "dot", "debiased_mse": "dot", "ccl": "cosine", "debiased_ccl": "cosine",
}
_DEFAULTS = {"temperature": 0.5, "margin": 0.4, "ccl_weight": 1.0}


class LossConfigError(ValueError):
    """An invalid loss configuration."""


@dataclass(frozen=True)
class LossSpec:
    """One loss family plus the hyperparameters it uses.

    ``neg_weight`` is the lambda of mine_plus and of the debiased families
    (None means N for debiased_infonce and 1 elsewhere). ``ccl_weight`` is the
    negative weight w of the biased pointwise losses (mse and ccl).
    ``clamp`` guards the debiased pointwise bracket at 0; ``bound_only``
    turns bpr into its mean score-difference lower bound.
    """

    family: str
    temperature: float | None = None
    neg_weight: float | None = None
    margin: float | None = None
    ccl_weight: float | None = None
    score_mode: str | None = None
    clamp: bool = True
    bound_only: bool = False

    def __post_init__(self):
        fam = self.family
        if fam not in FAMILIES:
            raise LossConfigError(f"unknown loss family {fam!r}; expected one of {FAMILIES}")
        allowed = {
            "temperature": TEMPERATURE_FAMILIES,
            "neg_weight": NEG_WEIGHT_FAMILIES,
            "margin": MARGIN_FAMILIES,
            "ccl_weight": WEIGHT_FAMILIES,
        }
        for name, fams in allowed.items():
            value = getattr(self, name)
            if value is not None and fam not in fams:
                raise LossConfigError(f"{name} is not a parameter of the {fam} loss")
            if value is None and fam in fams and name in _DEFAULTS:
                object.__setattr__(self, name, _DEFAULTS[name])
        if self.bound_only and fam != "bpr":
            raise LossConfigError("bound_only applies to the bpr family only")
        if self.temperature is not None and not self.temperature > 0:
            raise LossConfigError("temperature must be > 0")
        if self.neg_weight is not None and self.neg_weight < 0:
            raise LossConfigError("neg_weight must be >= 0")
        if self.ccl_weight is not None and self.ccl_weight < 0:
            raise LossConfigError("ccl_weight must be >= 0")
        if self.margin is not None and not 0.0 <= self.margin < 1.0:
            raise LossConfigError("margin must lie in [0, 1)")
        mode = self.score_mode or DEFAULT_SCORE_MODE[fam]
        if mode not in ("dot", "cosine"):
            raise LossConfigError(f"unknown score_mode {mode!r}")
        if fam in MARGIN_FAMILIES and mode != "cosine":
            raise LossConfigError(f"{fam} requires cosine scores")
        object.__setattr__(self, "score_mode", mode)

    @property
    def t(self) -> float:
        return self.temperature if self.temperature is not None else 1.0

    @property
    def debiased(self) -> bool:
        return self.family in DEBIASED_FAMILIES

    def lam(self, n_negatives: int) -> float:
        if self.neg_weight is not None:
            return self.neg_weight
        return float(n_negatives) if self.family == "debiased_infonce" else 1.0

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class ScoreBatch:
    pos: float
    negs: np.ndarray
    extra_pos: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tau_plus: float | None = None
    proposal_probs: np.ndarray | None = None

    def __post_init__(self):
        self.pos = float(self.pos)
        self.negs = np.asarray(self.negs, dtype=np.float64).ravel()
        self.extra_pos = np.asarray(self.extra_pos, dtype=np.float64).ravel()
        if self.proposal_probs is not None:
            self.proposal_probs = np.asarray(self.proposal_probs, dtype=np.float64).ravel()
            if self.proposal_probs.shape != self.negs.shape:
                raise ValueError("proposal_probs must have one entry per negative")
            if not (self.proposal_probs > 0).all():
                raise ValueError("proposal_probs must be strictly positive")
        if not (math.isfinite(self.pos) and np.isfinite(self.negs).all()
                and np.isfinite(self.extra_pos).all()):
            raise ValueError("scores must be finite")

    @property
    def n(self) -> int:
        return self.negs.size

    @property
    def m(self) -> int:
        return self.extra_pos.size

    def flat(self) -> np.ndarray:
        return np.concatenate([[self.pos], self.negs, self.extra_pos])

    def with_flat(self, x: np.ndarray) -> ScoreBatch:
        n = self.n
        return ScoreBatch(x[0], x[1:1 + n], x[1 + n:], self.tau_plus, self.proposal_probs)


@dataclass
class LossOutput:
    value: float
    d_pos: float | np.ndarray
    d_negs: np.ndarray
    d_extra_pos: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([np.atleast_1d(self.d_pos), self.d_negs, self.d_extra_pos])


def _check_tau(tau) -> np.ndarray:
    tau = np.asarray(tau, dtype=np.float64)
    if not ((tau > 0) & (tau < 1)).all():
        raise ValueError("tau_plus must lie in (0, 1)")
    return tau


def evaluate_batch(spec: LossSpec, pos, negs, extra=None, tau=None, proposal_probs=None,
                   backend: str | None = None):
    """Row-wise loss values and derivatives for arrays of scores.

    Args:
        pos: (B,) positive scores.
        negs: (B, N) negative scores.
        extra: (B, M) extra-positive scores (debiased families).
        tau: (B,) positive-class priors (debiased families).
        proposal_probs: (B, N) proposal masses (sampled_softmax).

    Returns:
        (values, d_pos, d_negs, d_extra) with shapes (B,), (B,), (B, N), (B, M).
    """
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    negs = np.ascontiguousarray(negs, dtype=np.float64)
    B, N = negs.shape
    if N < 1:
        raise ValueError("at least one negative score is required")
    fam = spec.family
    if fam == "softmax_full":
        val, dpos, dnegs = softmax_full_rows(pos, negs)
        return val, dpos, dnegs, np.zeros((B, 0))
    if extra is None:
        extra = np.zeros((B, 0))
    extra = np.ascontiguousarray(extra, dtype=np.float64)
    if tau is None:
        tau_arr = np.zeros(B)
    else:
        tau_arr = np.ascontiguousarray(np.broadcast_to(tau, (B,)), dtype=np.float64)
    if spec.debiased:
        if extra.shape[1] < 1:
            raise ValueError(f"{fam} needs at least one extra positive score")
        if tau is None:
            raise ValueError(f"{fam} needs tau_plus")
        _check_tau(tau_arr)
    use_q = fam == "sampled_softmax"
    if use_q:
        if proposal_probs is None:
            raise ValueError("sampled_softmax needs proposal_probs")
        q = np.asarray(proposal_probs, dtype=np.float64)
        if not (q > 0).all():
            raise ValueError("proposal_probs must be strictly positive")
        logq = np.ascontiguousarray(np.broadcast_to(np.log(q), (B, N)))
    else:
        logq = np.zeros((1, 1))
    kern = get_backend(backend)
    return kern.loss_batch(
        FAMILY_CODES[fam], pos, negs, extra, tau_arr, logq, use_q, spec.t, spec.lam(N),
        spec.margin if spec.margin is not None else 0.0,
        spec.ccl_weight if spec.ccl_weight is not None else 1.0,
        spec.clamp, spec.bound_only,
    )


def softmax_full_rows(pos, all_scores):
    """Rows of ``LSE(all) - pos`` with derivatives w.r.t. pos and all scores separately."""
    m = all_scores.max(axis=1, keepdims=True)
    e = np.exp(all_scores - m)
    z = e.sum(axis=1, keepdims=True)
    val = m[:, 0] + np.log(z[:, 0]) - pos
    return val, -np.ones_like(pos), e / z


def evaluate(spec: LossSpec, b: ScoreBatch, backend: str | None = None) -> LossOutput:
    """Loss value and derivatives for a single ScoreBatch.

    For ``softmax_full`` the batch's ``negs`` must hold the scores of every item.
    """
    extra = b.extra_pos[None, :] if spec.debiased else None
    q = b.proposal_probs[None, :] if b.proposal_probs is not None else None
    if spec.debiased and b.tau_plus is None:
        raise ValueError(f"{spec.family} needs tau_plus")
    tau = None if b.tau_plus is None else np.array([b.tau_plus])
    val, dpos, dnegs, dextra = evaluate_batch(spec, np.array([b.pos]), b.negs[None, :],
                                              extra, tau, q, backend)
    if not spec.debiased:
        dextra = np.zeros((1, b.m))
    return LossOutput(float(val[0]), float(dpos[0]), dnegs[0], dextra[0])


def _family(spec: LossSpec, *names: str) -> None:
    if spec.family not in names:
        raise LossConfigError(f"expected family in {names}, got {spec.family!r}")


def loss_softmax_full(pos_scores: Sequence[float], all_scores: Sequence[float]) -> LossOutput:
    """-log(sum_{i in pos} exp(s_i) / sum_{j in all} exp(s_j)).

    ``pos_scores`` and ``all_scores`` are treated as independent inputs; a
    caller whose positives are part of ``all_scores`` adds both derivatives.
    """
    pos_scores = np.asarray(pos_scores, dtype=np.float64).ravel()
    all_scores = np.asarray(all_scores, dtype=np.float64).ravel()
    if pos_scores.size == 0:
        raise ValueError("softmax loss needs at least one positive")
    mp, ma = pos_scores.max(), all_scores.max()
    ep, ea = np.exp(pos_scores - mp), np.exp(all_scores - ma)
    value = (ma + math.log(ea.sum())) - (mp + math.log(ep.sum()))
    return LossOutput(value, -ep / ep.sum(), ea / ea.sum(), np.zeros(0))


def loss_sampled_softmax(spec: LossSpec, b: ScoreBatch) -> LossOutput:
    """-log(exp(p) / (exp(p) + sum_j exp(s_j) / q_j))."""
    _family(spec, "sampled_softmax")
    if b.proposal_probs is None:
        raise ValueError("sampled_softmax needs proposal_probs")
    return evaluate(spec, b)


def loss_infonce(spec: LossSpec, b: ScoreBatch) -> LossOutput:
    _family(spec, "infonce")
    return evaluate(spec, b)


def loss_debiased_infonce(spec: LossSpec, b: ScoreBatch) -> LossOutput:
    """InfoNCE whose negative term is the positive-corrected estimate, floored at exp(-1/t)."""
    _family(spec, "debiased_infonce")
    return evaluate(spec, b)


def loss_mine(spec: LossSpec, b: ScoreBatch) -> LossOutput:
    _family(spec, "mine")
    return evaluate(spec, b)


def loss_mine_plus(spec: LossSpec, b: ScoreBatch) -> LossOutput:
    _family(spec, "mine_plus")
    return evaluate(spec, b)


def loss_bpr(spec: LossSpec, b: ScoreBatch) -> LossOutput:
    _family(spec, "bpr")
    return evaluate(spec, b)


def loss_pointwise(spec: LossSpec, b: ScoreBatch, weight: float | None = None) -> LossOutput:
    """Biased MSE or CCL; ``weight`` overrides ``spec.ccl_weight``."""
    _family(spec, "mse", "ccl")
    if weight is not None:
        spec = LossSpec(spec.family, margin=spec.margin, ccl_weight=weight,
                        score_mode=spec.score_mode)
    return evaluate(spec, b)


def loss_debiased_pointwise(spec: LossSpec, b: ScoreBatch) -> LossOutput:
    _family(spec, "debiased_mse", "debiased_ccl")
    return evaluate(spec, b)


def regime(spec: LossSpec, b: ScoreBatch) -> tuple:
    """Discrete state of every kink in the loss (ReLU masks, clamp activity)."""
    fam = spec.family
    state: list = []
    if fam in MARGIN_FAMILIES:
        state += list(b.negs > spec.margin)
        if fam == "debiased_ccl":
            state += list(b.extra_pos > spec.margin)
    if fam in ("debiased_mse", "debiased_ccl") and spec.clamp:
        if fam == "debiased_mse":
            ln, le = b.negs ** 2, b.extra_pos ** 2
        else:
            ln = np.maximum(b.negs - spec.margin, 0.0)
            le = np.maximum(b.extra_pos - spec.margin, 0.0)
        state.append(bool(ln.mean() - b.tau_plus * le.mean() > 0))
    if fam == "debiased_infonce":
        t = spec.t
        a, c = b.negs / t, b.extra_pos / t
        m = max(a.max(), c.max())
        br = (np.exp(a - m).mean() - b.tau_plus * np.exp(c - m).mean()) / (1 - b.tau_plus)
        state.append(bool(br > 0 and m + math.log(br) > -1.0 / t))
    return tuple(state)


def relative_error(analytic, numeric) -> np.ndarray:
    """|a - n| / max(1, |a|, |n|): relative for large entries, absolute below 1."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))


def grad_check(spec: LossSpec, b: ScoreBatch, h: float = 1e-5, backend: str | None = None) -> float:
    """Worst relative error between analytic derivatives and central differences.

    Inputs within ``10 h`` of a kink (a ReLU hinge or clamp switch) are skipped.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("step h must lie in [1e-7, 1e-3]")
    out = evaluate(spec, b, backend)
    if not math.isfinite(out.value):
        raise FloatingPointError("loss value is not finite")
    analytic = out.flat()
    x0 = b.flat()
    base = regime(spec, b)
    worst = 0.0
    for k in range(x0.size):
        probe = []
        for step in (10 * h, -10 * h):
            x = x0.copy()
            x[k] += step
            probe.append(regime(spec, b.with_flat(x)))
        if any(r != base for r in probe):
            continue
        xp, xm = x0.copy(), x0.copy()
        xp[k] += h
        xm[k] -= h
        fp = evaluate(spec, b.with_flat(xp), backend).value
        fm = evaluate(spec, b.with_flat(xm), backend).value
        numeric = (fp - fm) / (2 * h)
        worst = max(worst, float(relative_error(analytic[k], numeric)))
    return worst
