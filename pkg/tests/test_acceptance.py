"""Acceptance suite: one pass/fail test per criterion, at the stated tolerances and time budgets."""

import time

import numpy as np
import pytest

import oracles
from recloss import model as mf
from recloss.bounds import certify, equal_score_slacks
from recloss.cli import random_ease_instance
from recloss.data import SplitSpec, split, synthetic
from recloss.evaluation import evaluate as eval_report
from recloss.evaluation import popularity_baseline
from recloss.kernels import available_backends
from recloss.linear import EaseConfig, ease_fit, verify_theorem1, verify_theorem2
from recloss.losses import FAMILIES, LossSpec, ScoreBatch, evaluate_batch
from recloss.losses import evaluate as loss_eval
from recloss.sampling import SamplerConfig, TauPolicy
from recloss.trainer import TrainConfig, gradient_suite, train


@pytest.mark.acceptance
def test_1_gradient_certification():
    start = time.perf_counter()
    rep = gradient_suite(instances=100, seed=0)
    elapsed = time.perf_counter() - start
    families = {k.split("/")[0] for k in rep.worst if k != "dead-row"}
    assert families == set(FAMILIES)
    assert rep.worst_overall < 1e-4, rep.worst
    assert elapsed < 60, elapsed


def _oracle_specs(family):
    yield LossSpec(family)
    tuned = {
        "infonce": {"temperature": 0.2}, "debiased_infonce": {"temperature": 0.3, "neg_weight": 5.0},
        "mine_plus": {"temperature": 0.4, "neg_weight": 1.2}, "bpr": {"bound_only": True},
        "mse": {"ccl_weight": 3.0}, "ccl": {"margin": 0.9, "ccl_weight": 2.0},
        "debiased_mse": {"neg_weight": 0.5}, "debiased_ccl": {"margin": 0.9, "neg_weight": 0.4},
    }
    if family in tuned:
        yield LossSpec(family, **tuned[family])


def _random_rows(spec, rng, B, n, m):
    if spec.score_mode == "cosine":
        pos, negs, extra = rng.uniform(-1, 1, B), rng.uniform(-1, 1, (B, n)), rng.uniform(-1, 1, (B, m))
    else:
        scale = rng.choice([0.1, 1.0, 5.0], size=(B, 1))
        pos = rng.normal(size=B) * scale[:, 0]
        negs, extra = rng.normal(size=(B, n)) * scale, rng.normal(size=(B, m)) * scale
    tau = rng.uniform(0.01, 0.5, B) if spec.debiased else None
    q = rng.uniform(0.05, 3.0, (B, n)) if spec.family == "sampled_softmax" else None
    return pos, negs, extra if spec.debiased else None, tau, q


@pytest.mark.acceptance
def test_2_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    B, n, m = 1000, 6, 3
    worst = {}
    for fam in FAMILIES:
        for spec in _oracle_specs(fam):
            pos, negs, extra, tau, q = _random_rows(spec, rng, B, n, m)
            if fam == "softmax_full":
                allsc = np.concatenate([pos[:, None], negs], axis=1)
                got = np.array([loss_eval(spec, ScoreBatch(pos[r], allsc[r])).value for r in range(B)])
                want = np.array([float(oracles.softmax_full(pos[r], allsc[r])) for r in range(B)])
                worst[(fam, 0)] = float(np.abs(got - want).max())
                continue
            want = np.array([float(oracles.loss(spec, pos[r], negs[r], None if extra is None else extra[r],
                                                None if tau is None else tau[r],
                                                None if q is None else q[r])) for r in range(B)])
            for be in available_backends():
                got = evaluate_batch(spec, pos, negs, extra, tau, q, backend=be)[0]
                worst[(fam, repr(spec.to_dict()), be)] = float(np.abs(got - want).max())
    elapsed = time.perf_counter() - start
    assert max(worst.values()) < 1e-12, {k: v for k, v in worst.items() if v >= 1e-12}
    assert elapsed < 60, elapsed


@pytest.mark.acceptance
def test_3_bound_chain_certification():
    start = time.perf_counter()
    rows = certify(trials=100_000, n_list=(1, 2, 8, 64, 800), seed=0)
    elapsed = time.perf_counter() - start
    assert sum(r.violations for r in rows) == 0, [r.counterexample for r in rows if r.violations]
    assert {r.N for r in rows} == {1, 2, 8, 64, 800}
    for n in (1, 2, 8, 64, 800):
        for got, want in equal_score_slacks(n).values():
            # closed forms hold to the last few ulps of the floating-point evaluation
            assert abs(got - want) <= 1e-14
    assert elapsed < 120, elapsed


@pytest.mark.acceptance
def test_4_theorem1_debiased_ials():
    start = time.perf_counter()
    ds = synthetic(n_users=200, n_items=150, interactions_per_user=15, seed=4)
    assert (ds.n_users, ds.n_items) == (200, 150)
    rep = verify_theorem1(ds, d=16, alpha0=0.1, lam=1e-2, c=1.5, seed=0, sweeps=10, k=20)
    elapsed = time.perf_counter() - start
    assert rep.max_cos_dev < 1e-10
    assert rep.user_k == pytest.approx(rep.item_k, rel=1e-8)
    assert rep.topk_agreement == 1.0
    assert elapsed < 60, elapsed


@pytest.mark.acceptance
def test_5_theorem2_debiased_ease():
    start = time.perf_counter()
    sizes = []
    for i in range(20):
        X, lam, alpha = random_ease_instance(np.random.default_rng([5, i]), max_items=200)
        sizes.append(X.shape[1])
        rep = verify_theorem2(X, lam, alpha, k=10)
        assert rep.max_rel_dev < 1e-10, (i, rep)
        assert rep.topk_identical, (i, rep)
    elapsed = time.perf_counter() - start
    assert max(sizes) <= 200
    assert elapsed < 60, elapsed


@pytest.mark.acceptance
def test_6_reduction_identities():
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    for _ in range(300):
        n = int(rng.integers(1, 50))
        t = float(rng.uniform(0.05, 2.0))
        pos, negs, extra = rng.uniform(-1, 1), rng.uniform(-1, 1, n), rng.uniform(-1, 1, 3)
        info = loss_eval(LossSpec("infonce", temperature=t), ScoreBatch(pos, negs)).value
        deb = loss_eval(LossSpec("debiased_infonce", temperature=t, neg_weight=float(n)),
                        ScoreBatch(pos, negs, extra, tau_plus=1e-15)).value
        assert abs(deb - info) < 1e-10
        mp = loss_eval(LossSpec("mine_plus", temperature=t, neg_weight=1.0), ScoreBatch(pos, negs)).value
        mi = loss_eval(LossSpec("mine"), ScoreBatch(pos / t, negs / t)).value
        assert abs(mp - mi) < 1e-10
    for i in range(5):
        X, lam, _ = random_ease_instance(np.random.default_rng([6, i]), max_items=60)
        a = ease_fit(X, EaseConfig(lam=lam)).weights
        b = ease_fit(X, EaseConfig(lam=lam, alpha=0.0, debiased=True)).weights
        assert np.abs(a - b).max() < 1e-10
    assert time.perf_counter() - start < 10


# desk-scale settings: d=64, 64 sampled negatives, Adam with plateau decay
DESK = dict(lr=3e-3, lr_floor=1e-4, max_epochs=40, eval_every=2, plateau_patience=2, l2_reg=1e-6, d=64)
SANITY_RUNS = {
    "bpr": dict(loss=LossSpec("bpr"), lr=1e-2, d=32),
    "infonce": dict(loss=LossSpec("infonce", temperature=0.2)),
    "mine_plus": dict(loss=LossSpec("mine_plus", temperature=0.2, neg_weight=1.1)),
    "ccl": dict(loss=LossSpec("ccl", margin=0.8, ccl_weight=5.0)),
    "debiased_ccl": dict(loss=LossSpec("debiased_ccl", margin=0.4, neg_weight=0.5),
                         sampler=SamplerConfig(n_negatives=64, m_extra_positives=5),
                         tau=TauPolicy("proportional", alpha=0.0)),
    "mse": dict(loss=LossSpec("mse", ccl_weight=2.0)),
}


@pytest.mark.acceptance
@pytest.mark.slow
def test_7_end_to_end_sanity():
    start = time.perf_counter()
    ds = synthetic(seed=7)
    assert 800 <= ds.n_users <= 1200 and 1400 <= ds.n_items <= 2000
    tr, te = split(ds, SplitSpec(0.2, 0))
    pop = eval_report(popularity_baseline(tr), tr, te).recall_at_k
    ratios = {}
    for name, kw in SANITY_RUNS.items():
        cfg = dict(DESK, sampler=SamplerConfig(n_negatives=64), seed=0)
        cfg.update(kw)
        m, _ = train(TrainConfig(**cfg), tr)
        ratios[name] = eval_report(lambda u: mf.score_users(m, u), tr, te).recall_at_k / pop
    elapsed = time.perf_counter() - start
    print("recall@20 relative to popularity:", {k: round(v, 3) for k, v in ratios.items()})
    assert all(r >= 1.2 for r in ratios.values()), ratios
    assert elapsed < 30 * 60, elapsed
