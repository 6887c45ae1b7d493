import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from recloss import bounds
from recloss.bounds import (CSV_HEADER, INEQUALITIES, certify, check_bpr_chain, check_info_mine_chain,
                            equal_score_slacks, gaussian_source, model_source, slacks, tightness_sweep,
                            write_csv)
from recloss.losses import ScoreBatch
from recloss.model import init


def test_equal_scores_examples():
    r = check_info_mine_chain(ScoreBatch(0.0, np.zeros(9)))
    assert r["a"].slack == pytest.approx(math.log(10 / 9), abs=1e-14)
    assert r["c"].slack == pytest.approx(math.log(9), abs=1e-14)
    assert r.holds and r.counterexample is None


def test_single_negative_inequality_c_is_tight():
    r = check_info_mine_chain(ScoreBatch(0.7, [0.7]))
    assert abs(r["c"].slack) < 1e-15


def test_bpr_chain_examples():
    r = check_bpr_chain(ScoreBatch(0.0, [0.0]))
    assert r["e"].slack == pytest.approx(math.log(2), abs=1e-15)
    r = check_bpr_chain(ScoreBatch(0.0, [5.0]))
    assert r["e"].slack == pytest.approx(math.log1p(math.exp(5)) - 5, abs=1e-14)
    assert r["e"].slack == pytest.approx(0.006715348489118, abs=1e-12)
    assert r.holds


@pytest.mark.parametrize("n", [1, 2, 9, 64, 800])
def test_equal_score_closed_forms(n, backend):
    for score in (0.0, 0.37, -4.0):
        for got, want in equal_score_slacks(n, score, backend).values():
            assert abs(got - want) < 1e-12


def test_sides_against_oracle(rng):
    pos, negs = rng.normal(size=5), rng.normal(size=(5, 6))
    s = bounds.sides(pos, negs)
    for k in range(5):
        d = negs[k] - pos[k]
        info = float(oracles.infonce(pos[k], negs[k], 1.0))
        mine = float(oracles.mine(pos[k], negs[k]))
        bpr = float(oracles.bpr(pos[k], negs[k]))
        want = {
            "a": (info, mine), "b": (max(d.max(), 0) + math.log(7), info), "c": (mine, d.max()),
            "d": (mine, d.mean() + math.log(6)), "e": (bpr, np.maximum(d, 0).sum()),
            "f": (bpr, d.sum()), "g": (info, d.mean() + math.log(6)),
        }
        for name, (lhs, rhs) in want.items():
            assert s[name][0][k] == pytest.approx(lhs, abs=1e-12)
            assert s[name][1][k] == pytest.approx(rhs, abs=1e-12)


@given(st.floats(-30, 30), arrays(np.float64, st.integers(1, 40), elements=st.floats(-30, 30)))
def test_all_inequalities_hold(pos, negs):
    for name, sl in slacks(np.array([pos]), negs[None, :]).items():
        assert sl[0] >= bounds.TOLERANCE, name


def test_randomized_certification_small(backend):
    rows = certify(trials=6000, n_list=(1, 3, 50), seed=4, backend=backend)
    assert len(rows) == 3 * 3 * len(INEQUALITIES)
    assert sum(r.violations for r in rows) == 0
    assert all(r.counterexample is None for r in rows)


def test_sweep_reproducible():
    a = tightness_sweep(gaussian_source(1.0), [4, 16], 500, seed=11)
    b = tightness_sweep(gaussian_source(1.0), [4, 16], 500, seed=11)
    assert [r.as_tuple() for r in a] == [r.as_tuple() for r in b]
    c = tightness_sweep(gaussian_source(1.0), [4, 16], 500, seed=12)
    assert [r.as_tuple() for r in a] != [r.as_tuple() for r in c]


def test_slack_a_decreases_along_path():
    # slack (a) = log(1 + 1/sum e^{d_j}) shrinks as the negatives climb
    negs = np.zeros(5)
    prev = math.inf
    for t in np.linspace(-3, 3, 25):
        s = float(slacks(np.array([0.0]), (negs + t)[None, :])["a"][0])
        assert s < prev
        prev = s


def test_violation_reports_counterexample(monkeypatch):
    monkeypatch.setattr(bounds, "TOLERANCE", 10.0)
    rows = tightness_sweep(gaussian_source(1.0), [2], 10, seed=0)
    bad = [r for r in rows if r.violations]
    assert bad and bad[0].counterexample is not None
    assert len(bad[0].counterexample["negs"]) == 2
    r = check_info_mine_chain(ScoreBatch(0.0, [1.0, 2.0]))
    assert not r.holds and r.counterexample["negs"] == [1.0, 2.0]


def test_model_scores_source(small_ds):
    m = init(small_ds.n_users, small_ds.n_items, 8, seed=0)
    rows = tightness_sweep(model_source(m, small_ds), [5], 200, seed=0, sigma_label="model")
    assert all(r.violations == 0 for r in rows)


def test_csv_output(tmp_path):
    rows = tightness_sweep(gaussian_source(0.5), [3], 50, sigma_label=0.5)
    write_csv(rows, tmp_path / "b.csv")
    with (tmp_path / "b.csv").open() as fh:
        got = list(csv.reader(fh))
    assert tuple(got[0]) == CSV_HEADER
    assert len(got) == 1 + len(INEQUALITIES)
    assert [r[0] for r in got[1:]] == list(INEQUALITIES)


def test_trials_validation():
    with pytest.raises(ValueError):
        tightness_sweep(gaussian_source(1.0), [2], 0)
