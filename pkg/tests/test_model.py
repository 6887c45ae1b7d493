import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from recloss import model as mf


def _pair(w, h, mode):
    return mf.MfModel(np.array([w], float), np.array([h], float), mode)


@pytest.mark.parametrize("w,h,dot,cos", [
    ((1, 0), (1, 0), 1.0, 1.0),
    ((1, 0), (0, 1), 0.0, 0.0),
    ((3, 4), (3, 4), 25.0, 1.0),
    ((0, 0), (3, 4), 0.0, 0.0),
])
def test_score_examples(w, h, dot, cos):
    assert mf.score(_pair(w, h, "dot"), 0, 0) == pytest.approx(dot, abs=1e-15)
    assert mf.score(_pair(w, h, "cosine"), 0, 0) == pytest.approx(cos, abs=1e-15)


def test_init_zero_sigma_and_determinism():
    m = mf.init(4, 5, 3, "normal", sigma=0.0)
    assert not m.user_emb.any() and not m.item_emb.any()
    a, b = mf.init(10, 20, 8, seed=5), mf.init(10, 20, 8, seed=5)
    assert np.array_equal(a.user_emb, b.user_emb) and np.array_equal(a.item_emb, b.item_emb)


def test_init_xavier_variance():
    m = mf.init(1000, 600, 64, "xavier", seed=0)
    var = np.concatenate([m.user_emb.ravel(), m.item_emb.ravel()]).var()
    assert abs(var / (2 / 128) - 1) < 0.2


def test_init_errors():
    with pytest.raises(ValueError):
        mf.init(2, 2, 0)
    with pytest.raises(ValueError):
        mf.init(2, 2, 2, scheme="kaiming")


@pytest.mark.parametrize("mode", ["dot", "cosine"])
def test_score_all_items_matches_loop(mode):
    m = mf.init(1000, 2000, 16, seed=1, score_mode=mode)
    rng = np.random.default_rng(0)
    for u in rng.integers(0, 1000, 3):
        row = mf.score_all_items(m, int(u))
        naive = np.array([mf.score(m, int(u), i) for i in range(2000)])
        np.testing.assert_allclose(row, naive, atol=1e-10, rtol=0)
    for u, i in zip(rng.integers(0, 1000, 100), rng.integers(0, 2000, 100)):
        assert mf.score_users(m, [u])[0, i] == pytest.approx(mf.score(m, int(u), int(i)), abs=1e-12)


def test_zero_user_dot_scores_zero():
    m = mf.init(3, 7, 4, seed=0)
    m.user_emb[1] = 0
    assert not mf.score_all_items(m, 1).any()


mats = arrays(np.float64, (5, 3), elements=st.floats(-10, 10, allow_subnormal=False))


@given(mats, mats)
def test_cosine_bounded(w, h):
    s = mf.score_users(mf.MfModel(w, h, "cosine"), np.arange(5))
    assert (np.abs(s) <= 1 + 1e-12).all()


@given(mats, mats, arrays(np.float64, 5, elements=st.floats(0.1, 10)))
def test_cosine_invariant_to_row_rescaling(w, h, scale):
    a = mf.score_users(mf.MfModel(w, h, "cosine"), np.arange(5))
    b = mf.score_users(mf.MfModel(w * scale[:, None], h, "cosine"), np.arange(5))
    live = (np.linalg.norm(w, axis=1) > 1e-6)[:, None] & (np.linalg.norm(h, axis=1) > 1e-6)[None, :]
    np.testing.assert_allclose(a[live], b[live], atol=1e-12)


@pytest.mark.parametrize("mode", ["dot", "cosine"])
def test_rank_invariance_under_item_scaling(mode):
    m = mf.init(5, 40, 6, seed=2, score_mode=mode)
    scaled = mf.MfModel(m.user_emb, m.item_emb * 3.7, mode)
    for u in range(5):
        assert np.array_equal(np.argsort(mf.score_all_items(m, u), kind="stable"),
                              np.argsort(mf.score_all_items(scaled, u), kind="stable"))


def test_normalize_rows_backward_matches_finite_differences():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 5))
    g = rng.normal(size=(4, 5))
    xn, norms = mf.normalize_rows(x)
    analytic = mf.normalize_rows_backward(xn, norms, g)
    h = 1e-6
    num = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        num[idx] = (np.sum(g * mf.normalize_rows(xp)[0]) - np.sum(g * mf.normalize_rows(xm)[0])) / (2 * h)
    np.testing.assert_allclose(analytic, num, atol=1e-8)


def test_dead_rows_have_zero_gradient():
    x = np.array([[0.0, 0.0], [1.0, 2.0]])
    xn, norms = mf.normalize_rows(x)
    assert not xn[0].any()
    assert not mf.normalize_rows_backward(xn, norms, np.ones_like(x))[0].any()


def test_checkpoint_round_trip(tmp_path):
    m = mf.init(6, 9, 4, seed=3, score_mode="cosine")
    mf.save(m, tmp_path / "ck")
    assert (tmp_path / "ck" / "header.txt").read_text() == "6 9 4 cosine\n"
    back = mf.load(tmp_path / "ck")
    assert back.score_mode == "cosine"
    assert np.array_equal(back.user_emb, m.user_emb) and np.array_equal(back.item_emb, m.item_emb)


def test_checkpoint_header_mismatch(tmp_path):
    m = mf.init(6, 9, 4)
    mf.save(m, tmp_path)
    (tmp_path / "header.txt").write_text("6 9 5 dot\n")
    with pytest.raises(ValueError):
        mf.load(tmp_path)


def test_model_validation():
    with pytest.raises(ValueError):
        mf.MfModel(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(ValueError):
        mf.MfModel(np.zeros((2, 3)), np.zeros((2, 3)), "euclid")
