import csv
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from recloss import bounds, config
from recloss.cli import main
from recloss.config import SCHEMA, ConfigError, ExperimentConfig, emit, parse
from recloss.data import InteractionDataset, SplitSpec, split, synthetic, write_pairs

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


# ---------------------------------------------------------------- config

value_for = {
    int: st.integers(-10 ** 6, 10 ** 6),
    float: st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False),
    str: st.text("abcdefghijklmnopqrstuvwxyz_/.-0123456789", min_size=1, max_size=12),
    config._bool: st.booleans(),
    config._opt_float: st.none() | st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False),
    config._opt_str: st.none() | st.text("abcdefghij_/.", min_size=1, max_size=10),
}


@st.composite
def configs(draw):
    keys = draw(st.lists(st.sampled_from(sorted(SCHEMA)), unique=True, max_size=12))
    cfg = ExperimentConfig()
    for k in keys:
        v = draw(value_for[SCHEMA[k][0]])
        if SCHEMA[k][0] is str and v.lower() in ("none",):
            continue
        cfg.set(k, v)
    return cfg


@given(configs())
def test_emit_parse_round_trip(cfg):
    assert parse(emit(cfg)) == cfg
    assert emit(parse(emit(cfg))) == emit(cfg)


def test_defaults():
    cfg = ExperimentConfig()
    tc = cfg.train_config()
    assert (tc.batch_size, tc.lr, tc.lr_decay, tc.lr_floor) == (512, 1e-4, 0.5, 1e-6)
    assert tc.sampler.n_negatives == 800


@pytest.mark.parametrize("text", ["loss.colour = red\n", "train.lr = fast\n", "train.lr 0.1\n",
                                  "train.lr = 0.1\ntrain.lr = 0.2\n"])
def test_bad_config_text(text):
    with pytest.raises(ConfigError):
        parse(text)


def test_comments_and_blank_lines():
    cfg = parse("# header\n\ntrain.lr = 0.5  # trailing\n")
    assert cfg["train.lr"] == 0.5 and list(cfg.values) == ["train.lr"]


@pytest.mark.parametrize("name,lam,t", [("yelp2018", 1.1, 0.5), ("gowalla", 1.2, 0.4),
                                        ("amazon_books", 1.1, 0.4)])
def test_mine_plus_shipped_configs(name, lam, t):
    cfg = config.load(CONFIGS / f"mine_plus_{name}.conf")
    spec = cfg.loss_spec()
    assert (spec.family, spec.neg_weight, spec.temperature) == ("mine_plus", lam, t)
    tc = cfg.train_config()
    assert tc.l2_reg == 1e-8 and tc.sampler.n_negatives == 800


@pytest.mark.parametrize("name,lam,eps,m", [("yelp2018", 0.4, 0.9, 10), ("gowalla", 0.7, 0.9, 20),
                                            ("amazon_books", 0.6, 0.4, 50)])
def test_debiased_ccl_shipped_configs(name, lam, eps, m):
    cfg = config.load(CONFIGS / f"debiased_ccl_{name}.conf")
    spec = cfg.loss_spec()
    assert (spec.family, spec.neg_weight, spec.margin) == ("debiased_ccl", lam, eps)
    tc = cfg.train_config()
    assert tc.l2_reg == 1e-9 and tc.sampler.n_negatives == 800 and tc.sampler.m_extra_positives == m


def test_all_shipped_configs_parse():
    for p in CONFIGS.glob("*.conf"):
        config.load(p)


# ---------------------------------------------------------------- CLI

@pytest.fixture
def toy(tmp_path):
    ds = synthetic(n_users=40, n_items=10, interactions_per_user=4, seed=2)
    tr, te = split(ds, SplitSpec(0.25, 0))
    write_pairs(tr, tmp_path / "train.txt")
    write_pairs(te, tmp_path / "test.txt")
    return tmp_path


FAST = ["--train.max_epochs", "2", "--train.d", "4", "--sampler.n_negatives", "3", "--train.eval_every", "1",
        "--train.lr", "0.01", "--train.lr_floor", "0.001"]


def _data_args(toy):
    return ["--data.train", str(toy / "train.txt"), "--data.test", str(toy / "test.txt")]


def test_prepare_is_deterministic(tmp_path):
    raw = tmp_path / "raw.txt"
    rng = np.random.default_rng(0)
    raw.write_text("".join(f"{u * 3} {i * 7}\n" for u, i in zip(rng.integers(0, 30, 300),
                                                                  rng.integers(0, 50, 300))))
    for out in ("a", "b"):
        assert main(["prepare", "--input", str(raw), "--out", str(tmp_path / out), "--seed", "4"]) == 0
    for f in ("train.txt", "test.txt", "user_ids.txt", "item_ids.txt", "stats.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert (tmp_path / "a" / "stats.txt").read_text().startswith("users 30 items 50")


def test_prepare_missing_file(tmp_path, capsys):
    assert main(["prepare", "--input", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "o")]) == 2
    assert "nope.txt" in capsys.readouterr().err


def test_prepare_reports_known_shape(tmp_path):
    # one interaction per user is enough to reproduce the published user/item counts
    n_users, n_items = 29_858, 40_981
    ds = InteractionDataset.from_pairs(np.arange(n_users), np.arange(n_users) % n_items, n_users, n_items)
    lines = [f"{u} {i}" for u, i in zip(*ds.pairs())]
    lines += [f"0 {i}" for i in range(n_users, n_items)]
    (tmp_path / "g.txt").write_text("\n".join(lines) + "\n")
    assert main(["prepare", "--input", str(tmp_path / "g.txt"), "--out", str(tmp_path / "o")]) == 0
    stats = (tmp_path / "o" / "stats.txt").read_text()
    assert stats.startswith("users 29858 items 40981") and "(shape of Gowalla)" in stats


def test_prepare_synthetic(tmp_path):
    assert main(["prepare", "--synthetic", "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "train.txt").stat().st_size > 0


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["train", "--no-such-flag"]) == 2
    assert main(["verify", "--suite", "everything"]) == 2


def test_train_then_eval(toy):
    out = toy / "run"
    assert main(["train", *_data_args(toy), *FAST, "--out", str(out)]) == 0
    for f in ("config.txt", "history.csv", "report.csv", "model/header.txt"):
        assert (out / f).is_file()
    rows = list(csv.reader((out / "history.csv").open()))
    assert rows[0] == ["epoch", "loss", "recall20", "lr"] and len(rows) == 3
    assert main(["eval", "--model", str(out / "model"), *_data_args(toy), "--k", "5",
                 "--out", str(toy / "ev")]) == 0
    rep = list(csv.reader((toy / "ev" / "report.csv").open()))
    assert rep[1][2] == "5"
    # the saved config reproduces the run
    assert main(["train", "--config", str(out / "config.txt"), "--out", str(toy / "run2")]) == 0
    assert (out / "history.csv").read_text() == (toy / "run2" / "history.csv").read_text()


def test_train_rejects_bad_config_before_reading_data(tmp_path, capsys):
    rc = main(["train", "--data.train", str(tmp_path / "missing.txt"), "--loss.family", "debiased_ccl"])
    assert rc == 2
    assert "m_extra_positives" in capsys.readouterr().err
    assert main(["train", "--data.train", str(tmp_path / "missing.txt"), "--loss.family", "softplus"]) == 2


def test_linear_ease_zero_diagonal(toy):
    out = toy / "ease"
    assert main(["linear", "--method", "ease-debiased", *_data_args(toy), "--ease.lam", "2",
                 "--ease.alpha", "0.3", "--out", str(out)]) == 0
    W = np.loadtxt(out / "model" / "weights.txt")
    assert W.shape == (10, 10) and np.abs(np.diag(W)).max() <= 1e-8
    assert main(["eval", "--model", str(out / "model"), *_data_args(toy), "--out", str(out)]) == 0


def test_linear_ials(toy):
    assert main(["linear", "--method", "ials-debiased", *_data_args(toy), "--ials.d", "3",
                 "--ials.iters", "2", "--ials.c", "1.5", "--out", str(toy / "ials")]) == 0
    assert (toy / "ials" / "report.csv").is_file()
    assert main(["linear", "--method", "ials-debiased", *_data_args(toy), "--ials.alpha0", "1.0",
                 "--out", str(toy / "bad")]) == 2


@pytest.mark.parametrize("suite,trials,outfile", [("bounds", 3000, "bounds.csv"), ("theorem1", 1, "theorem1.csv"),
                                                  ("theorem2", 3, "theorem2.csv"), ("gradients", 1, "gradients.csv")])
def test_verify_suites_pass(tmp_path, suite, trials, outfile):
    assert main(["verify", "--suite", suite, "--trials", str(trials), "--out", str(tmp_path)]) == 0
    assert (tmp_path / outfile).is_file()


def test_verify_reports_violation(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(bounds, "TOLERANCE", 10.0)
    assert main(["verify", "--suite", "bounds", "--trials", "200", "--out", str(tmp_path)]) == 1
    assert "counterexample" in capsys.readouterr().out


def test_sweep_temperature(toy):
    values = ",".join(f"{0.1 * k:.1f}" for k in range(1, 11))
    out = toy / "sw"
    assert main(["sweep", *_data_args(toy), *FAST, "--train.max_epochs", "1", "--loss.family", "infonce",
                 "--param", "loss.temperature", "--values", values, "--out", str(out)]) == 0
    rows = list(csv.reader((out / "sweep.csv").open()))
    assert rows[0] == ["param", "value", "recall20", "ndcg20"] and len(rows) == 11


def test_sweep_errors(toy):
    assert main(["sweep", *_data_args(toy), "--param", "loss.colour", "--values", "1"]) == 2
    # a bad value anywhere in the list fails before any training
    assert main(["sweep", *_data_args(toy), "--loss.family", "infonce", "--param", "loss.temperature",
                 "--values", "0.5,-1", "--out", str(toy / "x")]) == 2
    assert not (toy / "x" / "sweep.csv").exists()


def test_eval_missing_checkpoint(toy):
    assert main(["eval", "--model", str(toy / "none"), *_data_args(toy)]) == 2
