"""``recloss`` command-line front end.

Exit codes: 0 success, 1 verification failure, 2 usage, configuration or I/O error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError, ExperimentConfig
from .data import DataFormatError, InteractionDataset

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2

# users, items, interactions of the public benchmark releases
KNOWN_DATASETS = {
    "Yelp2018": (31_668, 38_048, 1_561_406),
    "Gowalla": (29_858, 40_981, 1_027_370),
    "Amazon-Books": (52_643, 91_599, 2_984_108),
}

log = logging.getLogger("recloss")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_overrides(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("config overrides (take precedence over --config)")
    for key, (_, default, help_) in cfgmod.SCHEMA.items():
        g.add_argument(f"--{key}", dest="ov:" + key, metavar="V", default=None,
                       help=f"{help_} (default {cfgmod._fmt(default)})")


def _experiment(args) -> ExperimentConfig:
    cfg = cfgmod.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    overrides = {k[3:]: v for k, v in vars(args).items() if k.startswith("ov:") and v is not None}
    return cfg.merged(overrides)


def _read(path: str, fmt: str) -> InteractionDataset:
    from .data import load_interactions

    if not Path(path).is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return load_interactions(path, fmt)


def _align(*sets: InteractionDataset | None) -> list[InteractionDataset | None]:
    nu = max(s.n_users for s in sets if s is not None)
    ni = max(s.n_items for s in sets if s is not None)
    out = []
    for s in sets:
        if s is None or (s.n_users == nu and s.n_items == ni):
            out.append(s)
        else:
            out.append(InteractionDataset.from_pairs(*s.pairs(), n_users=nu, n_items=ni))
    return out


def _datasets(cfg: ExperimentConfig, need_test: bool = False):
    fmt = cfg["data.format"]
    if cfg["data.train"] is None:
        raise ConfigError("data.train is not set")
    if need_test and cfg["data.test"] is None:
        raise ConfigError("data.test is not set")
    train = _read(cfg["data.train"], fmt)
    test = _read(cfg["data.test"], fmt) if cfg["data.test"] else None
    valid = _read(cfg["data.valid"], fmt) if cfg["data.valid"] else None
    return _align(train, test, valid)


def _out_dir(cfg: ExperimentConfig, override: str | None = None) -> Path:
    out = Path(override or cfg["experiment.out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _report(out: Path, rows) -> None:
    from .evaluation import format_table, write_report_csv

    write_report_csv(rows, out / "report.csv")
    print(format_table(rows), end="")


# ---------------------------------------------------------------------------


def cmd_prepare(args) -> int:
    from .data import SplitSpec, densify, split, write_id_map, write_pairs

    if args.synthetic:
        from .data import synthetic

        raw = synthetic(seed=args.seed)
    else:
        raw = _read(args.input, args.format)
    ds, user_ids, item_ids = densify(raw)
    train, test = split(ds, SplitSpec(args.test_fraction, seed=args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pairs(train, out / "train.txt")
    write_pairs(test, out / "test.txt")
    write_id_map(user_ids, out / "user_ids.txt")
    write_id_map(item_ids, out / "item_ids.txt")
    density = ds.n_interactions / max(ds.n_users * ds.n_items, 1)
    stats = (f"users {ds.n_users} items {ds.n_items} interactions {ds.n_interactions} "
             f"density {density:.6g} train {train.n_interactions} test {test.n_interactions}")
    for name, (nu, ni, _) in KNOWN_DATASETS.items():
        if (ds.n_users, ds.n_items) == (nu, ni):
            stats += f" (shape of {name})"
    (out / "stats.txt").write_text(stats + "\n")
    print(stats)
    return EXIT_OK


def _train_and_eval(cfg: ExperimentConfig, train, test, valid):
    from . import model as mf
    from .evaluation import evaluate
    from .trainer import train as fit

    tc = cfg.train_config()
    m, hist = fit(tc, train, valid)
    rep = None
    if test is not None:
        rep = evaluate(lambda u: mf.score_users(m, u), train, test, cfg["eval.k"])
    return m, hist, rep


def cmd_train(args) -> int:
    from . import model as mf

    cfg = _experiment(args)
    cfg.train_config()  # configuration errors surface before any data is read
    train, test, valid = _datasets(cfg)
    out = _out_dir(cfg, args.out)
    cfgmod.save(cfg, out / "config.txt")
    m, hist, rep = _train_and_eval(cfg, train, test, valid)
    mf.save(m, out / "model")
    hist.write_csv(out / "history.csv")
    log.info("stopped after %d epochs (%s)", len(hist.records), hist.stop_reason)
    if rep is not None:
        _report(out, [(cfg["experiment.name"], cfg["loss.family"], rep)])
    return EXIT_OK


def _scores_fn(model_dir: Path, train: InteractionDataset):
    from . import model as mf
    from .linear import linear_scores, load_linear

    if (model_dir / "kind.txt").is_file():
        lm = load_linear(model_dir)
        return lm.kind, lambda u: linear_scores(lm, train, u)
    if not (model_dir / "header.txt").is_file():
        raise FileNotFoundError(f"no checkpoint in {model_dir}")
    m = mf.load(model_dir)
    if m.n_users != train.n_users or m.n_items != train.n_items:
        raise ConfigError("checkpoint dimensions do not match the training data")
    return "mf", lambda u: mf.score_users(m, u)


def cmd_eval(args) -> int:
    from .evaluation import evaluate

    cfg = _experiment(args)
    if args.train:
        cfg.set("data.train", args.train)
    if args.test:
        cfg.set("data.test", args.test)
    train, test, _ = _datasets(cfg, need_test=True)
    name, fn = _scores_fn(Path(args.model), train)
    k = args.k if args.k is not None else cfg["eval.k"]
    rep = evaluate(fn, train, test, k)
    out = _out_dir(cfg, args.out or str(Path(args.model)))
    _report(out, [(name, cfg["loss.family"] if name == "mf" else "-", rep)])
    return EXIT_OK


def cmd_linear(args) -> int:
    from .evaluation import evaluate
    from .linear import (EaseConfig, IalsConfig, ease_fit, export_ease_text, ials_fit, linear_scores,
                         save_linear)

    cfg = _experiment(args)
    method = args.method
    try:
        if method.startswith("ials"):
            s = cfg.section("ials")
            lc = IalsConfig(d=s["d"], alpha0=s["alpha0"], lam=s["lam"], nu=s["nu"], c=s["c"],
                            debiased=method == "ials-debiased", iters=s["iters"],
                            init_std=s["init_std"], seed=cfg["experiment.seed"])
        else:
            s = cfg.section("ease")
            lc = EaseConfig(lam=s["lam"], alpha=s["alpha"], debiased=method == "ease-debiased")
    except ValueError as e:
        raise ConfigError(str(e)) from None
    train, test, _ = _datasets(cfg)
    out = _out_dir(cfg, args.out)
    cfgmod.save(cfg, out / "config.txt")
    lm = ials_fit(train, lc) if method.startswith("ials") else ease_fit(train, lc)
    save_linear(lm, out / "model")
    if lm.kind == "ease":
        export_ease_text(lm, out / "model" / "weights.txt")
    if test is not None:
        rep = evaluate(lambda u: linear_scores(lm, train, u), train, test, cfg["eval.k"])
        _report(out, [(method, "-", rep)])
    return EXIT_OK


# ---------------------------------------------------------------------------
# certification suites


def _verify_bounds(args, out: Path) -> bool:
    from .bounds import certify, equal_score_slacks, write_csv

    rows = certify(trials=args.trials or 100_000, seed=args.seed)
    write_csv(rows, out / "bounds.csv")
    ok = True
    for r in rows:
        if r.violations:
            ok = False
            print(f"violation: ({r.inequality}) N={r.N} sigma={r.sigma} count={r.violations}")
            print("counterexample: " + json.dumps(r.counterexample))
    with (out / "bounds_equal.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("N", "inequality", "slack", "closed_form", "abs_error"))
        for n in (1, 2, 8, 64, 800):
            for name, (got, want) in equal_score_slacks(n).items():
                w.writerow((n, name, repr(got), repr(want), repr(abs(got - want))))
                if abs(got - want) > 1e-14:
                    ok = False
                    print(f"equal-score slack ({name}) N={n}: {got!r} != {want!r}")
    worst = min(r.min_slack for r in rows)
    print(f"bounds: {len(rows)} cells, min slack {worst:.3e}, "
          f"violations {sum(r.violations for r in rows)}")
    return ok


def _verify_theorem1(args, out: Path) -> bool:
    from .data import synthetic
    from .linear import verify_theorem1

    ok = True
    with (out / "theorem1.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("instance", "alpha0", "lam", "c", "user_cos_dev", "item_cos_dev", "k",
                    "topk_agreement", "naive_topk_agreement"))
        for i in range(args.trials or 1):
            rng = np.random.default_rng([args.seed, i])
            alpha0 = float(rng.uniform(0.05, 0.5))
            lam = float(10 ** rng.uniform(-3, -1))
            ds = synthetic(n_users=200, n_items=150, interactions_per_user=15, seed=args.seed + i)
            r = verify_theorem1(ds, d=8, alpha0=alpha0, lam=lam, c=1.5, seed=args.seed + i)
            w.writerow((i, alpha0, lam, 1.5, r.user_cos_dev, r.item_cos_dev, r.user_k,
                        r.topk_agreement, r.naive_topk_agreement))
            if r.max_cos_dev >= 1e-10 or r.topk_agreement < 1.0 or abs(r.user_k - r.item_k) > 1e-8:
                ok = False
                print(f"theorem1 instance {i} failed: {r}")
            print(f"theorem1 instance {i}: cos dev {r.max_cos_dev:.2e}, k {r.user_k:.6f}, "
                  f"top-20 agreement {r.topk_agreement:.3f}")
    return ok


def random_ease_instance(rng: np.random.Generator, max_items: int = 200):
    n_items = int(rng.integers(10, max_items + 1))
    n_users = int(rng.integers(n_items // 2 + 5, 2 * n_items + 20))
    density = rng.uniform(0.03, 0.2)
    X = (rng.random((n_users, n_items)) < density).astype(np.float64)
    lam = float(10 ** rng.uniform(-1, 2.5))
    alpha = float(rng.uniform(0.0, 0.9))
    return X, lam, alpha


def _verify_theorem2(args, out: Path) -> bool:
    from .linear import verify_theorem2

    ok, worst = True, 0.0
    with (out / "theorem2.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("instance", "n_items", "lam", "alpha", "max_rel_dev", "topk_identical"))
        for i in range(args.trials or 20):
            X, lam, alpha = random_ease_instance(np.random.default_rng([args.seed, i]))
            r = verify_theorem2(X, lam, alpha)
            worst = max(worst, r.max_rel_dev)
            w.writerow((i, X.shape[1], lam, alpha, r.max_rel_dev, r.topk_identical))
            if r.max_rel_dev >= 1e-10 or not r.topk_identical:
                ok = False
                print(f"theorem2 instance {i} failed: {r}")
    print(f"theorem2: max deviation {worst:.3e}")
    return ok


def _verify_gradients(args, out: Path) -> bool:
    from .trainer import gradient_suite

    rep = gradient_suite(instances=args.trials or 20, seed=args.seed)
    with (out / "gradients.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("family", "worst_rel_error", "checked", "skipped"))
        for k, v in rep.worst.items():
            w.writerow((k, repr(v), rep.checked.get(k, 0), rep.skipped.get(k, 0)))
    for note in rep.notices:
        print("notice: " + note)
    print(f"gradients: worst relative error {rep.worst_overall:.3e}")
    ok = rep.worst_overall < 1e-4
    if not ok:
        for k, v in rep.worst.items():
            if not v < 1e-4:
                print(f"gradient check failed for {k}: {v:.3e}")
    return ok


SUITES = {
    "bounds": _verify_bounds,
    "theorem1": _verify_theorem1,
    "theorem2": _verify_theorem2,
    "gradients": _verify_gradients,
}


def cmd_verify(args) -> int:
    out = Path(args.out or f"verify-{args.suite}")
    out.mkdir(parents=True, exist_ok=True)
    ok = SUITES[args.suite](args, out)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_sweep(args) -> int:
    cfg = _experiment(args)
    if args.param not in cfgmod.SCHEMA:
        raise ConfigError(f"unknown parameter {args.param!r}")
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values is empty")
    runs = [cfg.merged({args.param: v}) for v in values]
    for r in runs:
        r.train_config()
    train, test, valid = _datasets(cfg, need_test=True)
    out = _out_dir(cfg, args.out)
    path = out / "sweep.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("param", "value", "recall20", "ndcg20"))
        for v, run in zip(values, runs):
            _, _, rep = _train_and_eval(run, train, test, valid)
            w.writerow((args.param, v, f"{rep.recall_at_k:.6f}", f"{rep.ndcg_at_k:.6f}"))
            fh.flush()
            print(f"{args.param}={v}: recall {rep.recall_at_k:.4f} ndcg {rep.ndcg_at_k:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="recloss", description="Recommendation losses: training, linear solvers, certification.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prepare", parents=[common], help="densify, split and index a raw interaction file")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--input")
    src.add_argument("--synthetic", action="store_true",
                     help="generate the MovieLens-100k-sized synthetic set instead")
    s.add_argument("--format", choices=("pairs", "adjacency"), default="pairs")
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", parents=[common], help="train an MF model under one loss")
    s.add_argument("--config")
    s.add_argument("--out")
    _add_overrides(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--config")
    s.add_argument("--train")
    s.add_argument("--test")
    s.add_argument("--k", type=int)
    s.add_argument("--out")
    _add_overrides(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("linear", parents=[common], help="fit iALS or EASE in closed form")
    s.add_argument("--method", required=True, choices=("ials", "ials-debiased", "ease", "ease-debiased"))
    s.add_argument("--config")
    s.add_argument("--out")
    _add_overrides(s)
    s.set_defaults(func=cmd_linear)

    s = sub.add_parser("verify", parents=[common], help="run a certification suite")
    s.add_argument("--suite", required=True, choices=tuple(SUITES))
    s.add_argument("--trials", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("sweep", parents=[common], help="train + evaluate across values of one key")
    s.add_argument("--config")
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--out")
    _add_overrides(s)
    s.set_defaults(func=cmd_sweep)
    return p


def _thread_limit(n: int | None):
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"recloss: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads
    try:
        if threads is None and getattr(args, "config", None):
            threads = cfgmod.load(args.config)["experiment.threads"]
        with _thread_limit(threads):
            return args.func(args)
    except (ConfigError, DataFormatError, ValueError) as e:
        print(f"recloss: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as e:
        print(f"recloss: run failed: {e}", file=sys.stderr)
        return EXIT_VERIFY
    except OSError as e:
        name = e.filename if getattr(e, "filename", None) else ""
        msg = f"{e.strerror}: {name}" if e.strerror and name else str(e)
        print(f"recloss: error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
