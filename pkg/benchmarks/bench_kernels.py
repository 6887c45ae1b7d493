"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--batch 512] [--negatives 800] [--repeat 5]

Prints the best-of-``repeat`` wall time per call for each backend and the
speedup of the compiled core.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from recloss.kernels import FAMILY_CODES, available_backends, get_backend
from recloss.losses import LossSpec, evaluate_batch


def best_of(fn, repeat: int) -> float:
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(args, rng):
    B, N, M, d = args.batch, args.negatives, args.extra, args.dim
    pos = rng.normal(size=B)
    negs = rng.normal(size=(B, N))
    extra = rng.normal(size=(B, M))
    tau = rng.uniform(0.001, 0.05, size=B)
    q = rng.uniform(0.5, 2.0, size=(B, N))
    for fam in FAMILY_CODES:
        spec = LossSpec(fam)
        kw = {}
        if spec.debiased:
            kw = {"extra": extra, "tau": tau}
        if fam == "sampled_softmax":
            kw = {"proposal_probs": q}
        yield f"loss/{fam}", lambda be, s=spec, k=kw: evaluate_batch(s, pos, negs, backend=be, **k)

    n_users, n_items = 2000, 5000
    W = rng.normal(size=(n_users, d))
    H = rng.normal(size=(n_items, d))
    rows = rng.integers(0, n_users, B)
    cols = rng.integers(0, n_items, (B, 1 + N))
    G = rng.normal(size=cols.shape)

    def gather(be):
        get_backend(be).gather_scores(W, H, rows, cols)

    def scatter(be):
        gW, gH = np.zeros_like(W), np.zeros_like(H)
        get_backend(be).scatter_grads(W, H, rows, cols, G, gW, gH)

    yield "gather_scores", gather
    yield "scatter_grads", scatter


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=512)
    p.add_argument("--negatives", type=int, default=800)
    p.add_argument("--extra", type=int, default=10)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("compiled core not built; only the numpy fallback is available")
    rng = np.random.default_rng(args.seed)
    print(f"B={args.batch} N={args.negatives} M={args.extra} d={args.dim}")
    head = f"{'kernel':<28}" + "".join(f"{b + ' ms':>12}" for b in backends)
    if len(backends) > 1:
        head += f"{'speedup':>10}"
    print(head)
    for name, fn in cases(args, rng):
        ms = {b: 1e3 * best_of(lambda b=b: fn(b), args.repeat) for b in backends}
        line = f"{name:<28}" + "".join(f"{ms[b]:>12.3f}" for b in backends)
        if len(backends) > 1:
            line += f"{ms['numpy'] / ms['cython']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
