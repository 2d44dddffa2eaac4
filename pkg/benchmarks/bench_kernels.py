"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py --repeat 200
"""

import argparse
import timeit

import numpy as np

from cascade_asr import kernels


def _cases(rng, batch, vocab, dim, frames, labels):
    enc_part = rng.normal(size=dim)
    pred_parts = rng.normal(size=(batch, dim))
    embedding = rng.normal(size=(vocab, dim))
    blank_row = rng.normal(size=dim)
    log_blank = np.log(rng.uniform(0.05, 0.95, (frames, labels + 1)))
    log_emit = np.log(rng.uniform(0.05, 0.95, (frames, labels)))
    ref = rng.integers(0, 50, size=labels * 2)
    hyp = rng.integers(0, 50, size=labels * 2)
    return {
        "joint_scores": lambda impl: impl.joint_scores(enc_part, pred_parts, embedding, blank_row),
        "forward_lattice": lambda impl: impl.forward_lattice(log_blank, log_emit, 2),
        "edit_cost": lambda impl: impl.edit_cost(ref, hyp),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=100)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--vocab", type=int, default=64)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--frames", type=int, default=50)
    ap.add_argument("--labels", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    impls = [kernels.numpy_impl]
    if kernels.numba_impl is not None:
        impls.append(kernels.numba_impl)
    else:
        print("numba not importable; timing the numpy fallback only")
    cases = _cases(np.random.default_rng(args.seed), args.batch, args.vocab, args.dim, args.frames, args.labels)

    print(f"{'kernel':<16}" + "".join(f"{impl.name + ' (us)':>14}" for impl in impls))
    for name, call in cases.items():
        row = f"{name:<16}"
        for impl in impls:
            call(impl)  # warm up, including jit compilation
            secs = min(timeit.repeat(lambda: call(impl), number=args.repeat, repeat=3)) / args.repeat
            row += f"{secs * 1e6:>14.1f}"
        print(row)


if __name__ == "__main__":
    main()
