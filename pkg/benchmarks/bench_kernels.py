"""Compare the compiled and pure-Python kernel backends on decode-sized inputs.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from spdlab import _kernels


def cases(rng: np.random.Generator) -> dict:
    probs = rng.dirichlet(np.full(64, 0.3))
    other = rng.dirichlet(np.full(64, 0.3))
    a = rng.integers(0, 20, 60)
    b = rng.integers(0, 20, 60)
    ctx = np.tile(rng.integers(4, 40, 12), 6).astype(np.int64)
    return {
        "top_p_filter(V=64)": lambda k: k.top_p_filter(probs, 0.7),
        "residual(V=64)": lambda k: k.residual(probs, other),
        "sample_index(V=64)": lambda k: k.sample_index(probs, 0.37),
        "lcs_length(60x60)": lambda k: k.lcs_length(a, b),
        "suffix_match(n=72)": lambda k: k.suffix_match(ctx, 3),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=2000)
    args = parser.parse_args()
    if _kernels.compiled is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    print(f"active backend: {_kernels.BACKEND}")
    print(f"{'kernel':<22}{'python us':>12}{'compiled us':>14}{'ratio':>9}")
    for name, fn in cases(np.random.default_rng(0)).items():
        py = min(timeit.repeat(lambda: fn(_kernels.python), number=args.repeat, repeat=3)) / args.repeat
        cy = min(timeit.repeat(lambda: fn(_kernels.compiled), number=args.repeat, repeat=3)) / args.repeat
        print(f"{name:<22}{py * 1e6:>12.2f}{cy * 1e6:>14.2f}{py / cy:>8.1f}x")


if __name__ == "__main__":
    main()
