"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Prints the best-of-``repeat`` wall time per kernel and backend, the speedup,
and whether both backends returned identical arrays.
"""
import argparse
import timeit

import numpy as np

from wshar import kernels


def cases(scale):
    rng = np.random.default_rng(0)
    n = max(int(2000 * scale), 10)
    return {
        # one row per (segment, channel); 128-sample windows
        "window_stats": (rng.normal(size=(n * 6, 128)),),
        # normalised 42-dim features, 5 neighbours
        "knn": (rng.normal(size=(n, 42)), 5),
        # 32-dim embeddings against 5 centroids
        "nearest_centroid": (rng.normal(size=(n * 5, 32)), rng.normal(size=(5, 32))),
    }


def same(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--scale", type=float, default=1.0, help="multiply the problem sizes")
    args = parser.parse_args()
    backends = {"python": kernels.python_backend}
    if kernels.compiled_backend is not None:
        backends["cython"] = kernels.compiled_backend
    else:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':<18}{'backend':<9}{'best (ms)':>11}{'speedup':>9}  identical")
    for name, call_args in cases(args.scale).items():
        times, outputs = {}, {}
        for label, mod in backends.items():
            fn = getattr(mod, name)
            outputs[label] = fn(*call_args)
            times[label] = min(timeit.repeat(lambda: fn(*call_args), number=1, repeat=args.repeat))
        for label in backends:
            speedup = times["python"] / times[label]
            ok = same(outputs[label], outputs["python"])
            print(f"{name:<18}{label:<9}{times[label] * 1e3:>11.2f}{speedup:>8.1f}x  {ok}")


if __name__ == "__main__":
    main()
