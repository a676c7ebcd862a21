#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run with the default backend (numba when available) - the script times both
implementations directly, so no env juggling is needed.  To force the whole
package onto the numpy path instead, set EMOFACE_NUMBA=0.
"""

import time

import numpy as np

from emoface import kernels as K
from emoface.backend import backend_name


def timeit(fn, *args, repeat=20):
    fn(*args)  # warm (JIT compile)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def row(name, t_nb, t_np):
    speedup = t_np / t_nb if t_nb > 0 else float("inf")
    print(f"{name:<28} numba {t_nb * 1e3:8.3f} ms   numpy {t_np * 1e3:8.3f} ms"
          f"   speedup x{speedup:.2f}")


def main():
    print(f"active backend: {backend_name()}")
    rng = np.random.default_rng(0)
    for dtype in (np.float64, np.float32):
        print(f"\n-- dtype {np.dtype(dtype).name} --")
        nrays, nsamp = 1024, 64
        sigma = rng.uniform(0, 4, (nrays, nsamp)).astype(dtype)
        delta = rng.uniform(0.01, 0.08, (nrays, nsamp)).astype(dtype)
        color = rng.uniform(0, 1, (nrays, nsamp, 3)).astype(dtype)
        bg = np.array([0.1, 0.2, 0.3], dtype=dtype)
        g = rng.normal(size=(nrays, 3)).astype(dtype)

        if K.composite_fwd is not K.composite_fwd_np:
            t_nb = timeit(K.composite_fwd, sigma, delta, color, bg)
            t_np = timeit(K.composite_fwd_np, sigma, delta, color, bg)
            row(f"composite_fwd {nrays}x{nsamp}", t_nb, t_np)
            _, w, tr = K.composite_fwd(sigma, delta, color, bg)
            t_nb = timeit(K.composite_bwd, g, sigma, delta, color, bg, w, tr)
            t_np = timeit(K.composite_bwd_np, g, sigma, delta, color, bg, w, tr)
            row(f"composite_bwd {nrays}x{nsamp}", t_nb, t_np)

            v = rng.normal(size=(16384, 3)).astype(dtype)
            t_nb = timeit(K.posenc, v, 10)
            t_np = timeit(K.posenc_np, v, 10)
            row("posenc 16384x3 L=10", t_nb, t_np)
        else:
            print("numba backend inactive; numpy timings only")
            print("composite_fwd", timeit(K.composite_fwd_np, sigma, delta, color, bg))

    keys = np.arange(4096)
    t_nb = timeit(K.hash_uniform, 7, keys, 32)
    t_np = timeit(K.hash_uniform_np, 7, keys, 32)
    row("hash_uniform 4096x32", t_nb, t_np)


if __name__ == "__main__":
    main()
