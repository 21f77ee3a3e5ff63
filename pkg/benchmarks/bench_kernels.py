"""Compare the compiled kernels with the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py``.  Both backends are timed on
the same inputs and their outputs are checked for agreement.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from lattice_coherence import _fallback
from lattice_coherence.models import dapi_model, lookahead_model, symbol_matrices
from lattice_coherence.simulator import closed_loop_matrix

try:
    from lattice_coherence import _kernels
except ImportError:  # extension not built
    _kernels = None


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_lyapunov(K: int, repeat: int) -> None:
    model = dapi_model(1.0, 1.0, 1.0, 1.0)
    th = np.linspace(1e-3, np.pi, K)[:, None]
    a_hat = symbol_matrices(model, th)
    args = (a_hat, model.position_index, model.disturbance_index)
    ref = _fallback.lyap_density_batch(*args)
    print(f"lyap_density_batch, K={K} 3x3 symbols")
    print(f"  numpy     {best_of(lambda: _fallback.lyap_density_batch(*args), repeat) * 1e3:9.2f} ms")
    if _kernels is not None:
        out = _kernels.lyap_density_batch(*args)
        print(f"  compiled  {best_of(lambda: _kernels.lyap_density_batch(*args), repeat) * 1e3:9.2f} ms"
              f"   max |diff| {np.max(np.abs(out - ref)):.2e}")


def bench_em(L: int, T: int, steps: int, repeat: int) -> None:
    model = lookahead_model(1.0, 1.0, 1.0, 1.0, 0.0)
    M = closed_loop_matrix(model, L, "string")
    n = M.shape[0]
    rng = np.random.default_rng(0)
    noise = rng.standard_normal((steps, T, L))
    noise_rows = np.arange(L, 2 * L, dtype=np.intp)
    pos_rows = np.arange(0, L, dtype=np.intp)

    def run(kernel):
        X = np.zeros((T, n))
        ysum, ysq = np.zeros((T, L)), np.zeros((T, L))
        kernel(M.indptr.astype(np.int32), M.indices.astype(np.int32), M.data, X, noise,
               noise_rows, pos_rows, 0.1, np.sqrt(0.1), 0, 0, ysum, ysq, np.zeros((0, L)), 0)
        return ysq

    ref = run(_fallback.em_chunk)
    print(f"em_chunk, string L={L}, {T} trajectories, {steps} steps")
    print(f"  numpy     {best_of(lambda: run(_fallback.em_chunk), repeat) * 1e3:9.2f} ms")
    if _kernels is not None:
        out = run(_kernels.em_chunk)
        print(f"  compiled  {best_of(lambda: run(_kernels.em_chunk), repeat) * 1e3:9.2f} ms"
              f"   max rel diff {np.max(np.abs(out - ref) / np.abs(ref).max()):.2e}")


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    if _kernels is None:
        print("compiled extension not built; timing the numpy fallback only")
    bench_lyapunov(20_000, args.repeat)
    bench_em(100, 4, 2000, args.repeat)


if __name__ == "__main__":
    main()
