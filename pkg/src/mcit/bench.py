"""Benchmark the compiled scan kernels against the pure-numpy fallback."""

from __future__ import annotations

import time

import numpy as np

from . import kernels


def _instance(rng, bsz, tokens, channels, state):
    return {
        "u": rng.normal(size=(bsz, tokens, channels)),
        "delta": rng.uniform(0.01, 0.1, size=(bsz, tokens, channels)),
        "A": -rng.uniform(0.5, 2.0, size=(channels, state)),
        "B": rng.normal(size=(bsz, tokens, state)),
        "C": rng.normal(size=(bsz, tokens, state)),
        "h0": rng.normal(size=(bsz, channels, state)),
    }


def _time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_benchmark(sizes=((4, 64, 96, 16), (8, 256, 192, 16),
                         (4, 1024, 384, 16)),
                  repeats=5, print_fn=print) -> list:
    """Forward+backward timings for each (batch, tokens, channels, state).

    Returns a list of dicts; prints a table via print_fn.  Falls back
    gracefully (numba column reported as unavailable) when the compiled
    backend cannot load.
    """
    rng = np.random.default_rng(0)
    rows = []
    original_backend = kernels.get_backend()
    header = (f"{'size (b,t,c,n)':>20}  {'numpy fwd':>10}  "
              f"{'numba fwd':>10}  {'numpy f+b':>10}  {'numba f+b':>10}  "
              f"{'speedup':>8}")
    print_fn(header)
    for size in sizes:
        inst = _instance(rng, *size)
        args = (inst["u"], inst["delta"], inst["A"], inst["B"], inst["C"],
                inst["h0"])
        row = {"size": size}
        for backend in ("numpy", "numba"):
            try:
                kernels.set_backend(backend)
            except Exception:
                row[backend] = None
                continue
            y, h_hist = kernels.scan_forward(*args)
            gy = np.ones_like(y)
            gh = np.zeros_like(inst["h0"])
            fwd = _time(lambda: kernels.scan_forward(*args), repeats)
            both = _time(
                lambda: kernels.scan_backward(
                    gy, gh, inst["u"], inst["delta"], inst["A"],
                    inst["B"], inst["C"], h_hist), repeats)
            row[backend] = {"fwd": fwd, "fwd_bwd": fwd + both}
        rows.append(row)

        def cell(b, k):
            return f"{row[b][k] * 1e3:8.2f}ms" if row[b] else "     n/a"
        speed = (f"{row['numpy']['fwd_bwd'] / row['numba']['fwd_bwd']:7.1f}x"
                 if row["numpy"] and row["numba"] else "    n/a")
        print_fn(f"{str(size):>20}  {cell('numpy', 'fwd')}  "
                 f"{cell('numba', 'fwd')}  {cell('numpy', 'fwd_bwd')}  "
                 f"{cell('numba', 'fwd_bwd')}  {speed}")
    kernels.set_backend(original_backend)
    return rows
