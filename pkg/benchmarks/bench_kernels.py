"""Benchmark the compiled kernels against the pure-numpy fallback.

Micro-benchmarks time the three hot kernels directly on both
implementations; the macro benchmark runs a seeded one-trial link
scenario in a subprocess per backend (backend choice is fixed at import
time, so a fresh interpreter is needed to switch).

Usage::

    python3 benchmarks/bench_kernels.py            # micro benchmarks
    python3 benchmarks/bench_kernels.py --macro    # add the scenario run
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from multibeam.kernels import BACKEND, _ref

try:
    from multibeam.kernels import _fast
except ImportError:  # pragma: no cover - fallback-only environments
    _fast = None


def _time_ms(fn, number: int) -> float:
    """Best-of-5 single-call time in milliseconds."""
    return min(timeit.repeat(fn, number=number, repeat=5)) / number * 1e3


def _bench_row(name: str, size: str, ref_fn, fast_fn, number: int) -> None:
    ref_ms = _time_ms(ref_fn, number)
    if fast_fn is None:
        print(f"{name:<18} {size:<16} {ref_ms:>10.4f} {'-':>10} {'-':>8}")
        return
    fast_ms = _time_ms(fast_fn, number)
    print(
        f"{name:<18} {size:<16} {ref_ms:>10.4f} {fast_ms:>10.4f} "
        f"{ref_ms / fast_ms:>7.2f}x"
    )


def run_micro() -> None:
    rng = np.random.default_rng(0)
    print(f"active backend: {BACKEND}")
    print(f"{'kernel':<18} {'size':<16} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")

    for n, m in ((64, 181), (64, 3601), (256, 181)):
        w = rng.normal(size=n) + 1j * rng.normal(size=n)
        angles = rng.uniform(-np.pi / 2, np.pi / 2, size=m)
        _bench_row(
            "pattern_amplitude",
            f"{n}el x {m}ang",
            lambda: _ref.pattern_amplitude(w, angles, 0.5),
            (lambda: _fast.pattern_amplitude(w, angles, 0.5)) if _fast else None,
            number=200,
        )

    for paths, taps in ((2, 64), (8, 64), (8, 512)):
        alphas = rng.normal(size=paths) + 1j * rng.normal(size=paths)
        tofs = np.sort(rng.uniform(0, 100e-9, size=paths))
        _bench_row(
            "sinc_taps",
            f"{paths}path x {taps}",
            lambda: _ref.sinc_taps(alphas, tofs, 400e6, taps),
            (lambda: _fast.sinc_taps(alphas, tofs, 400e6, taps)) if _fast else None,
            number=500,
        )

    for paths, taps in ((3, 64), (3, 256)):
        rel = np.sort(np.append(0.0, rng.uniform(0.1e-9, 5e-9, size=paths - 1)))
        _bench_row(
            "sinc_matrix",
            f"{paths}tof x {taps}",
            lambda: _ref.sinc_matrix(rel, 400e6, taps, taps // 4),
            (lambda: _fast.sinc_matrix(rel, 400e6, taps, taps // 4)) if _fast else None,
            number=500,
        )


_MACRO_SCRIPT = (
    "import time, multibeam.linksim as ls\n"
    "import multibeam\n"
    "t0 = time.perf_counter()\n"
    "r = ls.run_scenario(ls.ensemble_config('multibeam', 'rotation', 2, 5))\n"
    "dt = time.perf_counter() - t0\n"
    "print(f'{multibeam.KERNEL_BACKEND}: {dt * 1e3:.1f} ms for 2 trials, "
    "reliability {r.reliability:.4f}')\n"
)


def run_macro() -> None:
    print("\nscenario macro benchmark (fresh interpreter per backend):")
    for extra in ({}, {"MULTIBEAM_PURE_PYTHON": "1"}):
        env = {k: v for k, v in os.environ.items() if k != "MULTIBEAM_PURE_PYTHON"}
        env.update(extra)
        out = subprocess.run(
            [sys.executable, "-c", _MACRO_SCRIPT],
            capture_output=True,
            text=True,
            env=env,
            check=True,
        )
        print("  " + out.stdout.strip())


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--macro", action="store_true", help="also time a link scenario")
    args = parser.parse_args()
    run_micro()
    if args.macro:
        run_macro()


if __name__ == "__main__":
    main()
