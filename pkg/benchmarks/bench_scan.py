#!/usr/bin/env python3
"""Benchmark the compiled scan kernel against the pure-numpy fallback.

Times the raw per-step scan across window/stream-count combinations and
one end-to-end null monitoring run. Run from the repo root:

    python benchmarks/bench_scan.py
"""

import time

import numpy as np

from tailormon import _kernel
from tailormon.mixmonitor import _BartlettTable


def make_step_inputs(rng, n_streams, window, m=200):
    t = window + 50
    kmin = t - window - 1
    L = window + 1
    window_vals = rng.standard_normal((L, n_streams))
    run = rng.standard_normal((t, n_streams))
    table = _BartlettTable()
    return dict(
        train_sum=rng.standard_normal(n_streams) * 0.1,
        train_sumsq=m + rng.standard_normal(n_streams),
        m=m,
        run_sum=run.sum(axis=0),
        run_sumsq=(run * run).sum(axis=0),
        window_vals=np.ascontiguousarray(window_vals),
        t=t,
        kmin=kmin,
        p0=0.3,
        cvals=np.ascontiguousarray(table.cvals(m, t, kmin)),
        var_floor=1e-12,
    )


def time_kernel(fn, inputs, repeats):
    args = (
        inputs["train_sum"],
        inputs["train_sumsq"],
        inputs["m"],
        inputs["run_sum"],
        inputs["run_sumsq"],
        inputs["window_vals"],
        inputs["t"],
        inputs["kmin"],
        inputs["p0"],
        inputs["cvals"],
        inputs["var_floor"],
    )
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def bench_steps():
    rng = np.random.default_rng(0)
    print(f"{'J':>4} {'w':>5} {'python':>12} {'compiled':>12} {'speedup':>8}")
    for n_streams in (2, 5, 20):
        for window in (50, 200):
            inputs = make_step_inputs(rng, n_streams, window)
            repeats = max(20, int(2e6 / (n_streams * window)))
            t_py = time_kernel(_kernel.scan_step_python, inputs, repeats)
            if _kernel.scan_step_compiled is None:
                print(f"{n_streams:>4} {window:>5} {t_py * 1e6:>10.1f}us {'n/a':>12} {'n/a':>8}")
                continue
            t_cy = time_kernel(_kernel.scan_step_compiled, inputs, repeats)
            print(
                f"{n_streams:>4} {window:>5} {t_py * 1e6:>10.1f}us {t_cy * 1e6:>10.1f}us "
                f"{t_py / t_cy:>7.1f}x"
            )


def bench_monitor_run():
    import tailormon as tm

    rng = np.random.default_rng(1)
    D, m, steps = 20, 200, 2000
    base = tm.random_correlation(D, 1.0, rng)
    chol = np.linalg.cholesky(base.values)
    train = rng.standard_normal((m, D)) @ chol.T
    summary = tm.estimate_training(train)
    sel = tm.min_variance_selection(tm.eigensystem(summary.corr), 5)
    model = tm.build_monitor_model(summary, sel, train, window=200)
    stream = rng.standard_normal((steps, D)) @ chol.T

    results = {}
    for label, fn in (("python", _kernel.scan_step_python), ("compiled", _kernel.scan_step_compiled)):
        if fn is None:
            continue
        _kernel.scan_step, saved = fn, _kernel.scan_step
        try:
            t0 = time.perf_counter()
            run = tm.Monitor(model).run(stream, collect_trace=False)
            results[label] = time.perf_counter() - t0
        finally:
            _kernel.scan_step = saved
        print(f"monitor run ({steps} steps, J=5, w=200) [{label}]: {results[label]:.3f}s")
    if "python" in results and "compiled" in results:
        print(f"end-to-end speedup: {results['python'] / results['compiled']:.1f}x")


if __name__ == "__main__":
    print(f"compiled kernel available: {_kernel.scan_step_compiled is not None}")
    bench_steps()
    bench_monitor_run()
