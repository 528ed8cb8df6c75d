"""Throughput comparison of the interpreter kernels (pure vs compiled).

Runs the same mining-shaped workloads through both backends and reports
steps-per-second plus end-to-end mining time on the bundled fixtures.
Also asserts that both kernels produce identical traces, which they must,
being built from the same source file.

Usage: python benchmarks/kernel_throughput.py [--seconds 2.0]
"""

from __future__ import annotations

import argparse
import time

from frontforge import fixtures
from frontforge.miner import MinerConfig, mine_history
from frontforge.vm import engine
from frontforge.vm.engine import available_kernels


def _workload():
    """Transactions replayed per round: every fixture history, start to end."""
    histories = fixtures.all_fixtures()
    plans = []
    for hist in histories.values():
        txs = [hist.tx_at(i) for i in range(hist.tx_count())]
        plans.append((hist.genesis, txs))
    return plans


def bench_kernel(kernel, plans, seconds: float) -> tuple[float, int, list]:
    steps = 0
    rounds = 0
    sample = []
    deadline = time.perf_counter() + seconds
    start = time.perf_counter()
    while time.perf_counter() < deadline:
        for genesis, txs in plans:
            overlay = kernel.Overlay(genesis)
            for tx in txs:
                trace = kernel.execute_on_overlay(overlay, tx)
                steps += len(trace.steps)
                if rounds == 0:
                    sample.append(trace)
        rounds += 1
    elapsed = time.perf_counter() - start
    return steps / elapsed, steps, sample


def bench_mining(kernel_name: str) -> float:
    import os

    os.environ["FRONTFORGE_KERNEL"] = kernel_name
    import importlib

    importlib.reload(engine)
    hist = fixtures.combined()
    start = time.perf_counter()
    mine_history(hist, MinerConfig(parallelism=1))
    return time.perf_counter() - start


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seconds", type=float, default=2.0, help="time budget per kernel")
    args = parser.parse_args()

    kernels = available_kernels()
    plans = _workload()
    results = {}
    samples = {}
    for name, module in kernels.items():
        rate, steps, sample = bench_kernel(module, plans, args.seconds)
        results[name] = rate
        samples[name] = sample
        print(f"{name:>9}: {rate:>12,.0f} steps/s  ({steps:,} steps executed)")

    if len(samples) == 2:
        assert samples["pure"] == samples["compiled"], "kernel outputs diverge"
        print(f"{'':>9}  traces identical across backends")
        print(f"{'':>9}  speedup: {results['compiled'] / results['pure']:.2f}x")
    else:
        print("compiled kernel not built; run `python setup.py build_ext --inplace`")


if __name__ == "__main__":
    main()
