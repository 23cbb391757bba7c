"""Throughput per block size and commit latency per network size."""

from pote.harness.sweeps import bundled_scenario, sweep_latency, sweep_tps


def main() -> None:
    for row in sweep_tps("by_block_size", [500, 1000, 2000, 5000]):
        print(f"{row.label:<44} {float(row.tps):>9.1f} tps")
    print()
    for s in sweep_latency(bundled_scenario("latency"), [5, 25, 75]):
        print(f"{s.validator_count:>4} validators: median commit {float(s.median_latency_ms):.0f} ms")


if __name__ == "__main__":
    main()
