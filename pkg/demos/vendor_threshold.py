"""Compromise f of k=3 vendors and watch where forged state roots end up."""

from dataclasses import replace

from pote.harness.sweeps import bundled_scenario
from pote.simnet import AdversarySpec, run_scenario


def main() -> None:
    base = bundled_scenario("baseline")
    base = base.replace(rounds=6, workload=replace(base.workload, tx_per_block=100))
    for f in range(4):
        adv = AdversarySpec(compromised_vendors=tuple(range(1, f + 1)))
        result = run_scenario(base.replace(adversary=adv))
        honest = set(result.honest_nodes())
        finalized = sum(not r.stalled for r in result.records)
        mismatched = sum(
            1 for r in result.records for n, ok in r.dual_path_ok.items() if not ok
        )
        print(
            f"f={f}: {finalized}/{len(result.records)} round attempts finalized, "
            f"honest validators: {len(honest)}, finalizations with a forged state root: {mismatched}"
        )


if __name__ == "__main__":
    main()
