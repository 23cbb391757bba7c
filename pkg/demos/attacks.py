"""Run each adversary against a three-vendor network and show what honest nodes saw."""

from dataclasses import replace

from pote.harness.sweeps import bundled_scenario
from pote.simnet import AdversarySpec, run_scenario

MODES = ["tamper_after_attest", "keep_quote_alter_block", "replay_old_quote", "rogue_proposer"]


def main() -> None:
    base = bundled_scenario("baseline")
    base = base.replace(rounds=4, workload=replace(base.workload, tx_per_block=100))
    for mode in MODES:
        adv = AdversarySpec(modes=(mode,), start_height=2, end_height=2)
        result = run_scenario(base.replace(adversary=adv))
        print(f"== {mode}")
        for rec in result.records:
            seen = sorted({r for reasons in rec.rejections.values() for r in reasons})
            status = "stalled" if rec.stalled else f"finalized {rec.block_hash[:12]}"
            print(f"  height {rec.height} attempt {rec.attempt}: {status}  rejections={seen or '-'}")


if __name__ == "__main__":
    main()
