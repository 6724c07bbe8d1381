"""A short learning run on the list domain.

Prints per-cycle test solve rates, the chunks learned and which hidden
concepts of the task generator were rediscovered.

    python3 demos/list_domain_run.py [seed]
"""
import sys

from dreamchunk.experiment import RunConfig, run_seed
from dreamchunk.wake_sleep import recovered_hidden_chunks


def main(seed=1):
    cfg = RunConfig(domain="list", cycles=3, wake_budget=3000, test_budget=3000, fantasies=100)
    run = run_seed(cfg, seed)
    for m in run.state.metrics:
        print(f"cycle {m.cycle}: batch solved {m.train_solved}/{cfg.batch_size}, test {m.test_pct:.0f}%, "
              f"chunks +{m.chunks_installed}")
    print("\nlearned chunks:")
    for c in run.state.chunks:
        print(f"  cycle {c.cycle} {c.name} (size {c.size}): {c.inlined}")
    print("\nhidden concepts recovered:", ", ".join(recovered_hidden_chunks(run.state, run.spec)) or "none")
    solved = [r for r in run.state.tests[-1] if r.solved]
    print("\nsome final test solutions:")
    for r in solved[:5]:
        print(f"  {r.task_id}: {r.program}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 1)
