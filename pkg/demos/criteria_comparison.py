"""Compare the three chunk scoring criteria on the same seeds.

Writes a comparison report under ``runs/demo-compare`` and prints the
final test solve rate and mean chunk size per criterion.

    python3 demos/criteria_comparison.py
"""
import json
import os

from dreamchunk.experiment import RunConfig, compare

OUT = os.path.join("runs", "demo-compare")


def main():
    base = dict(domain="list", cycles=3, wake_budget=2000, test_budget=2000, fantasies=100, seeds=(1, 2))
    configs = [RunConfig(criterion=c, out=os.path.join(OUT, c), **base) for c in ("ddc-pc", "ddc-avg", "compression")]
    report = compare(configs, out=OUT)
    print(json.dumps({k: report[k] for k in ("final_test_pct", "mean_chunk_size")}, indent=1))


if __name__ == "__main__":
    main()
