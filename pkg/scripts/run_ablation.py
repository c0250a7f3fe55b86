"""Four-case clustering ablation over several seeds on Gaussian weights.

    python scripts/run_ablation.py --seeds 20 --shape 16,4096
"""

import argparse

import numpy as np

from mvq.pipeline import CASE_DESCRIPTIONS, run_ablation
from mvq.sparsity import NmPattern
from mvq.tensor import WeightTensor


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--shape", default="16,4096", help="Cout,Cin of a 1x1 layer")
    ap.add_argument("--nm", default="4:16")
    args = ap.parse_args()

    cout, cin = (int(v) for v in args.shape.split(","))
    pattern = NmPattern.parse(args.nm)
    table = {k: [] for k in "ABCD"}
    wins = 0
    for seed in range(args.seeds):
        w = WeightTensor(np.random.default_rng(seed).normal(size=(cout, cin, 1, 1)))
        cases = run_ablation(w, pattern, seed=seed)
        for key, c in cases.items():
            table[key].append((c.total_sse, c.mask_sse))
        d = cases["D"].mask_sse
        wins += d < cases["B"].mask_sse and d < cases["C"].total_sse
        print(f"seed {seed:2d}: " + "  ".join(f"{k} {c.total_sse:9.1f}/{c.mask_sse:8.1f}" for k, c in cases.items()))

    print("\nmean total / mask SSE")
    for key, rows in table.items():
        arr = np.array(rows)
        print(f"  {key}: {arr[:, 0].mean():10.2f} / {arr[:, 1].mean():10.2f}   {CASE_DESCRIPTIONS[key]}")
    print(f"\ncase D lowest in {wins}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
