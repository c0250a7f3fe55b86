"""Energy and roofline sweep over array sizes and EWS extensions.

    python scripts/energy_sweep.py [layer_table]
"""

import argparse
import itertools
from pathlib import Path

from mvq.accel import SETTINGS, read_layer_table, setting_config, simulate
from mvq.cli import bundled_layer_table


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("table", nargs="?", type=Path, default=bundled_layer_table())
    args = ap.parse_args()
    layers = read_layer_table(args.table)

    print("access energy per setting (32x32, A,B,D=4,2,2), relative to WS")
    base = None
    for s in SETTINGS:
        e = simulate(layers, setting_config(s)).energy
        base = base or e.access_energy
        print(f"  {s:<8} {e.access_energy / base:6.3f}   L1 share {e.percentages()['L1']:5.1f}%")

    print("\nL1 energy of EWS vs (A,B,D)")
    ref = simulate(layers, setting_config("ews", ews=(1, 1, 1))).energy.energy["L1"]
    for a, b, d in itertools.product([1, 2, 4], repeat=3):
        l1 = simulate(layers, setting_config("ews", ews=(a, b, d))).energy.energy["L1"]
        print(f"  A={a} B={b} D={d}: {l1 / ref:.4f}")

    print("\nattainable fraction of peak")
    for n in (16, 32, 64, 128):
        row = []
        for s in ("ews", "ews-cm"):
            row.append(simulate(layers, setting_config(s, h=n, l=n)).attainable_fraction)
        print(f"  {n:3d}x{n:<3d} ews {row[0]:.3f}  ews-cm {row[1]:.3f}")


if __name__ == "__main__":
    main()
