"""Run the 7-row design grid on synthetic data and print the table.

For a custom grid or a real dataset use ``iganet ablate --grid scripts/design_grid.json``.
"""

import argparse
from pathlib import Path

from iganet import ablation, recipes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train", type=int, default=512)
    ap.add_argument("--eval", type=int, default=64)
    ap.add_argument("--out", help="directory for ablation.txt / ablation.csv")
    args = ap.parse_args()
    rows, table = recipes.ablation_grid(args.train, args.eval)
    print(table)
    print("ranking (best first):", ", ".join(ablation.ranking(rows)))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.txt").write_text(table + "\n")
        (out / "ablation.csv").write_text(ablation.to_csv(rows))


if __name__ == "__main__":
    main()
