#!/usr/bin/env python3
"""Write the reference 2-state / 2-asset model file used throughout the docs.

The instance is a sticky two-state environment (it stays put with probability
0.98) with strongly state-dependent dividends and a uniform rival, so the
solved benchmark weights are far from the rival and the extinction rate is
comfortably negative — a good smoke-test model for every subcommand.
"""

import argparse
import json
from pathlib import Path

MODEL = {
    "states": 2,
    "transition": [[0.98, 0.02], [0.02, 0.98]],
    "seed": 7,
    "market": {
        "K": 2,
        "r": 0.2,
        "dividends": [[0.95, 0.05], [0.05, 0.95]],
        "rival": [[0.5, 0.5], [0.5, 0.5]],
    },
}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("path", nargs="?", default="example_model.json",
                        help="where to write the JSON model (default: %(default)s)")
    args = parser.parse_args()
    target = Path(args.path)
    target.write_text(json.dumps(MODEL, indent=2) + "\n")
    print(f"wrote {target}")
    print("try:  rdstab certify --model", target, "--out certify_out --seeds 1,2,3")


if __name__ == "__main__":
    main()
