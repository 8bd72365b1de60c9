"""Train early fusion, TFN and RTN on the planted synthetic data over five
seeds and print the comparison table next to the oracle ceiling.

    python demos/ordering_experiment.py [--seeds 0,1,2,3,4] [--jobs N]
"""

import argparse
import tempfile
from pathlib import Path

from rtnlab.cli import main
from rtnlab.dataio import SynthConfig, product_oracle_accuracy


def run():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--jobs", default="1")
    args = ap.parse_args()
    print(f"oracle binary accuracy on val: {product_oracle_accuracy(SynthConfig()):.3f}\n")
    with tempfile.TemporaryDirectory() as tmp:
        data = Path(tmp) / "data"
        main(["gen-data", "--out", str(data)])
        return main(["compare", "--data", str(data), "--variants", "early_fusion,tfn,rtn",
                     "--seeds", args.seeds, "--jobs", args.jobs])


if __name__ == "__main__":
    raise SystemExit(run())
