"""Sweep window size and top-k over the synthetic corpus and print a metrics table.

The scripted policy does not look at the context, so the sweep mostly shows
how top-k changes retrieval (and so the rewards); window size only changes
how many images each prompt would carry. The script was written against
top_k=3; with other values a query can run past its rules, which shows up as
a failed sample (Exhausted) rather than a crash.
"""

import argparse
import itertools
import json
import sys
import tempfile
from pathlib import Path

from vragloop.cli import main as cli_main
from vragloop.synthetic import write_corpus

COLUMNS = ("finish_rate", "invalid_action_rate", "completeness", "avg_retrieved", "accuracy", "mean_total_reward")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--windows", type=int, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("--top-k", type=int, nargs="+", default=[1, 3, 5])
    ap.add_argument("--workers", type=int, default=4)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        paths = write_corpus(tmp / "corpus")
        index = tmp / "index.vidx"
        if cli_main(["index", "--manifest", str(paths["manifest"]), "--out", str(index)]) != 0:
            return 1
        print("window top_k " + " ".join(f"{c:>19}" for c in COLUMNS))
        for window, k in itertools.product(args.windows, args.top_k):
            out = tmp / f"w{window}_k{k}"
            code = cli_main(["run", "--config", str(paths["config"]), "--eval", str(paths["eval"]),
                             "--index", str(index), "--manifest", str(paths["manifest"]), "--out", str(out),
                             "--window-size", str(window), "--top-k", str(k), "--workers", str(args.workers)])
            if code == 2:
                return code
            summary = json.loads((out / "summary.json").read_text())
            cells = " ".join(f"{summary.get(c, float('nan')):>19.4f}" for c in COLUMNS)
            print(f"{window:>6} {k:>5} {cells}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
