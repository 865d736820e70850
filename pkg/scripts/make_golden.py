"""Regenerate tests/golden from the synthetic end-to-end run.

Only run this after a deliberate behaviour change; the golden test compares
against these files byte for byte.
"""

import argparse
import hashlib
import shutil
import sys
import tempfile
from pathlib import Path

from vragloop.cli import main as cli_main

GOLDEN_FILES = ("trajectories.jsonl", "rewards.jsonl", "summary.json")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dest", default=str(Path(__file__).resolve().parent.parent / "tests" / "golden"))
    args = ap.parse_args()
    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        code = cli_main(["simulate", "--out", tmp])
        if code != 0:
            print(f"simulate exited with {code}", file=sys.stderr)
            return code
        for name in GOLDEN_FILES:
            shutil.copyfile(Path(tmp) / name, dest / name)
        digest = hashlib.sha256((Path(tmp) / "index.vidx").read_bytes()).hexdigest()
        (dest / "index.sha256").write_text(digest + "\n")
    print(f"golden files written to {dest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
