"""Shared bits for the experiment scripts."""

import argparse
import json
from pathlib import Path

from homove.objective import Weights

W91 = Weights.pp_rlf(9, 1)
STREETS = range(5)


def parser(doc: str, seeds: int = 5) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=doc)
    p.add_argument("--seeds", type=int, default=seeds, help="number of seeds (0..n-1)")
    p.add_argument("--out", type=Path, default=None, help="write a JSON summary here")
    return p


def dump(summary: dict, out: Path | None) -> None:
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(summary, indent=2, sort_keys=True))
