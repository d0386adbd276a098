#!/usr/bin/env python3
"""Desk-scale training experiments for the predictor and the scorer.

Trains the map predictor on synthetic triplets and the relational scorer on a
procedural tier set, evaluates both on held-out data and prints a JSON summary
with a pass flag per threshold.

Usage: python scripts/acceptance.py [--config configs/acceptance.json]
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from relational_iqa.config import load_config  # noqa: E402
from relational_iqa.experiments import run_experiments  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", type=Path, default=ROOT / "configs" / "acceptance.json")
    parser.add_argument("--verbose", "-v", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    summary = run_experiments(load_config(args.config))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0 if summary["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
