#!/usr/bin/env python3
"""Regenerate the shipped synthetic fixture corpus (reports + truth labels)."""
from __future__ import annotations

import argparse
from pathlib import Path

from radlabel.synthetic import generate_corpus, write_fixture


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-reports", type=int, default=200)
    parser.add_argument("--seed", type=int, default=1789)
    parser.add_argument("--out-dir", default="data")
    args = parser.parse_args()

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    synthetic = generate_corpus(args.n_reports, seed=args.seed)
    reports = out_dir / "synthetic_reports.jsonl"
    truth = out_dir / "synthetic_truth.csv"
    write_fixture(synthetic, reports, truth)
    patients = len({r.patient_id for r in synthetic.corpus})
    print(f"wrote {len(synthetic.corpus)} reports from {patients} patients")
    print(f"  {reports}\n  {truth}")


if __name__ == "__main__":
    main()
