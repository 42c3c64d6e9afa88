#!/usr/bin/env python3
"""Serve a stand-in chat-completions endpoint that replays a labels CSV.

Lets the `radlabel llm` subcommand run without model weights: point
RL_LLM_BASE_URL at this server and it answers each report with the labels
from the CSV, optionally flipping each bit with a seeded probability to
emulate an imperfect model.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from radlabel.io import read_truth_csv
from radlabel.llm import serialize_completion
from radlabel.schema import DEFAULT_SCHEMA, LabelVector
from radlabel.stubserver import StubChatServer


def build_responder(labels_path: str, flip_rate: float, seed: int):
    truth = read_truth_csv(labels_path)
    schema = DEFAULT_SCHEMA

    def respond(report_id: str, _user_text: str) -> str:
        row = truth.get(report_id)
        if row is None:
            return f"no labels on file for subject {report_id}"
        rng = np.random.default_rng((seed, hash(report_id) & 0xFFFF))
        decisions = {
            lbl: int(row[lbl]) ^ int(rng.random() < flip_rate) for lbl in schema.labels
        }
        vector = LabelVector(decisions=decisions)
        return serialize_completion(vector, report_id, schema)

    return respond


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--labels", required=True, help="labels CSV to replay")
    parser.add_argument("--flip-rate", type=float, default=0.0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    with StubChatServer(build_responder(args.labels, args.flip_rate, args.seed)) as server:
        print(f"stub endpoint ready: RL_LLM_BASE_URL={server.base_url}")
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            pass


if __name__ == "__main__":
    main()
