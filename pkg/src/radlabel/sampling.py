"""Patient-exclusive stratified splitting and disagreement-driven sampling
for manual reference-set construction.

The splitter is a patient-level iterative stratification: the label with the
fewest remaining positive patients is placed first, each of its patients
going to the side with the greatest remaining per-label demand. The sampler
buckets reports into model-agreement combination categories (bit patterns
over an ordered model panel) and draws a seeded quota from each.
"""
from __future__ import annotations

import string
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .ingest import Corpus
from .schema import DataContractError, LabelSchema, PredictionSet, DEFAULT_SCHEMA

TRAIN = "train"
TEST = "test"


@dataclass
class SplitAssignment:
    patient_side: dict[str, str]
    report_side: dict[str, str]
    frequency_deviation: dict[str, float]  # test rate minus overall rate, per label

    def side_report_ids(self, side: str) -> list[str]:
        return sorted(rid for rid, s in self.report_side.items() if s == side)


def stratified_patient_split(
    corpus: Corpus,
    labels: Mapping[str, Mapping[str, int]],
    train_fraction: float,
    seed: int,
    schema: LabelSchema | None = None,
) -> SplitAssignment:
    """Split a corpus train/test at patient granularity while tracking
    per-label frequencies.

    Greedy iterative stratification: repeatedly take the label with the
    fewest remaining positive patients and assign each of its patients to
    the side with the greatest remaining demand for that label, breaking
    ties by overall remaining capacity and then seeded randomness. All of a
    patient's reports follow the patient.
    """
    schema = schema or DEFAULT_SCHEMA
    if not (0.0 < train_fraction < 1.0):
        raise DataContractError("train_fraction must be inside (0, 1)")
    missing = [r.report_id for r in corpus if r.report_id not in labels]
    if missing:
        raise DataContractError(f"reports without labels: {missing[:5]}")

    rng = np.random.default_rng(seed)
    patients: dict[str, list[str]] = defaultdict(list)
    for record in corpus:
        patients[record.patient_id].append(record.report_id)
    if len(patients) == 1:
        import logging

        logging.getLogger(__name__).warning(
            "single-patient corpus: split is trivially one-sided"
        )

    # A patient is positive for a label when any of their reports is.
    patient_labels: dict[str, set[str]] = {}
    for pid, rids in patients.items():
        positive = {
            lbl for rid in rids for lbl in schema.labels if labels[rid].get(lbl, 0) == 1
        }
        patient_labels[pid] = positive

    fractions = {TRAIN: train_fraction, TEST: 1.0 - train_fraction}
    capacity = {side: frac * len(patients) for side, frac in fractions.items()}
    demand: dict[str, dict[str, float]] = {
        lbl: {
            side: frac * sum(1 for p in patient_labels.values() if lbl in p)
            for side, frac in fractions.items()
        }
        for lbl in schema.labels
    }

    unassigned = set(patients)
    assignment: dict[str, str] = {}

    def assign(pid: str, side: str) -> None:
        assignment[pid] = side
        unassigned.discard(pid)
        capacity[side] -= 1
        for lbl in patient_labels[pid]:
            demand[lbl][side] -= 1

    while True:
        remaining_per_label = {
            lbl: [p for p in unassigned if lbl in patient_labels[p]]
            for lbl in schema.labels
        }
        candidates = {lbl: ps for lbl, ps in remaining_per_label.items() if ps}
        if not candidates:
            break
        label = min(candidates, key=lambda lbl: (len(candidates[lbl]), lbl))
        for pid in sorted(candidates[label]):
            if pid not in unassigned:
                continue
            sides = sorted(fractions)
            best_demand = max(demand[label][s] for s in sides)
            tied = [s for s in sides if demand[label][s] == best_demand]
            if len(tied) > 1:
                best_cap = max(capacity[s] for s in tied)
                tied = [s for s in tied if capacity[s] == best_cap]
            side = tied[0] if len(tied) == 1 else tied[int(rng.integers(len(tied)))]
            assign(pid, side)

    # Patients with no positive labels: fill by remaining capacity.
    for pid in sorted(unassigned):
        sides = sorted(fractions)
        best_cap = max(capacity[s] for s in sides)
        tied = [s for s in sides if capacity[s] == best_cap]
        side = tied[0] if len(tied) == 1 else tied[int(rng.integers(len(tied)))]
        assign(pid, side)

    report_side = {
        rid: assignment[pid] for pid, rids in patients.items() for rid in rids
    }

    n_reports = len(corpus)
    test_ids = [rid for rid, side in report_side.items() if side == TEST]
    deviation: dict[str, float] = {}
    for lbl in schema.labels:
        overall = sum(labels[r.report_id].get(lbl, 0) for r in corpus) / n_reports
        test_rate = (
            sum(labels[rid].get(lbl, 0) for rid in test_ids) / len(test_ids)
            if test_ids
            else 0.0
        )
        deviation[lbl] = test_rate - overall
    return SplitAssignment(
        patient_side=assignment, report_side=report_side, frequency_deviation=deviation
    )


@dataclass(frozen=True)
class CombinationCategory:
    """Agreement pattern of an ordered model panel on one label.

    The index packs the votes most-significant-first, so with three models
    the letters A..H correspond to patterns (0,0,0)..(1,1,1).
    """

    index: int
    pattern: tuple[int, ...]

    @property
    def letter(self) -> str:
        return string.ascii_uppercase[self.index]


def category_of(votes: Sequence[int]) -> CombinationCategory:
    index = 0
    for vote in votes:
        index = (index << 1) | int(vote)
    return CombinationCategory(index=index, pattern=tuple(int(v) for v in votes))


def combination_assign(
    preds: list[PredictionSet], label: str
) -> dict[str, CombinationCategory]:
    """Assign every report covered by all panel members to its combination
    category for one label."""
    if len(preds) < 2:
        raise DataContractError("combination categories need at least 2 models")
    shared = set.intersection(*(p.covered_ids() for p in preds))
    return {
        rid: category_of([p.predictions[rid].decisions[label] for p in preds])
        for rid in sorted(shared)
    }


@dataclass
class CategoryPrevalence:
    """Average share of covered reports per category across all labels."""

    panel: list[str]
    rows: list[tuple[CombinationCategory, float]] = field(default_factory=list)

    def as_percentages(self) -> dict[str, float]:
        return {cat.letter: share * 100.0 for cat, share in self.rows}


def category_prevalences(
    preds: list[PredictionSet], schema: LabelSchema | None = None
) -> CategoryPrevalence:
    schema = schema or DEFAULT_SCHEMA
    k = len(preds)
    totals = np.zeros(2**k)
    for label in schema.labels:
        assigned = combination_assign(preds, label)
        if not assigned:
            raise DataContractError("no reports covered by the full panel")
        counts = np.zeros(2**k)
        for cat in assigned.values():
            counts[cat.index] += 1
        totals += counts / len(assigned)
    shares = totals / len(schema.labels)
    patterns = [
        category_of([(idx >> (k - 1 - bit)) & 1 for bit in range(k)])
        for idx in range(2**k)
    ]
    return CategoryPrevalence(
        panel=[p.labeler_name for p in preds],
        rows=[(pat, float(share)) for pat, share in zip(patterns, shares)],
    )


def full_agreement_share(prevalences: Mapping[str, float]) -> float:
    """Combined share of the all-negative and all-positive categories.

    Input maps category letters to shares (any consistent unit); the first
    and last letters are the unanimous patterns.
    """
    if not prevalences:
        raise DataContractError("empty prevalence table")
    letters = sorted(prevalences)
    return prevalences[letters[0]] + prevalences[letters[-1]]


def sample_disagreement_set(
    preds: list[PredictionSet],
    per_category_quota: int,
    seed: int,
    schema: LabelSchema | None = None,
) -> list[str]:
    """Sample up to the quota from every (label, combination category) bucket.

    Sampling is uniform without replacement within each bucket under a seeded
    generator; the union is de-duplicated across labels and returned sorted.
    """
    schema = schema or DEFAULT_SCHEMA
    if per_category_quota < 0:
        raise DataContractError("quota must be >= 0")
    rng = np.random.default_rng(seed)
    selected: set[str] = set()
    for label in schema.labels:
        assigned = combination_assign(preds, label)
        buckets: dict[int, list[str]] = defaultdict(list)
        for rid in sorted(assigned):
            buckets[assigned[rid].index].append(rid)
        for index in sorted(buckets):
            members = buckets[index]
            take = min(per_category_quota, len(members))
            if take:
                picks = rng.choice(len(members), size=take, replace=False)
                selected.update(members[i] for i in picks)
    return sorted(selected)


def random_supplement(
    corpus: "Corpus | Sequence[str]", exclude: set[str], n: int, seed: int
) -> list[str]:
    """Seeded uniform sample (without replacement) of reports outside the
    excluded id set; accepts a corpus or a plain id pool."""
    ids = (r.report_id for r in corpus) if isinstance(corpus, Corpus) else iter(corpus)
    pool = sorted(rid for rid in ids if rid not in exclude)
    if n > len(pool):
        raise DataContractError(
            f"cannot sample {n} reports from a pool of {len(pool)}"
        )
    if n == 0:
        return []
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool), size=n, replace=False)
    return sorted(pool[i] for i in picks)
