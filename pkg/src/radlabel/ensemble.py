"""Unweighted majority-vote combination of prediction sets.

Every member model contributes one equal vote per label; a report is voted
on only when every member labeled it, so compared systems keep an identical
denominator.
"""
from __future__ import annotations

from .schema import (
    DataContractError,
    LabelSchema,
    LabelVector,
    PredictionSet,
    DEFAULT_SCHEMA,
)

TIE_NEGATIVE = "negative"
TIE_POSITIVE = "positive"
TIE_REJECT_EVEN = "reject_even"
TIE_POLICIES = (TIE_NEGATIVE, TIE_POSITIVE, TIE_REJECT_EVEN)


def _resolve(votes: list[int], tie_policy: str, context: str) -> int:
    positives = sum(votes)
    negatives = len(votes) - positives
    if positives > negatives:
        return 1
    if positives < negatives:
        return 0
    if tie_policy == TIE_POSITIVE:
        return 1
    if tie_policy == TIE_REJECT_EVEN:
        raise DataContractError(f"tie with an even panel at {context}")
    return 0


def majority_vote(
    preds: list[PredictionSet],
    tie_policy: str = TIE_NEGATIVE,
    schema: LabelSchema | None = None,
) -> PredictionSet:
    """Combine two or more prediction sets by per-label majority vote.

    Output is 1 iff strictly more than half of the members vote 1; exact
    ties follow the tie policy (default negative). Reports errored by any
    member are excluded with reason "incomplete-panel". Uncertainty flags
    are combined the same way as label votes.
    """
    schema = schema or DEFAULT_SCHEMA
    if len(preds) < 2:
        raise DataContractError("majority vote needs at least 2 prediction sets")
    if tie_policy not in TIE_POLICIES:
        raise DataContractError(f"unknown tie policy {tie_policy!r}")

    name = "ensemble(" + ",".join(p.labeler_name for p in preds) + ")"
    out = PredictionSet(labeler_name=name)

    all_ids = set()
    for pred in preds:
        all_ids |= pred.covered_ids() | pred.error_ids()
    shared = set.intersection(*(p.covered_ids() for p in preds))

    for rid in sorted(all_ids - shared):
        out.errors.append((rid, "incomplete-panel"))
    for rid in sorted(shared):
        members = [p.predictions[rid] for p in preds]
        decisions = {
            label: _resolve(
                [m.decisions[label] for m in members], tie_policy, f"{rid}/{label}"
            )
            for label in schema.labels
        }
        uncertain = {
            organ: bool(
                _resolve(
                    [int(m.uncertain.get(organ, False)) for m in members],
                    tie_policy,
                    f"{rid}/uncertain[{organ}]",
                )
            )
            for organ in schema.organ_names
        }
        out.predictions[rid] = LabelVector(decisions=decisions, uncertain=uncertain)
    return out
