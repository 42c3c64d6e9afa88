"""Term inventory for the rule-based annotator.

Five term categories drive the annotator: organ anchors that establish
context, single-organ descriptors that fire on their own, multi-organ
descriptors that need organ context, negation and qualifier terms, and
per-organ normal terms. Suppressor phrases additionally discount specific
descriptor hits (e.g. "dependent" next to atelectasis).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .schema import DataContractError, LabelSchema, DEFAULT_SCHEMA


class LexiconError(DataContractError):
    """The lexicon file is malformed or inconsistent with the schema."""


@dataclass(frozen=True)
class LabelTerms:
    single_organ_descriptors: tuple[str, ...] = ()
    multi_organ_descriptors: tuple[str, ...] = ()
    suppressor_phrases: tuple[str, ...] = ()


@dataclass(frozen=True)
class OrganTerms:
    anchors: tuple[str, ...]
    normal_terms: tuple[str, ...]
    labels: dict[str, LabelTerms] = field(default_factory=dict)


@dataclass(frozen=True)
class Lexicon:
    negation_terms: tuple[str, ...]
    qualifier_terms: tuple[str, ...]
    organ_systems: dict[str, OrganTerms]
    suppressor_window: int = 3

    def label_terms(self, label: str) -> LabelTerms:
        for organ in self.organ_systems.values():
            if label in organ.labels:
                return organ.labels[label]
        raise KeyError(label)


def _lower_terms(values, context: str) -> tuple[str, ...]:
    out = []
    for value in values:
        if not isinstance(value, str) or not value.strip():
            raise LexiconError(f"{context}: terms must be non-empty strings")
        out.append(value.strip().lower())
    return tuple(out)


def load_lexicon(path: str | Path | None = None, schema: LabelSchema | None = None) -> Lexicon:
    """Load and validate a lexicon file (the embedded default when path is None).

    Every schema disease label must own at least one descriptor, every organ
    system at least one anchor and one normal term; unknown organ or label
    names are rejected by name. Terms are normalized to lowercase.
    """
    schema = schema or DEFAULT_SCHEMA
    if path is None:
        text = resources.files("radlabel.data").joinpath("lexicon.json").read_text()
    else:
        text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LexiconError(f"lexicon is not valid JSON: {exc}") from exc

    organs_raw = data.get("organ_systems", {})
    known_organs = set(schema.organ_names)
    unknown_organs = sorted(set(organs_raw) - known_organs)
    if unknown_organs:
        raise LexiconError(f"lexicon references unknown organ systems: {unknown_organs}")
    missing_organs = sorted(known_organs - set(organs_raw))
    if missing_organs:
        raise LexiconError(f"lexicon missing organ systems: {missing_organs}")

    organ_systems: dict[str, OrganTerms] = {}
    for organ in schema.organ_systems:
        raw = organs_raw[organ.name]
        anchors = _lower_terms(raw.get("anchors", ()), f"{organ.name} anchors")
        normal_terms = _lower_terms(raw.get("normal_terms", ()), f"{organ.name} normal terms")
        if not anchors:
            raise LexiconError(f"organ system {organ.name!r} has no anchor terms")
        if not normal_terms:
            raise LexiconError(f"organ system {organ.name!r} has no normal terms")
        labels_raw = raw.get("labels", {})
        unknown_labels = sorted(set(labels_raw) - set(organ.disease_labels))
        if unknown_labels:
            raise LexiconError(
                f"lexicon references unknown labels under {organ.name!r}: {unknown_labels}"
            )
        label_terms: dict[str, LabelTerms] = {}
        for label in organ.disease_labels:
            entry = labels_raw.get(label)
            if entry is None:
                raise LexiconError(f"lexicon missing terms for label {label!r}")
            terms = LabelTerms(
                single_organ_descriptors=_lower_terms(
                    entry.get("single_organ_descriptors", ()), label
                ),
                multi_organ_descriptors=_lower_terms(
                    entry.get("multi_organ_descriptors", ()), label
                ),
                suppressor_phrases=_lower_terms(entry.get("suppressor_phrases", ()), label),
            )
            if not terms.single_organ_descriptors and not terms.multi_organ_descriptors:
                raise LexiconError(f"label {label!r} has no descriptors and could never fire")
            label_terms[label] = terms
        organ_systems[organ.name] = OrganTerms(
            anchors=anchors, normal_terms=normal_terms, labels=label_terms
        )

    window = data.get("suppressor_window", 3)
    if not isinstance(window, int) or window < 0:
        raise LexiconError(f"suppressor_window must be a non-negative integer, got {window!r}")

    return Lexicon(
        negation_terms=_lower_terms(data.get("negation_terms", ()), "negation terms"),
        qualifier_terms=_lower_terms(data.get("qualifier_terms", ()), "qualifier terms"),
        organ_systems=organ_systems,
        suppressor_window=window,
    )
