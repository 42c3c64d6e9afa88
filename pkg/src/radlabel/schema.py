"""Canonical label schema and the shared data types for report labeling.

The label universe is fixed by a schema file: three organ systems, each
carrying four disease labels and one explicit-normal label, for 15 binary
labels total. Every labeler, ensemble, and metric in this package speaks
in terms of these types.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path


class DataContractError(Exception):
    """An input violated a documented file or value contract."""


@dataclass(frozen=True)
class OrganSystem:
    name: str
    disease_labels: tuple[str, ...]
    normal_label: str

    @property
    def labels(self) -> tuple[str, ...]:
        return self.disease_labels + (self.normal_label,)


@dataclass(frozen=True)
class LabelSchema:
    """Immutable label universe: ordered organ systems, 5 labels each."""

    organ_systems: tuple[OrganSystem, ...]

    def __post_init__(self) -> None:
        labels = [lbl for organ in self.organ_systems for lbl in organ.labels]
        if len(set(labels)) != len(labels):
            raise DataContractError("schema label names must be unique")
        for organ in self.organ_systems:
            if len(organ.disease_labels) != 4:
                raise DataContractError(
                    f"organ system {organ.name!r} must carry exactly 4 disease labels"
                )

    @property
    def labels(self) -> tuple[str, ...]:
        """All label names in canonical order (diseases then normal, per organ)."""
        return tuple(lbl for organ in self.organ_systems for lbl in organ.labels)

    @property
    def organ_names(self) -> tuple[str, ...]:
        return tuple(o.name for o in self.organ_systems)

    def organ_of(self, label: str) -> OrganSystem:
        for organ in self.organ_systems:
            if label in organ.labels:
                return organ
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {
            "organ_systems": [
                {
                    "name": o.name,
                    "disease_labels": list(o.disease_labels),
                    "normal_label": o.normal_label,
                }
                for o in self.organ_systems
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LabelSchema":
        try:
            organs = tuple(
                OrganSystem(
                    name=o["name"],
                    disease_labels=tuple(o["disease_labels"]),
                    normal_label=o["normal_label"],
                )
                for o in data["organ_systems"]
            )
        except (KeyError, TypeError) as exc:
            raise DataContractError(f"malformed schema document: {exc}") from exc
        return cls(organ_systems=organs)


def load_schema(path: str | Path | None = None) -> LabelSchema:
    """Load a schema file, or the embedded default when no path is given."""
    if path is None:
        text = resources.files("radlabel.data").joinpath("schema.json").read_text()
    else:
        text = Path(path).read_text()
    return LabelSchema.from_dict(json.loads(text))


def dump_schema(schema: LabelSchema, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n")


DEFAULT_SCHEMA = load_schema()
CANONICAL_LABELS = DEFAULT_SCHEMA.labels


@dataclass(frozen=True)
class ReportRecord:
    """One radiology report; ``findings`` is filled in by section extraction."""

    report_id: str
    patient_id: str
    raw_text: str
    findings: str | None = None
    flags: tuple[str, ...] = ()


@dataclass
class LabelVector:
    """Binary decision per canonical label plus per-organ uncertainty flags."""

    decisions: dict[str, int]
    uncertain: dict[str, bool] = field(default_factory=dict)

    def __getitem__(self, label: str) -> int:
        return self.decisions[label]

    @classmethod
    def from_bools(cls, values: dict[str, bool], schema: LabelSchema) -> "LabelVector":
        decisions = {lbl: int(bool(values[lbl])) for lbl in schema.labels}
        uncertain = {name: False for name in schema.organ_names}
        return cls(decisions=decisions, uncertain=uncertain)

    @classmethod
    def zeros(cls, schema: LabelSchema) -> "LabelVector":
        return cls(
            decisions={lbl: 0 for lbl in schema.labels},
            uncertain={name: False for name in schema.organ_names},
        )


@dataclass
class PredictionSet:
    """A named labeler's output: one LabelVector per labeled report plus an
    error ledger of (report_id, reason) for reports it could not label."""

    labeler_name: str
    predictions: dict[str, LabelVector] = field(default_factory=dict)
    errors: list[tuple[str, str]] = field(default_factory=list)

    def covered_ids(self) -> set[str]:
        return set(self.predictions)

    def error_ids(self) -> set[str]:
        return {rid for rid, _ in self.errors}

    def check_conservation(self, submitted: int) -> None:
        overlap = self.covered_ids() & self.error_ids()
        if overlap:
            raise DataContractError(
                f"report ids present in both predictions and errors: {sorted(overlap)[:5]}"
            )
        total = len(self.predictions) + len(self.errors)
        if total != submitted:
            raise DataContractError(
                f"prediction set covers {total} reports but {submitted} were submitted"
            )


NEGATIVE = "negative"
POSITIVE = "positive"
SUBJECTIVE = "subjective_mention"
TRISTATE_VALUES = (NEGATIVE, POSITIVE, SUBJECTIVE)


@dataclass(frozen=True)
class TriStateAnnotation:
    """A human annotator's decision for every canonical label on one report.

    ``subjective_mention`` marks findings that are textually present but not
    clinically actionable (dependent atelectasis, too-small-to-characterize
    lesions); the two reference views resolve it in opposite directions.
    """

    report_id: str
    annotator_id: str
    labels: dict[str, str]
    notes: dict[str, str] = field(default_factory=dict)
    timestamp: int = 0

    def validate(self, schema: LabelSchema) -> None:
        missing = [lbl for lbl in schema.labels if lbl not in self.labels]
        if missing:
            raise DataContractError(f"annotation missing labels: {missing}")
        extra = [lbl for lbl in self.labels if lbl not in schema.labels]
        if extra:
            raise DataContractError(f"annotation has unknown labels: {extra}")
        bad = {l: v for l, v in self.labels.items() if v not in TRISTATE_VALUES}
        if bad:
            raise DataContractError(f"annotation values out of range: {bad}")


def validate_label_vector(vector: LabelVector, schema: LabelSchema) -> list[str]:
    """Return a description of every invariant the vector violates.

    An empty list means the vector is well formed: decisions cover exactly
    the schema labels, uncertain organs carry all-zero labels, and a positive
    normal label excludes positives on that organ's disease labels.
    """
    violations: list[str] = []
    expected = set(schema.labels)
    got = set(vector.decisions)
    for missing in sorted(expected - got):
        violations.append(f"missing decision for label {missing!r}")
    for extra in sorted(got - expected):
        violations.append(f"unexpected label {extra!r}")
    for lbl in sorted(expected & got):
        if vector.decisions[lbl] not in (0, 1):
            violations.append(f"non-binary decision for {lbl!r}: {vector.decisions[lbl]!r}")
    for organ in schema.organ_systems:
        if not all(lbl in vector.decisions for lbl in organ.labels):
            continue
        values = {lbl: vector.decisions[lbl] for lbl in organ.labels}
        if vector.uncertain.get(organ.name, False) and any(values.values()):
            violations.append(
                f"organ {organ.name!r} flagged uncertain but has nonzero labels"
            )
        if values[organ.normal_label] == 1:
            positives = [l for l in organ.disease_labels if values[l] == 1]
            if positives:
                violations.append(
                    f"{organ.normal_label!r} set together with disease labels {positives}"
                )
    return violations


def project_labels(pred: PredictionSet, keep: list[str], schema: LabelSchema | None = None) -> PredictionSet:
    """Restrict a prediction set to a subset of canonical labels.

    Errors are preserved untouched; uncertainty flags are kept only for
    organ systems that still have at least one surviving label.
    """
    schema = schema or DEFAULT_SCHEMA
    unknown = [lbl for lbl in keep if lbl not in schema.labels]
    if unknown:
        raise DataContractError(f"unknown label names in keep set: {unknown}")
    keep_set = set(keep)
    kept_organs = {schema.organ_of(lbl).name for lbl in keep_set}
    projected: dict[str, LabelVector] = {}
    for rid, vec in pred.predictions.items():
        projected[rid] = LabelVector(
            decisions={l: v for l, v in vec.decisions.items() if l in keep_set},
            uncertain={o: f for o, f in vec.uncertain.items() if o in kept_organs},
        )
    return PredictionSet(
        labeler_name=pred.labeler_name,
        predictions=projected,
        errors=list(pred.errors),
    )
