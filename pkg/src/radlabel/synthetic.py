"""Seeded synthetic report corpora with known ground-truth labels.

Findings sentences are assembled from fixed clinical templates aligned with
the default lexicon, so the shipped fixture corpus exercises the whole
pipeline (sectioning, rule matching, negation, suppression, normality) with
a known expected label for every report. Not a substitute for real reports;
purely a test and demo instrument.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ingest import Corpus
from .schema import LabelSchema, ReportRecord, DEFAULT_SCHEMA

POSITIVE_TEMPLATES = {
    "Kidney Stone": "There is a nonobstructing stone in the left kidney.",
    "Kidney Atrophy": "The right kidney shows cortical atrophy.",
    "Kidney Lesion": "An enhancing lesion is seen in the right kidney.",
    "Kidney Cyst": "Simple cysts are noted in both kidneys.",
    "Gallstones": "Cholelithiasis is present without cholecystitis.",
    "Liver Lesion": "A hepatic lesion is identified in segment six.",
    "Biliary Dilatation": "There is intrahepatic biliary dilatation.",
    "Fatty Liver": "The liver shows diffuse steatosis.",
    "Lung Atelectasis": "Bibasilar atelectasis is present.",
    "Lung Nodules": "A small pulmonary nodule is seen in the right lower lobe.",
    "Lung Emphysema": "There is centrilobular emphysema in the upper lobes.",
    "Lung Pleural Effusion": "Small bilateral pleural effusions are present.",
}

NEGATED_TEMPLATES = {
    "Kidney Stone": "No renal stone is identified.",
    "Kidney Atrophy": "The kidneys show no atrophy.",
    "Kidney Lesion": "No solid renal lesion is identified.",
    "Kidney Cyst": "No renal cyst is seen.",
    "Gallstones": "No gallstones are seen.",
    "Liver Lesion": "No focal hepatic lesion is identified.",
    "Biliary Dilatation": "No biliary dilatation.",
    "Fatty Liver": "No hepatic steatosis.",
    "Lung Atelectasis": "No atelectasis is seen.",
    "Lung Nodules": "No pulmonary nodule is identified.",
    "Lung Emphysema": "No emphysema.",
    "Lung Pleural Effusion": "No pleural effusion.",
}

NORMAL_TEMPLATES = {
    "Kidneys/Ureters": "The kidneys are unremarkable.",
    "Liver/Gallbladder": "The liver is unremarkable.",
    "Lungs/Pleura": "The lungs are clear.",
}

# Findings that are textually present but not clinically actionable; the
# matching label stays 0 in the actionable truth and 1 in the mention truth.
MENTION_ONLY_TEMPLATES = {
    "Lung Atelectasis": "There is minimal dependent atelectasis at the lung bases.",
    "Kidney Lesion": (
        "There is a subcentimeter hypodense lesion in the kidney, too small to characterize."
    ),
}

NOISE_SENTENCES = (
    "Visualized osseous structures are intact.",
    "The examination extends from the thoracic inlet to the pubic symphysis.",
    "Surgical clips are noted in the right upper quadrant.",
    "There is no free fluid in the pelvis.",
)


@dataclass
class SyntheticCorpus:
    corpus: Corpus
    truth: dict[str, dict[str, int]]
    mention_only: dict[str, set[str]] = field(default_factory=dict)

    def mention_truth(self) -> dict[str, dict[str, int]]:
        """Truth with mention-only findings flipped to positive."""
        out = {rid: dict(row) for rid, row in self.truth.items()}
        for rid, labels in self.mention_only.items():
            for label in labels:
                out[rid][label] = 1
        return out


def generate_corpus(
    n_reports: int,
    seed: int,
    schema: LabelSchema | None = None,
    multi_report_patient_rate: float = 0.15,
    mention_only_rate: float = 0.06,
    no_findings_rate: float = 0.01,
    source: str = "synthetic",
) -> SyntheticCorpus:
    """Build a deterministic corpus of n_reports synthetic CT reports."""
    schema = schema or DEFAULT_SCHEMA
    rng = np.random.default_rng(seed)
    records: list[ReportRecord] = []
    truth: dict[str, dict[str, int]] = {}
    mention_only: dict[str, set[str]] = {}

    patient_counter = 0
    report_index = 0
    while report_index < n_reports:
        patient_counter += 1
        pid = f"P{patient_counter:05d}"
        reports_for_patient = 1
        if rng.random() < multi_report_patient_rate:
            reports_for_patient = int(rng.integers(2, 4))
        for _ in range(min(reports_for_patient, n_reports - report_index)):
            report_index += 1
            rid = f"R{report_index:05d}"
            record, labels, mentions = _one_report(rid, pid, rng, schema,
                                                   mention_only_rate, no_findings_rate)
            records.append(record)
            truth[rid] = labels
            if mentions:
                mention_only[rid] = mentions
    return SyntheticCorpus(
        corpus=Corpus(records=records, source=source),
        truth=truth,
        mention_only=mention_only,
    )


def _one_report(
    rid: str,
    pid: str,
    rng: np.random.Generator,
    schema: LabelSchema,
    mention_only_rate: float,
    no_findings_rate: float,
) -> tuple[ReportRecord, dict[str, int], set[str]]:
    labels = {lbl: 0 for lbl in schema.labels}
    mentions: set[str] = set()
    sentences: list[str] = []

    for organ in schema.organ_systems:
        roll = rng.random()
        if roll < 0.40:  # diseased organ
            n_diseases = 1 if rng.random() < 0.7 else 2
            picks = rng.choice(len(organ.disease_labels), size=n_diseases, replace=False)
            for pick in picks:
                label = organ.disease_labels[int(pick)]
                sentences.append(POSITIVE_TEMPLATES[label])
                labels[label] = 1
            if rng.random() < 0.4:
                others = [l for l in organ.disease_labels if labels[l] == 0]
                if others:
                    sentences.append(NEGATED_TEMPLATES[others[int(rng.integers(len(others)))]])
        elif roll < 0.75:  # explicitly normal organ
            if rng.random() < 0.5:
                pick = organ.disease_labels[int(rng.integers(4))]
                sentences.append(NEGATED_TEMPLATES[pick])
            sentences.append(NORMAL_TEMPLATES[organ.name])
            labels[organ.normal_label] = 1
        else:  # organ not mentioned
            pass

    for label, template in MENTION_ONLY_TEMPLATES.items():
        organ = schema.organ_of(label)
        # Only inject into reports where the organ carries no actionable
        # positives, keeping the actionable truth unambiguous.
        if labels[label] == 0 and rng.random() < mention_only_rate:
            if labels[organ.normal_label] == 1:
                continue
            sentences.append(template)
            mentions.add(label)

    if rng.random() < 0.5:
        sentences.append(NOISE_SENTENCES[int(rng.integers(len(NOISE_SENTENCES)))])
    order = rng.permutation(len(sentences))
    body = " ".join(sentences[i] for i in order) if sentences else "Stable examination."

    if rng.random() < no_findings_rate:
        raw = f"EXAM: CT chest abdomen pelvis. COMPARISON: none. {body}"
        labels = {lbl: 0 for lbl in schema.labels}
        mentions = set()
    else:
        raw = (
            f"EXAM: CT chest abdomen pelvis. TECHNIQUE: axial images. "
            f"FINDINGS: {body} IMPRESSION: See findings above."
        )
    record = ReportRecord(report_id=rid, patient_id=pid, raw_text=raw)
    return record, labels, mentions


def write_fixture(
    synthetic: SyntheticCorpus, reports_path, truth_path, schema: LabelSchema | None = None
) -> None:
    """Write the corpus as the standard JSONL + truth CSV fixture pair."""
    import json
    from pathlib import Path

    from .io import write_truth_csv

    with Path(reports_path).open("w") as handle:
        for record in synthetic.corpus:
            handle.write(
                json.dumps(
                    {
                        "report_id": record.report_id,
                        "patient_id": record.patient_id,
                        "text": record.raw_text,
                    }
                )
                + "\n"
            )
    write_truth_csv(synthetic.truth, truth_path, schema)
