"""File formats shared across the pipeline.

Predictions travel as JSONL (one object per report, error ledger entries
included); reference labels as CSV with one column per canonical label;
metric and kappa tables as CSV with floats fixed to 6 decimal places so
identical inputs always produce byte-identical outputs.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Mapping

from .metrics import F1Report, MetricWithCI, PairKappa, kappa_band
from .sampling import CategoryPrevalence, SplitAssignment
from .schema import (
    DataContractError,
    LabelSchema,
    LabelVector,
    PredictionSet,
    DEFAULT_SCHEMA,
)

FLOAT_FORMAT = "{:.6f}"


def _fmt(x: float | None) -> str:
    return "" if x is None else FLOAT_FORMAT.format(x)


def write_predictions_jsonl(
    pred: PredictionSet,
    path: str | Path,
    statuses: Mapping[str, str] | None = None,
    schema: LabelSchema | None = None,
) -> None:
    schema = schema or DEFAULT_SCHEMA
    statuses = statuses or {}
    with Path(path).open("w") as handle:
        for rid in sorted(pred.predictions):
            vector = pred.predictions[rid]
            row = {
                "report_id": rid,
                "labeler": pred.labeler_name,
                "decisions": {lbl: vector.decisions[lbl] for lbl in schema.labels},
                "status": statuses.get(rid, "ok"),
                "uncertain": {
                    organ: bool(vector.uncertain.get(organ, False))
                    for organ in schema.organ_names
                },
            }
            handle.write(json.dumps(row) + "\n")
        for rid, reason in sorted(pred.errors):
            handle.write(
                json.dumps({"report_id": rid, "labeler": pred.labeler_name, "error": reason})
                + "\n"
            )


def read_predictions_jsonl(path: str | Path, schema: LabelSchema | None = None) -> PredictionSet:
    schema = schema or DEFAULT_SCHEMA
    labeler = None
    predictions: dict[str, LabelVector] = {}
    errors: list[tuple[str, str]] = []
    with Path(path).open() as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            labeler = labeler or row.get("labeler")
            rid = row.get("report_id")
            if rid is None:
                raise DataContractError(f"{path}:{lineno}: missing report_id")
            if "error" in row:
                errors.append((rid, row["error"]))
                continue
            decisions = row.get("decisions", {})
            missing = [lbl for lbl in schema.labels if lbl not in decisions]
            if missing:
                raise DataContractError(f"{path}:{lineno}: missing decisions {missing}")
            predictions[rid] = LabelVector(
                decisions={lbl: int(decisions[lbl]) for lbl in schema.labels},
                uncertain={
                    organ: bool(row.get("uncertain", {}).get(organ, False))
                    for organ in schema.organ_names
                },
            )
    return PredictionSet(
        labeler_name=labeler or Path(path).stem, predictions=predictions, errors=errors
    )


def _write_truth_rows(handle, truth: Mapping[str, Mapping[str, int]], schema: LabelSchema) -> None:
    writer = csv.writer(handle)
    writer.writerow(["report_id", *schema.labels])
    for rid in sorted(truth):
        writer.writerow([rid, *(int(truth[rid].get(lbl, 0)) for lbl in schema.labels)])


def write_truth_csv(
    truth: Mapping[str, Mapping[str, int]],
    path: str | Path,
    schema: LabelSchema | None = None,
) -> None:
    schema = schema or DEFAULT_SCHEMA
    with Path(path).open("w", newline="") as handle:
        _write_truth_rows(handle, truth, schema)


def truth_csv_text(
    truth: Mapping[str, Mapping[str, int]], schema: LabelSchema | None = None
) -> str:
    schema = schema or DEFAULT_SCHEMA
    buffer = io.StringIO()
    _write_truth_rows(buffer, truth, schema)
    return buffer.getvalue()


def read_truth_csv(path: str | Path, schema: LabelSchema | None = None) -> dict[str, dict[str, int]]:
    schema = schema or DEFAULT_SCHEMA
    truth: dict[str, dict[str, int]] = {}
    with Path(path).open(newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or "report_id" not in reader.fieldnames:
            raise DataContractError(f"{path}: missing report_id column")
        missing = [lbl for lbl in schema.labels if lbl not in reader.fieldnames]
        if missing:
            raise DataContractError(f"{path}: missing label columns {missing}")
        for row in reader:
            rid = row["report_id"]
            if rid in truth:
                raise DataContractError(f"{path}: duplicate report_id {rid!r}")
            truth[rid] = {lbl: int(row[lbl]) for lbl in schema.labels}
    return truth


def write_metrics_csv(
    report: F1Report,
    path: str | Path,
    cis: Mapping[str, MetricWithCI] | None = None,
) -> None:
    """Metric table: one row per label plus micro and macro summary rows."""
    cis = cis or {}

    def ci_cells(key: str) -> tuple[str, str]:
        ci = cis.get(key)
        return (_fmt(ci.ci_low), _fmt(ci.ci_high)) if ci else ("", "")

    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["label", "tp", "fp", "fn", "tn", "f1", "ci_low", "ci_high"])
        for label in report.labels:
            c = report.counts[label]
            lo, hi = ci_cells(label)
            writer.writerow(
                [label, c.tp, c.fp, c.fn, c.tn, _fmt(report.per_label[label]), lo, hi]
            )
        tp = sum(c.tp for c in report.counts.values())
        fp = sum(c.fp for c in report.counts.values())
        fn = sum(c.fn for c in report.counts.values())
        tn = sum(c.tn for c in report.counts.values())
        lo, hi = ci_cells("micro")
        writer.writerow(["micro", tp, fp, fn, tn, _fmt(report.micro), lo, hi])
        lo, hi = ci_cells("macro")
        writer.writerow(["macro", "", "", "", "", _fmt(report.macro), lo, hi])


def write_kappa_csv(pairs: Iterable[PairKappa], path: str | Path) -> None:
    """Kappa table: per-label rows, then median/IQR summary rows per pair."""
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["model_a", "model_b", "label", "kappa", "band"])
        for pair in pairs:
            if not pair.available:
                writer.writerow([pair.model_a, pair.model_b, "(unavailable)", "", ""])
                continue
            for label, result in pair.per_label.items():
                writer.writerow(
                    [pair.model_a, pair.model_b, label, _fmt(result.kappa), result.band]
                )
            for key, value in (
                ("(median)", pair.median),
                ("(iqr_low)", pair.iqr_low),
                ("(iqr_high)", pair.iqr_high),
            ):
                writer.writerow(
                    [pair.model_a, pair.model_b, key, _fmt(value), kappa_band(value)]
                )


def write_split_csv(split: SplitAssignment, corpus_patients: Mapping[str, str], path: str | Path) -> None:
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["report_id", "patient_id", "side"])
        for rid in sorted(split.report_side):
            writer.writerow([rid, corpus_patients[rid], split.report_side[rid]])


def write_prevalence_csv(prevalence: CategoryPrevalence, path: str | Path) -> None:
    """Combination-category table: pattern bits per panel member plus the
    average prevalence percentage."""
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["category", *prevalence.panel, "avg_prevalence_pct"])
        for cat, share in prevalence.rows:
            writer.writerow([cat.letter, *cat.pattern, _fmt(share * 100.0)])


def read_prevalence_csv(path: str | Path) -> dict[str, float]:
    with Path(path).open(newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or "avg_prevalence_pct" not in reader.fieldnames:
            raise DataContractError(f"{path}: missing avg_prevalence_pct column")
        return {row["category"]: float(row["avg_prevalence_pct"]) for row in reader}


def write_corpus_jsonl(corpus, path: str | Path) -> None:
    """Canonical corpus form: records with any extracted findings and flags."""
    with Path(path).open("w") as handle:
        for record in corpus:
            handle.write(
                json.dumps(
                    {
                        "report_id": record.report_id,
                        "patient_id": record.patient_id,
                        "text": record.raw_text,
                        "findings": record.findings,
                        "flags": list(record.flags),
                    }
                )
                + "\n"
            )


def read_corpus_jsonl(path: str | Path):
    from .ingest import Corpus
    from .schema import ReportRecord

    records = []
    with Path(path).open() as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            try:
                records.append(
                    ReportRecord(
                        report_id=row["report_id"],
                        patient_id=row["patient_id"],
                        raw_text=row["text"],
                        findings=row.get("findings"),
                        flags=tuple(row.get("flags", ())),
                    )
                )
            except KeyError as exc:
                raise DataContractError(f"{path}:{lineno}: missing field {exc}") from exc
    return Corpus(records=records, source=str(path))


def write_ids_txt(ids: Iterable[str], path: str | Path) -> None:
    Path(path).write_text("".join(f"{rid}\n" for rid in ids))


def read_ids_txt(path: str | Path) -> list[str]:
    return [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]


def write_completions_jsonl(completions, path: str | Path) -> None:
    with Path(path).open("w") as handle:
        for item in completions:
            handle.write(
                json.dumps(
                    {
                        "report_id": item.report_id,
                        "raw_text": item.raw_text,
                        "parse_status": item.parse_status,
                        "attempts": item.attempts,
                        "reason": item.reason,
                    }
                )
                + "\n"
            )
