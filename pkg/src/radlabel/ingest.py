"""Corpus loading, findings extraction, sentence segmentation, and TF-IDF
term suggestion.

Reports arrive as JSONL or CSV with ``report_id``, ``patient_id`` and
``text`` columns (an optional column-mapping config adapts foreign column
names). Only the findings section of each report feeds the labelers, so the
sectioner and the sentence splitter here define what the annotators see.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .schema import DataContractError, ReportRecord

log = logging.getLogger(__name__)

REQUIRED_FIELDS = ("report_id", "patient_id", "text")

# Section header aliases; both lists are case-insensitive and overridable.
FINDINGS_ALIASES = ("FINDINGS", "FINDING")
TERMINATOR_ALIASES = ("IMPRESSION", "CONCLUSION", "RECOMMENDATIONS", "RECOMMENDATION")

NO_FINDINGS_FLAG = "no-findings"

# Abbreviations whose trailing period never ends a sentence.
DEFAULT_PROTECTED_ABBREVIATIONS = ("dr", "mr", "ms", "vs", "approx", "e.g", "i.e", "cf")


@dataclass(frozen=True)
class Sentence:
    """One findings sentence with its character span into the findings text."""

    text: str
    index: int
    start: int
    end: int


@dataclass
class Corpus:
    records: list[ReportRecord]
    source: str = ""

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self) -> dict[str, ReportRecord]:
        return {r.report_id: r for r in self.records}


@dataclass(frozen=True)
class TermScore:
    term: str
    tfidf: float
    document_frequency: int


def load_column_mapping(path: str | Path) -> dict[str, str]:
    """Mapping config: JSON object of source column name -> canonical field."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in data.items()
    ):
        raise DataContractError(f"column mapping {path} must map strings to strings")
    return data


def _apply_mapping(row: dict, mapping: dict[str, str] | None) -> dict:
    if not mapping:
        return row
    out = dict(row)
    for src, dst in mapping.items():
        if src in out:
            out[dst] = out.pop(src)
    return out


def _record_from_row(row: dict, lineno: int) -> ReportRecord:
    for fieldname in REQUIRED_FIELDS:
        if fieldname not in row or row[fieldname] in (None, ""):
            raise DataContractError(f"line {lineno}: missing field {fieldname!r}")
    return ReportRecord(
        report_id=str(row["report_id"]),
        patient_id=str(row["patient_id"]),
        raw_text=str(row["text"]),
        findings=row.get("findings") or None,
    )


def load_reports(
    path: str | Path,
    format: str = "jsonl",
    mapping: dict[str, str] | None = None,
) -> Corpus:
    """Load a report corpus from JSONL or CSV.

    Duplicate report ids are a hard failure naming the id; a missing required
    field fails with the offending line number. An empty file yields an empty
    corpus with a warning.
    """
    path = Path(path)
    if format not in ("jsonl", "csv"):
        raise DataContractError(f"unsupported corpus format {format!r}")
    records: list[ReportRecord] = []
    seen: set[str] = set()

    if format == "jsonl":
        with path.open() as handle:
            for lineno, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataContractError(f"line {lineno}: invalid JSON: {exc}") from exc
                records.append(_record_from_row(_apply_mapping(row, mapping), lineno))
    else:
        with path.open(newline="") as handle:
            reader = csv.DictReader(handle)
            for lineno, row in enumerate(reader, start=2):
                records.append(_record_from_row(_apply_mapping(row, mapping), lineno))

    for record in records:
        if record.report_id in seen:
            raise DataContractError(f"duplicate report_id {record.report_id!r}")
        seen.add(record.report_id)

    if not records:
        log.warning("loaded empty corpus from %s", path)
    return Corpus(records=records, source=str(path))


def extract_findings(
    record: ReportRecord,
    header_aliases: tuple[str, ...] = FINDINGS_ALIASES,
    terminator_aliases: tuple[str, ...] = TERMINATOR_ALIASES,
) -> ReportRecord:
    """Extract the findings section: text between the first findings header
    and the next section header (or end of report).

    Header matching is case-insensitive over the alias lists and requires a
    trailing colon. A report with no findings header is returned flagged
    "no-findings" so downstream labelers can ledger it instead of silently
    labeling an empty string.
    """
    if not record.raw_text:
        raise DataContractError(f"report {record.report_id!r} has empty text")
    header_re = re.compile(
        r"\b(" + "|".join(re.escape(a) for a in header_aliases) + r")\s*:", re.IGNORECASE
    )
    match = header_re.search(record.raw_text)
    if match is None:
        return ReportRecord(
            report_id=record.report_id,
            patient_id=record.patient_id,
            raw_text=record.raw_text,
            findings=None,
            flags=record.flags + (NO_FINDINGS_FLAG,),
        )
    start = match.end()
    term_re = re.compile(
        r"\b(" + "|".join(re.escape(a) for a in terminator_aliases) + r")\s*:",
        re.IGNORECASE,
    )
    term = term_re.search(record.raw_text, pos=start)
    end = term.start() if term else len(record.raw_text)
    findings = record.raw_text[start:end].strip()
    return ReportRecord(
        report_id=record.report_id,
        patient_id=record.patient_id,
        raw_text=record.raw_text,
        findings=findings,
        flags=record.flags,
    )


_SPLIT_RE = re.compile(r"[.!?]+(?=\s)")


def segment_sentences(
    findings: str,
    protected_abbreviations: tuple[str, ...] = DEFAULT_PROTECTED_ABBREVIATIONS,
) -> list[Sentence]:
    """Split findings text on sentence-terminal punctuation followed by
    whitespace.

    Never splits inside decimal measurements (the period is not followed by
    whitespace), after a protected abbreviation, or after a numbered-list
    marker at the start of a line. Spans index into the findings string and
    whitespace between spans is the only text not covered.
    """
    if not findings:
        return []
    protected = {a.lower().rstrip(".") for a in protected_abbreviations}
    boundaries: list[int] = []
    for match in _SPLIT_RE.finditer(findings):
        prefix = findings[: match.start()]
        word_match = re.search(r"(\S+)$", prefix)
        word = word_match.group(1).lower() if word_match else ""
        word = word.lstrip("(\"'")
        if word in protected:
            continue
        if word.isdigit() and len(word) <= 2:
            # Numbered-list marker: digits at the start of a line.
            line_start = prefix.rfind("\n") + 1
            if prefix[line_start:].strip() == word:
                continue
        boundaries.append(match.end())

    sentences: list[Sentence] = []
    cursor = 0
    for boundary in boundaries + [len(findings)]:
        chunk = findings[cursor:boundary]
        stripped = chunk.strip()
        if stripped:
            lead = len(chunk) - len(chunk.lstrip())
            start = cursor + lead
            end = start + len(stripped)
            sentences.append(Sentence(text=stripped, index=len(sentences), start=start, end=end))
        cursor = boundary
    return sentences


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def tfidf_suggest_terms(corpus: Corpus, top_k: int, include_bigrams: bool = True) -> list[TermScore]:
    """Rank corpus terms (tokens and bigrams) for lexicon curation.

    Score per term: total term frequency times smoothed idf,
    ``tf * (ln((1 + N) / (1 + df)) + 1)``, so corpus-universal terms keep a
    nonzero score. Ties rank lexicographically.
    """
    if len(corpus) == 0:
        raise DataContractError("tfidf requires a non-empty corpus")
    if top_k < 1:
        raise DataContractError("top_k must be >= 1")
    n_docs = len(corpus)
    tf: Counter[str] = Counter()
    df: Counter[str] = Counter()
    for record in corpus:
        text = record.findings if record.findings else record.raw_text
        tokens = _tokenize(text)
        terms = list(tokens)
        if include_bigrams:
            terms += [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
        tf.update(terms)
        df.update(set(terms))
    scored = [
        TermScore(
            term=term,
            tfidf=tf[term] * (math.log((1 + n_docs) / (1 + df[term])) + 1.0),
            document_frequency=df[term],
        )
        for term in tf
    ]
    scored.sort(key=lambda s: (-s.tfidf, s.term))
    return scored[:top_k]
