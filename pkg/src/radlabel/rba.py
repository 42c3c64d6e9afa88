"""Rule-based annotator: per-sentence descriptor matching with negation,
suppression and qualifier handling, then per-organ resolution into
disease / normal / uncertain.

Resolution per organ system:
  * a disease label is positive iff at least one sentence asserts one of its
    descriptors (not negated, not suppressed);
  * the normal label is positive only if all four diseases were ruled out
    (explicitly negated somewhere, or never mentioned) and a normal term was
    found for the organ in a sentence without qualifier terms;
  * otherwise the organ is uncertain: all five labels zero, flag set.

Matching is whole-word and case-insensitive with simple plural folding.
Negation scope is the whole sentence to the left of the descriptor;
suppressor phrases act within a configurable token window around it.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .ingest import Corpus, Sentence, segment_sentences
from .lexicon import Lexicon
from .schema import (
    DataContractError,
    LabelSchema,
    LabelVector,
    PredictionSet,
    ReportRecord,
    DEFAULT_SCHEMA,
)

ASSERTED = "asserted"
NEGATED = "negated"
SUPPRESSED = "suppressed"

ANCHOR_SOURCE = "anchor-in-sentence"
SUBHEADER_SOURCE = "subheader"


@dataclass(frozen=True)
class SentenceFinding:
    """One descriptor or normal-term hit inside one sentence."""

    sentence_index: int
    label: str
    polarity: str
    matched_term: str
    context_source: str | None = None
    is_normal_hit: bool = False
    low_confidence: bool = False


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _fold_candidates(token: str) -> set[str]:
    """Singular candidates for a token under a static plural suffix rule set."""
    candidates = {token}
    if token.endswith("ies") and len(token) > 4:
        candidates.add(token[:-3] + "y")
    if token.endswith("es") and len(token) > 3:
        candidates.add(token[:-2])
    if token.endswith("s") and not token.endswith("ss") and len(token) > 3:
        candidates.add(token[:-1])
    return candidates


def _match_positions(tokens: list[str], term: str) -> list[tuple[int, int]]:
    """All (start, end) token spans where the term's tokens match, with
    plural folding applied to the sentence side."""
    term_tokens = _tokenize(term)
    if not term_tokens:
        return []
    spans = []
    for i in range(len(tokens) - len(term_tokens) + 1):
        if all(
            term_tokens[j] in _fold_candidates(tokens[i + j])
            for j in range(len(term_tokens))
        ):
            spans.append((i, i + len(term_tokens)))
    return spans


def _first_positions(tokens: list[str], terms: tuple[str, ...]) -> list[tuple[int, int, str]]:
    hits = []
    for term in terms:
        for start, end in _match_positions(tokens, term):
            hits.append((start, end, term))
    return hits


def subheader_regions(findings: str, lex: Lexicon) -> list[tuple[int, int, str]]:
    """Character regions of findings governed by an organ subheader line.

    A line consisting of anchor terms plus ':' (e.g. "LUNGS:") activates that
    organ until the next subheader or blank line.
    """
    regions: list[tuple[int, int, str]] = []
    active: str | None = None
    region_start = 0
    offset = 0
    for line in findings.splitlines(keepends=True):
        stripped = line.strip()
        if active is not None and not stripped:
            regions.append((region_start, offset, active))
            active = None
        header = re.fullmatch(r"([^:]+):", stripped) if stripped else None
        if header:
            tokens = _tokenize(header.group(1))
            owners = {
                name
                for name, organ in lex.organ_systems.items()
                if tokens
                and all(
                    any(cand in organ.anchors for cand in _fold_candidates(t))
                    for t in tokens
                )
            }
            if len(owners) == 1:
                if active is not None:
                    regions.append((region_start, offset, active))
                active = owners.pop()
                region_start = offset
        offset += len(line)
    if active is not None:
        regions.append((region_start, len(findings), active))
    return regions


def _active_organ(regions: list[tuple[int, int, str]], position: int) -> str | None:
    for start, end, organ in regions:
        if start <= position < end:
            return organ
    return None


def classify_sentence(
    sentence: Sentence,
    active_subheader_organ: str | None,
    lex: Lexicon,
    schema: LabelSchema | None = None,
) -> list[SentenceFinding]:
    """Match one sentence against the lexicon.

    Single-organ descriptors fire unconditionally; multi-organ descriptors
    need an organ anchor in the sentence or an active subheader. A finding is
    negated when a negation term precedes the descriptor, suppressed when a
    suppressor phrase for its label sits within the configured token window.
    Normal-term hits attach to each organ whose anchor co-occurs (or to the
    subheader organ) and are low-confidence when a qualifier term is present.
    """
    schema = schema or DEFAULT_SCHEMA
    tokens = _tokenize(sentence.text)
    if not tokens:
        return []
    negation_positions = [s for s, _e, _t in _first_positions(tokens, lex.negation_terms)]
    has_qualifier = bool(_first_positions(tokens, lex.qualifier_terms))

    anchored: dict[str, bool] = {}
    for organ_name, organ in lex.organ_systems.items():
        anchored[organ_name] = bool(_first_positions(tokens, organ.anchors))

    findings: list[SentenceFinding] = []
    for organ_name, organ in lex.organ_systems.items():
        for label, terms in organ.labels.items():
            matches: list[tuple[int, int, str, str | None]] = []
            for start, end, term in _first_positions(tokens, terms.single_organ_descriptors):
                source = ANCHOR_SOURCE if anchored[organ_name] else (
                    SUBHEADER_SOURCE if active_subheader_organ == organ_name else None
                )
                matches.append((start, end, term, source))
            for start, end, term in _first_positions(tokens, terms.multi_organ_descriptors):
                if anchored[organ_name]:
                    matches.append((start, end, term, ANCHOR_SOURCE))
                elif active_subheader_organ == organ_name:
                    matches.append((start, end, term, SUBHEADER_SOURCE))
            suppressor_spans = _first_positions(tokens, terms.suppressor_phrases)
            for start, end, term, source in matches:
                if any(pos < start for pos in negation_positions):
                    polarity = NEGATED
                elif any(
                    min(abs(start - s_end), abs(s_start - end)) <= lex.suppressor_window
                    or (s_start < end and start < s_end)
                    for s_start, s_end, _ in suppressor_spans
                ):
                    polarity = SUPPRESSED
                else:
                    polarity = ASSERTED
                findings.append(
                    SentenceFinding(
                        sentence_index=sentence.index,
                        label=label,
                        polarity=polarity,
                        matched_term=term,
                        context_source=source,
                        low_confidence=has_qualifier,
                    )
                )
        normal_hits = _first_positions(tokens, organ.normal_terms)
        if normal_hits:
            source = None
            if anchored[organ_name]:
                source = ANCHOR_SOURCE
            elif active_subheader_organ == organ_name:
                source = SUBHEADER_SOURCE
            if source is not None:
                normal_label = _normal_label_for(organ_name, schema)
                for _start, _end, term in normal_hits:
                    findings.append(
                        SentenceFinding(
                            sentence_index=sentence.index,
                            label=normal_label,
                            polarity=ASSERTED,
                            matched_term=term,
                            context_source=source,
                            is_normal_hit=True,
                            low_confidence=has_qualifier,
                        )
                    )
    return findings


def _normal_label_for(organ_name: str, schema: LabelSchema) -> str:
    for organ in schema.organ_systems:
        if organ.name == organ_name:
            return organ.normal_label
    raise KeyError(organ_name)


def classify_report(
    record: ReportRecord,
    lex: Lexicon,
    schema: LabelSchema | None = None,
) -> LabelVector:
    """Run the annotator over every findings sentence and resolve each organ."""
    schema = schema or DEFAULT_SCHEMA
    if record.findings is None:
        raise DataContractError(f"report {record.report_id!r} has no findings section")
    sentences = segment_sentences(record.findings)
    regions = subheader_regions(record.findings, lex)

    all_findings: list[SentenceFinding] = []
    for sentence in sentences:
        organ_ctx = _active_organ(regions, sentence.start)
        all_findings.extend(classify_sentence(sentence, organ_ctx, lex, schema))

    decisions: dict[str, int] = {lbl: 0 for lbl in schema.labels}
    uncertain: dict[str, bool] = {}
    for organ in schema.organ_systems:
        asserted_any = False
        all_ruled_out = True
        for label in organ.disease_labels:
            hits = [f for f in all_findings if f.label == label and not f.is_normal_hit]
            if any(f.polarity == ASSERTED for f in hits):
                decisions[label] = 1
                asserted_any = True
            # Ruled out: never mentioned, or explicitly negated somewhere.
            if hits and not any(f.polarity == NEGATED for f in hits):
                all_ruled_out = False
        normal_confirmed = any(
            f.is_normal_hit and f.label == organ.normal_label and not f.low_confidence
            for f in all_findings
        )
        if asserted_any:
            uncertain[organ.name] = False
        elif all_ruled_out and normal_confirmed:
            decisions[organ.normal_label] = 1
            uncertain[organ.name] = False
        else:
            uncertain[organ.name] = True
    return LabelVector(decisions=decisions, uncertain=uncertain)


def label_corpus(
    corpus: Corpus,
    lex: Lexicon,
    schema: LabelSchema | None = None,
    labeler_name: str = "rba",
) -> PredictionSet:
    """Label every corpus report; reports without findings go to the error ledger."""
    schema = schema or DEFAULT_SCHEMA
    result = PredictionSet(labeler_name=labeler_name)
    for record in corpus:
        if record.findings is None:
            result.errors.append((record.report_id, "no-findings"))
            continue
        result.predictions[record.report_id] = classify_report(record, lex, schema)
    result.check_conservation(len(corpus))
    return result
