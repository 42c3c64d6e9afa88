"""Zero-shot LLM labeling over a chat-completions endpoint.

The classifier prompt asks for a JSON dictionary with a pseudo-ID and a
True/False decision per label. Parsing is two-stage: a strict JSON parse,
then a conservative text salvage that scans for every label name with an
unambiguous truthy or falsy value. Reports whose output survives neither
stage land in the error ledger; nothing is silently dropped or repaired.
"""
from __future__ import annotations

import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import requests

from .ingest import Corpus
from .schema import (
    DataContractError,
    LabelSchema,
    LabelVector,
    PredictionSet,
    ReportRecord,
    CANONICAL_LABELS,
    DEFAULT_SCHEMA,
)

log = logging.getLogger(__name__)

BASE_URL_ENV = "RL_LLM_BASE_URL"
API_KEY_ENV = "RL_LLM_API_KEY"

# Preset matching the reduced-variability temperature used for flaky models.
LOW_TEMPERATURE = 0.1

STRICT = "strict"
SALVAGED = "salvaged"
FAILED = "failed"

# The published disease list carries one term that its own output template
# omits; it is reproduced in the list (and only there) for the default schema.
_EXTRA_LIST_TERM = "Lung Ground Glass"


class ParseError(Exception):
    """Completion text does not satisfy the strict output contract."""


class SalvageError(Exception):
    """Completion text could not be salvaged; reason is the message."""


class TransportError(Exception):
    """Endpoint could not be reached or kept failing at the HTTP layer."""


@dataclass(frozen=True)
class PromptConfig:
    model: str
    temperature: float | None = None
    max_output_tokens: int | None = None
    base_url: str | None = None
    api_key: str | None = None
    max_attempts: int = 3
    backoff_seconds: float = 0.5
    concurrency: int = 4
    timeout_seconds: float = 120.0

    def __post_init__(self) -> None:
        if self.temperature is not None and not (0.0 <= self.temperature <= 2.0):
            raise DataContractError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_attempts < 1:
            raise DataContractError("max_attempts must be >= 1")
        if self.concurrency < 1:
            raise DataContractError("concurrency must be >= 1")

    def resolved_base_url(self) -> str:
        url = self.base_url or os.environ.get(BASE_URL_ENV, "")
        if not url:
            raise TransportError(
                f"no endpoint base URL: set {BASE_URL_ENV} or pass base_url"
            )
        return url.rstrip("/")

    def resolved_api_key(self) -> str | None:
        return self.api_key or os.environ.get(API_KEY_ENV)


@dataclass
class RawCompletion:
    """One endpoint completion, kept verbatim for audit."""

    report_id: str
    raw_text: str
    parse_status: str
    attempts: int
    reason: str | None = None

    def __post_init__(self) -> None:
        if self.parse_status == FAILED and not self.reason:
            raise DataContractError("failed completions must record a reason")


def build_system_prompt(schema: LabelSchema | None = None) -> str:
    """Render the classifier system prompt for a schema.

    For the default schema the output is byte-stable and matches the prompt
    the shipped label set was generated with.
    """
    schema = schema or DEFAULT_SCHEMA
    labels = list(schema.labels)
    listed = list(labels)
    if tuple(labels) == CANONICAL_LABELS:
        listed = labels[:-1] + [_EXTRA_LIST_TERM, labels[-1]]
    disease_list = "[" + ", ".join(f"'{name}'" for name in listed) + "]"
    chunks = [labels[i : i + 4] for i in range(0, len(labels), 4)]
    template = ",\n    ".join(
        ", ".join(f"'{name}': True/False" for name in chunk) for chunk in chunks
    )
    return (
        "You are an honest radiology report classifier. Identify if only the "
        "disease labels in the provided DISEASE_LIST are present in the report.\n"
        "\n"
        f"DISEASE_LIST: {disease_list}.\n"
        "\n"
        "Do not hallucinate. Respond True if disease label is present, False if "
        "not. JSON format output template:\n"
        "\n"
        "{\n"
        "  'ID': Subject ID,\n"
        "  Decisions: {\n"
        f"    {template}\n"
        "  }\n"
        "}.\n"
        "\n"
        "Respond only in JSON dictionary. Do not use other variables. Do not "
        "give explanation. End generation after JSON dictionary is created."
    )


def build_user_prompt(record: ReportRecord) -> str:
    if record.findings is None:
        raise DataContractError(f"report {record.report_id!r} has no findings section")
    return f"Subject ID: {record.report_id}\n\nReport:\n{record.findings}"


def build_prompt(record: ReportRecord, schema: LabelSchema | None = None) -> tuple[str, str]:
    """(system text, user text) for one report; deterministic."""
    return build_system_prompt(schema), build_user_prompt(record)


def serialize_completion(vector: LabelVector, report_id: str, schema: LabelSchema | None = None) -> str:
    """Canonical strictly-parseable completion for a vector (test/stub aid)."""
    schema = schema or DEFAULT_SCHEMA
    return json.dumps(
        {
            "ID": report_id,
            "Decisions": {lbl: bool(vector.decisions[lbl]) for lbl in schema.labels},
        }
    )


def parse_strict(raw: str, schema: LabelSchema | None = None) -> tuple[LabelVector, str]:
    """Parse a completion that exactly honors the output contract.

    Accepts a single JSON object with an ID and a Decisions map holding all
    canonical labels with boolean values; anything else raises ParseError and
    the caller falls through to salvage.
    """
    schema = schema or DEFAULT_SCHEMA
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError("top level is not a JSON object")
    if set(data) != {"ID", "Decisions"}:
        raise ParseError(f"unexpected top-level keys: {sorted(data)}")
    decisions = data["Decisions"]
    if not isinstance(decisions, dict):
        raise ParseError("Decisions is not an object")
    expected = set(schema.labels)
    missing = sorted(expected - set(decisions))
    if missing:
        raise ParseError(f"missing labels: {missing}")
    extra = sorted(set(decisions) - expected)
    if extra:
        raise ParseError(f"extra labels: {extra}")
    for label, value in decisions.items():
        if not isinstance(value, bool):
            raise ParseError(f"non-boolean value for {label!r}: {value!r}")
    vector = LabelVector(
        decisions={lbl: int(decisions[lbl]) for lbl in schema.labels},
        uncertain={name: False for name in schema.organ_names},
    )
    return vector, str(data["ID"])


_TRUTHY = {"True", "true", "1"}
_FALSY = {"False", "false", "0"}


def _label_value_pattern(label: str) -> re.Pattern:
    # Label optionally quoted, separator ':' or '=', value optionally quoted
    # with a matching quote; 'True/False' template echoes never match because
    # the value may not be followed by '/' or a word character.
    return re.compile(
        r"(?<![A-Za-z0-9])['\"]?"
        + re.escape(label)
        + r"['\"]?\s*[:=]\s*(['\"]?)(True|true|False|false|1|0)\1(?![\w/])"
    )


def parse_salvage(raw: str, schema: LabelSchema | None = None) -> LabelVector:
    """Salvage a malformed completion by scanning for label/value pairs.

    Succeeds only when every canonical label occurs exactly once with an
    unambiguous truthy or falsy token (True/true/1, False/false/0, quoted
    variants). Anything else raises SalvageError with the offending labels.
    """
    schema = schema or DEFAULT_SCHEMA
    values: dict[str, int] = {}
    missing: list[str] = []
    conflicts: list[str] = []
    duplicates: list[str] = []
    for label in schema.labels:
        tokens = [m.group(2) for m in _label_value_pattern(label).finditer(raw)]
        if not tokens:
            missing.append(label)
        elif len(tokens) > 1:
            distinct = {t in _TRUTHY for t in tokens}
            if len(distinct) > 1:
                conflicts.append(label)
            else:
                duplicates.append(label)
        else:
            values[label] = 1 if tokens[0] in _TRUTHY else 0
    problems = []
    if missing:
        problems.append("missing:" + ",".join(missing))
    if conflicts:
        problems.append(";".join(f"conflict:{label}" for label in conflicts))
    if duplicates:
        problems.append(";".join(f"duplicate:{label}" for label in duplicates))
    if problems:
        raise SalvageError("; ".join(problems))
    return LabelVector(
        decisions={lbl: values[lbl] for lbl in schema.labels},
        uncertain={name: False for name in schema.organ_names},
    )


class ChatCompletionsClient:
    """Minimal client for any chat-completions-compatible HTTP endpoint.

    Retries transport-level failures (connection errors, timeouts, HTTP 429
    and 5xx) with exponential backoff; malformed completion *content* is
    never retried, it goes to the salvage path instead.
    """

    def __init__(self, config: PromptConfig, session: requests.Session | None = None):
        self.config = config
        self.session = session or requests.Session()

    def complete(self, system_text: str, user_text: str) -> str:
        url = self.config.resolved_base_url() + "/chat/completions"
        payload: dict = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system_text},
                {"role": "user", "content": user_text},
            ],
        }
        if self.config.temperature is not None:
            payload["temperature"] = self.config.temperature
        if self.config.max_output_tokens is not None:
            payload["max_tokens"] = self.config.max_output_tokens
        headers = {"Content-Type": "application/json"}
        api_key = self.config.resolved_api_key()
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_error: Exception | None = None
        for attempt in range(self.config.max_attempts):
            if attempt:
                time.sleep(self.config.backoff_seconds * 2 ** (attempt - 1))
            try:
                response = self.session.post(
                    url, json=payload, headers=headers, timeout=self.config.timeout_seconds
                )
            except requests.RequestException as exc:
                last_error = exc
                log.warning("transport failure (attempt %d): %s", attempt + 1, exc)
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last_error = TransportError(f"HTTP {response.status_code}")
                log.warning("retryable HTTP %d (attempt %d)", response.status_code, attempt + 1)
                continue
            if response.status_code != 200:
                raise TransportError(f"HTTP {response.status_code}: {response.text[:200]}")
            try:
                body = response.json()
                return body["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"malformed endpoint envelope: {exc}") from exc
        raise TransportError(f"endpoint unreachable after {self.config.max_attempts} attempts: {last_error}")


@dataclass
class LabelRun:
    """Outcome of labeling a corpus: predictions plus the full audit trail."""

    prediction_set: PredictionSet
    completions: list[RawCompletion] = field(default_factory=list)
    statuses: dict[str, str] = field(default_factory=dict)


def _label_one(
    record: ReportRecord,
    client: ChatCompletionsClient,
    schema: LabelSchema,
) -> tuple[str, LabelVector | None, RawCompletion]:
    system_text, user_text = build_prompt(record, schema)
    rid = record.report_id
    try:
        raw = client.complete(system_text, user_text)
    except TransportError as exc:
        return rid, None, RawCompletion(
            report_id=rid, raw_text="", parse_status=FAILED,
            attempts=client.config.max_attempts, reason=f"transport: {exc}",
        )
    try:
        vector, pseudo_id = parse_strict(raw, schema)
        if pseudo_id != rid:
            # Keep the vector, keyed by the requested id, but downgrade it.
            log.warning("pseudo-ID mismatch for %s: model echoed %r", rid, pseudo_id)
            return rid, vector, RawCompletion(
                report_id=rid, raw_text=raw, parse_status=SALVAGED,
                attempts=1, reason=f"id-mismatch:{pseudo_id}",
            )
        return rid, vector, RawCompletion(
            report_id=rid, raw_text=raw, parse_status=STRICT, attempts=1
        )
    except ParseError:
        pass
    try:
        vector = parse_salvage(raw, schema)
        return rid, vector, RawCompletion(
            report_id=rid, raw_text=raw, parse_status=SALVAGED, attempts=1
        )
    except SalvageError as exc:
        return rid, None, RawCompletion(
            report_id=rid, raw_text=raw, parse_status=FAILED, attempts=1, reason=str(exc)
        )


def label_corpus(
    corpus: Corpus,
    config: PromptConfig,
    schema: LabelSchema | None = None,
    labeler_name: str | None = None,
    client: ChatCompletionsClient | None = None,
) -> LabelRun:
    """Label every report in the corpus through the configured endpoint.

    At most ``config.concurrency`` requests are in flight; results are
    collected by a single thread so predictions plus errors always account
    for every submitted report.
    """
    schema = schema or DEFAULT_SCHEMA
    client = client or ChatCompletionsClient(config)
    config.resolved_base_url()  # misconfiguration fails fast, before any request
    run = LabelRun(prediction_set=PredictionSet(labeler_name=labeler_name or config.model))

    labelable = []
    for record in corpus:
        if record.findings is None:
            run.prediction_set.errors.append((record.report_id, "no-findings"))
            run.statuses[record.report_id] = FAILED
        else:
            labelable.append(record)

    with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
        for rid, vector, completion in pool.map(
            lambda rec: _label_one(rec, client, schema), labelable
        ):
            run.completions.append(completion)
            run.statuses[rid] = completion.parse_status
            if vector is None:
                run.prediction_set.errors.append((rid, completion.reason or "parse failure"))
            else:
                run.prediction_set.predictions[rid] = vector

    run.prediction_set.check_conservation(len(corpus))
    return run
