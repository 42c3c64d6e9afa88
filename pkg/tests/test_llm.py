import pytest
from hypothesis import given, settings, strategies as st

from radlabel.ingest import Corpus
from radlabel.llm import (
    ParseError,
    PromptConfig,
    SalvageError,
    build_prompt,
    build_system_prompt,
    label_corpus,
    parse_salvage,
    parse_strict,
    serialize_completion,
)
from radlabel.schema import DataContractError, LabelVector, ReportRecord
from radlabel.stubserver import StubChatServer, StubReply, vector_responder

from conftest import DATA_DIR, make_record


def vector_fixture(schema, positives=("Gallstones",)):
    vec = LabelVector.zeros(schema)
    for label in positives:
        vec.decisions[label] = 1
    return vec


def salvage_text(schema, vec, mutate=None):
    """Prose-wrapped label/value listing, one pair per line."""
    lines = ["The classification results are as follows:"]
    for label in schema.labels:
        lines.append(f"'{label}': {bool(vec.decisions[label])}")
    lines.append("Let me know if anything else is needed.")
    text = "\n".join(lines)
    return mutate(text) if mutate else text


class TestBuildPrompt:
    def test_system_prompt_matches_frozen_fixture(self, schema):
        frozen = (DATA_DIR / "system_prompt.txt").read_text()
        assert build_system_prompt(schema) == frozen

    def test_first_line(self, schema):
        assert build_system_prompt(schema).startswith(
            "You are an honest radiology report classifier"
        )

    def test_template_contains_each_label_once(self, schema):
        prompt = build_system_prompt(schema)
        template = prompt.split("JSON format output template:")[1]
        for label in schema.labels:
            assert template.count(f"'{label}'") == 1

    def test_user_prompt_carries_subject_id(self, schema):
        record = make_record("Lungs are clear.", rid="R7")
        _system, user = build_prompt(record, schema)
        assert "R7" in user
        assert "Lungs are clear." in user

    def test_deterministic(self, schema):
        record = make_record("Stable exam.", rid="R1")
        assert build_prompt(record, schema) == build_prompt(record, schema)

    def test_missing_findings_rejected(self, schema):
        record = ReportRecord("R1", "P1", "raw", findings=None)
        with pytest.raises(DataContractError):
            build_prompt(record, schema)


class TestParseStrict:
    def test_roundtrip(self, schema):
        vec = vector_fixture(schema, ("Kidney Cyst", "Normal Lung"))
        parsed, pseudo_id = parse_strict(serialize_completion(vec, "R3", schema), schema)
        assert parsed.decisions == vec.decisions
        assert pseudo_id == "R3"

    def test_missing_label_fails(self, schema):
        vec = vector_fixture(schema)
        raw = serialize_completion(vec, "R1", schema).replace('"Gallstones": true, ', "")
        with pytest.raises(ParseError, match="Gallstones"):
            parse_strict(raw, schema)

    def test_prose_prefix_fails_strict_but_salvages(self, schema):
        vec = vector_fixture(schema)
        raw = "Sure! Here is the JSON:\n" + serialize_completion(vec, "R1", schema)
        with pytest.raises(ParseError):
            parse_strict(raw, schema)
        assert parse_salvage(raw, schema).decisions == vec.decisions

    def test_non_boolean_value_fails(self, schema):
        vec = vector_fixture(schema)
        raw = serialize_completion(vec, "R1", schema).replace("true", "1")
        with pytest.raises(ParseError, match="non-boolean"):
            parse_strict(raw, schema)

    def test_extra_label_fails(self, schema):
        vec = vector_fixture(schema)
        raw = serialize_completion(vec, "R1", schema).replace(
            '"Decisions": {', '"Decisions": {"Lung Ground Glass": false, '
        )
        with pytest.raises(ParseError, match="extra"):
            parse_strict(raw, schema)

    def test_extra_top_level_key_fails(self, schema):
        vec = vector_fixture(schema)
        raw = serialize_completion(vec, "R1", schema)[:-1] + ', "Note": "done"}'
        with pytest.raises(ParseError, match="top-level"):
            parse_strict(raw, schema)


class TestParseSalvage:
    def test_full_listing_amid_prose(self, schema):
        vec = vector_fixture(schema, ("Lung Atelectasis", "Kidney Stone"))
        parsed = parse_salvage(salvage_text(schema, vec), schema)
        assert parsed.decisions == vec.decisions

    def test_fourteen_of_fifteen_fails_listing_missing(self, schema):
        vec = vector_fixture(schema)
        text = salvage_text(
            schema, vec, mutate=lambda t: t.replace("'Fatty Liver': False\n", "")
        )
        with pytest.raises(SalvageError, match="missing:Fatty Liver"):
            parse_salvage(text, schema)

    def test_conflicting_duplicate(self, schema):
        vec = vector_fixture(schema)
        text = salvage_text(schema, vec) + "\n'Gallstones': False"
        with pytest.raises(SalvageError, match="conflict:Gallstones") as err:
            parse_salvage(text, schema)
        assert "missing" not in str(err.value)

    def test_agreeing_duplicate_rejected(self, schema):
        vec = vector_fixture(schema)
        text = salvage_text(schema, vec) + "\n'Gallstones': True"
        with pytest.raises(SalvageError, match="duplicate:Gallstones"):
            parse_salvage(text, schema)

    def test_numeric_and_quoted_tokens(self, schema):
        vec = vector_fixture(schema, ("Lung Nodules",))
        lines = []
        for index, label in enumerate(schema.labels):
            token = str(vec.decisions[label]) if index % 2 else f"'{bool(vec.decisions[label])}'"
            lines.append(f"{label}: {token}")
        parsed = parse_salvage("\n".join(lines), schema)
        assert parsed.decisions == vec.decisions

    def test_template_echo_tokens_do_not_match(self, schema):
        template = build_system_prompt(schema)
        with pytest.raises(SalvageError, match="missing:"):
            parse_salvage(template, schema)

    def test_yes_is_not_a_truthy_token(self, schema):
        vec = vector_fixture(schema)
        text = salvage_text(
            schema, vec, mutate=lambda t: t.replace("'Gallstones': True", "'Gallstones': yes")
        )
        with pytest.raises(SalvageError, match="missing:Gallstones"):
            parse_salvage(text, schema)


@st.composite
def label_vectors(draw, schema):
    bits = draw(st.lists(st.booleans(), min_size=15, max_size=15))
    vec = LabelVector.zeros(schema)
    for label, bit in zip(schema.labels, bits):
        vec.decisions[label] = int(bit)
    return vec


@given(data=st.data())
@settings(max_examples=100, deadline=None)
def test_strict_roundtrip_property(data, schema):
    vec = data.draw(label_vectors(schema))
    parsed, _ = parse_strict(serialize_completion(vec, "RX", schema), schema)
    assert parsed.decisions == vec.decisions


@given(data=st.data())
@settings(max_examples=100, deadline=None)
def test_salvage_agrees_with_strict_on_valid_output(data, schema):
    vec = data.draw(label_vectors(schema))
    raw = serialize_completion(vec, "RX", schema)
    strict_vec, _ = parse_strict(raw, schema)
    assert parse_salvage(raw, schema).decisions == strict_vec.decisions


class TestPromptConfig:
    def test_temperature_bounds(self):
        with pytest.raises(DataContractError):
            PromptConfig(model="m", temperature=2.5)

    def test_max_attempts_bound(self):
        with pytest.raises(DataContractError):
            PromptConfig(model="m", max_attempts=0)

    def test_base_url_env_fallback(self, monkeypatch):
        monkeypatch.delenv("RL_LLM_BASE_URL", raising=False)
        from radlabel.llm import TransportError

        with pytest.raises(TransportError, match="RL_LLM_BASE_URL"):
            PromptConfig(model="m").resolved_base_url()
        monkeypatch.setenv("RL_LLM_BASE_URL", "http://example.test/")
        assert PromptConfig(model="m").resolved_base_url() == "http://example.test"


def three_report_corpus():
    return Corpus(
        records=[make_record(f"Report {i} findings.", rid=f"R{i}", pid=f"P{i}") for i in (1, 2, 3)]
    )


class TestLabelCorpus:
    def test_all_valid(self, schema):
        corpus = three_report_corpus()
        vectors = {r.report_id: vector_fixture(schema) for r in corpus}
        with StubChatServer(vector_responder(vectors, schema)) as server:
            config = PromptConfig(model="stub", base_url=server.base_url, backoff_seconds=0.01)
            run = label_corpus(corpus, config, schema)
        assert len(run.prediction_set.predictions) == 3
        assert run.prediction_set.errors == []
        assert set(run.statuses.values()) == {"strict"}

    def test_prose_wrapped_salvaged(self, schema):
        corpus = three_report_corpus()
        vec = vector_fixture(schema)

        def responder(rid, _user):
            raw = serialize_completion(vec, rid, schema)
            return "Here you go:\n" + raw if rid == "R2" else raw

        with StubChatServer(responder) as server:
            config = PromptConfig(model="stub", base_url=server.base_url, backoff_seconds=0.01)
            run = label_corpus(corpus, config, schema)
        assert len(run.prediction_set.predictions) == 3
        assert run.statuses == {"R1": "strict", "R2": "salvaged", "R3": "strict"}

    def test_garbage_goes_to_error_ledger(self, schema):
        corpus = three_report_corpus()
        vec = vector_fixture(schema)

        def responder(rid, _user):
            return "cannot comply" if rid == "R3" else serialize_completion(vec, rid, schema)

        with StubChatServer(responder) as server:
            config = PromptConfig(model="stub", base_url=server.base_url, backoff_seconds=0.01)
            run = label_corpus(corpus, config, schema)
        assert len(run.prediction_set.predictions) == 2
        assert [rid for rid, _ in run.prediction_set.errors] == ["R3"]
        run.prediction_set.check_conservation(3)

    def test_transport_failure_continues_run(self, schema):
        corpus = three_report_corpus()
        vec = vector_fixture(schema)

        def responder(rid, _user):
            if rid == "R1":
                return StubReply(text="", http_status=503)
            return serialize_completion(vec, rid, schema)

        with StubChatServer(responder) as server:
            config = PromptConfig(
                model="stub", base_url=server.base_url, max_attempts=2, backoff_seconds=0.01
            )
            run = label_corpus(corpus, config, schema)
        assert set(run.prediction_set.predictions) == {"R2", "R3"}
        (rid, reason), = run.prediction_set.errors
        assert rid == "R1" and reason.startswith("transport")

    def test_id_mismatch_downgraded_to_salvaged(self, schema):
        corpus = three_report_corpus()
        vec = vector_fixture(schema)

        def responder(rid, _user):
            echoed = "R99" if rid == "R1" else rid
            return serialize_completion(vec, echoed, schema)

        with StubChatServer(responder) as server:
            config = PromptConfig(model="stub", base_url=server.base_url, backoff_seconds=0.01)
            run = label_corpus(corpus, config, schema)
        assert run.statuses["R1"] == "salvaged"
        assert "R1" in run.prediction_set.predictions
        mismatch = [c for c in run.completions if c.report_id == "R1"]
        assert mismatch[0].reason == "id-mismatch:R99"

    def test_no_findings_record_ledgered_without_call(self, schema):
        records = [make_record("Fine.", rid="R1"), ReportRecord("R2", "P2", "raw", findings=None)]
        vec = vector_fixture(schema)
        with StubChatServer(vector_responder({"R1": vec}, schema)) as server:
            config = PromptConfig(model="stub", base_url=server.base_url, backoff_seconds=0.01)
            run = label_corpus(Corpus(records=records), config, schema)
        assert ("R2", "no-findings") in run.prediction_set.errors
        run.prediction_set.check_conservation(2)
