import pytest
from fastapi.testclient import TestClient

from radlabel.io import read_truth_csv
from radlabel.schema import DataContractError, NEGATIVE, POSITIVE, SUBJECTIVE
from radlabel.service import (
    AnnotationStore,
    create_app,
    derive_view,
    export_reference,
    subjectivity_report,
)


def all_negative(schema, **overrides):
    labels = {lbl: NEGATIVE for lbl in schema.labels}
    labels.update(overrides)
    return labels


FINDINGS = {f"R{i}": f"Findings text {i}." for i in range(1, 6)}


@pytest.fixture
def client(tmp_path, schema):
    app = create_app(
        corpus_findings=FINDINGS,
        queue_ids=sorted(FINDINGS),
        data_dir=tmp_path / "store",
        schema=schema,
    )
    return TestClient(app)


class TestSessions:
    def test_start_session_five_pending(self, client):
        response = client.post("/api/sessions", json={"annotator_id": "ann1"})
        assert response.status_code == 200
        state = response.json()
        assert state["counts"] == {"done": 0, "skipped": 0, "pending": 5}
        assert state["cursor"] == 0

    def test_empty_queue_rejected(self, client):
        response = client.post(
            "/api/sessions", json={"annotator_id": "ann1", "report_ids": []}
        )
        assert response.status_code == 400

    def test_unknown_report_listed(self, client):
        response = client.post(
            "/api/sessions", json={"annotator_id": "ann1", "report_ids": ["R1", "RX"]}
        )
        assert response.status_code == 400
        assert "RX" in response.json()["detail"]

    def test_restart_preserves_state(self, tmp_path, schema):
        data_dir = tmp_path / "durable"
        app = create_app(FINDINGS, sorted(FINDINGS), data_dir, schema)
        with TestClient(app) as client:
            sid = client.post("/api/sessions", json={"annotator_id": "a"}).json()["session_id"]
            client.post(
                f"/api/session/{sid}/annotations",
                json={"report_id": "R1", "labels": all_negative(schema)},
            )
            before = client.get(f"/api/session/{sid}").json()
        rebuilt = create_app(FINDINGS, sorted(FINDINGS), data_dir, schema)
        with TestClient(rebuilt) as client2:
            after = client2.get(f"/api/session/{sid}").json()
        assert after == before
        assert after["status"]["R1"] == "done"

    def test_next_serves_findings_verbatim(self, client, schema):
        sid = client.post("/api/sessions", json={"annotator_id": "a"}).json()["session_id"]
        payload = client.get(f"/api/session/{sid}/next").json()
        assert payload["report_id"] == "R1"
        assert payload["findings"] == FINDINGS["R1"]
        assert payload["predictions"] is None

    def test_skip_advances(self, client, schema):
        sid = client.post("/api/sessions", json={"annotator_id": "a"}).json()["session_id"]
        client.post(f"/api/session/{sid}/skip", json={"report_id": "R1"})
        state = client.get(f"/api/session/{sid}").json()
        assert state["status"]["R1"] == "skipped"
        assert client.get(f"/api/session/{sid}/next").json()["report_id"] == "R2"


class TestSubmission:
    def test_full_annotation_acknowledged(self, client, schema):
        sid = client.post("/api/sessions", json={"annotator_id": "a"}).json()["session_id"]
        response = client.post(
            f"/api/session/{sid}/annotations",
            json={"report_id": "R1", "labels": all_negative(schema)},
        )
        assert response.status_code == 200 and response.json()["ok"]
        assert client.get(f"/api/session/{sid}/next").json()["report_id"] == "R2"

    def test_incomplete_coverage_rejected_naming_missing(self, client, schema):
        sid = client.post("/api/sessions", json={"annotator_id": "a"}).json()["session_id"]
        labels = all_negative(schema)
        del labels["Gallstones"]
        response = client.post(
            f"/api/session/{sid}/annotations", json={"report_id": "R1", "labels": labels}
        )
        assert response.status_code == 400
        assert "Gallstones" in response.json()["detail"]

    def test_resubmission_last_write_wins(self, client, schema):
        sid = client.post("/api/sessions", json={"annotator_id": "a"}).json()["session_id"]
        client.post(
            f"/api/session/{sid}/annotations",
            json={"report_id": "R1", "labels": all_negative(schema, **{"Gallstones": POSITIVE})},
        )
        client.post(
            f"/api/session/{sid}/annotations",
            json={"report_id": "R1", "labels": all_negative(schema)},
        )
        store = client.app.state.store
        assert len(store.annotations) == 2  # both logged
        view = derive_view(store.annotations, "actionable", schema)
        assert view["R1"]["Gallstones"] == 0  # latest exported

    def test_note_stored(self, client, schema):
        sid = client.post("/api/sessions", json={"annotator_id": "a"}).json()["session_id"]
        client.post(
            f"/api/session/{sid}/annotations",
            json={
                "report_id": "R1",
                "labels": all_negative(schema, **{"Lung Atelectasis": SUBJECTIVE}),
                "notes": {"Lung Atelectasis": "gravity-dependent"},
            },
        )
        store = client.app.state.store
        assert store.annotations[-1].notes["Lung Atelectasis"] == "gravity-dependent"


def build_log(store_dir, schema, rows):
    """rows: list of (report_id, {label: value}) annotated by one session."""
    store = AnnotationStore(store_dir, schema)
    session = store.start_session("ann", [rid for rid, _ in rows], {rid for rid, _ in rows})
    for rid, overrides in rows:
        store.submit(session.session_id, rid, all_negative(schema, **overrides))
    return store


class TestViews:
    def test_subjective_resolves_oppositely(self, tmp_path, schema):
        store = build_log(
            tmp_path, schema, [("R1", {"Lung Atelectasis": SUBJECTIVE})]
        )
        actionable = derive_view(store.annotations, "actionable", schema)
        mention = derive_view(store.annotations, "mention", schema)
        assert actionable["R1"]["Lung Atelectasis"] == 0
        assert mention["R1"]["Lung Atelectasis"] == 1

    def test_positive_in_both_views(self, tmp_path, schema):
        store = build_log(tmp_path, schema, [("R1", {"Kidney Lesion": POSITIVE})])
        for kind in ("actionable", "mention"):
            assert derive_view(store.annotations, kind, schema)["R1"]["Kidney Lesion"] == 1

    def test_no_subjective_entries_views_identical(self, tmp_path, schema):
        store = build_log(
            tmp_path, schema, [("R1", {"Gallstones": POSITIVE}), ("R2", {})]
        )
        assert derive_view(store.annotations, "actionable", schema) == derive_view(
            store.annotations, "mention", schema
        )

    def test_views_differ_exactly_at_subjective_positions(self, tmp_path, schema):
        rows = [
            ("R1", {"Lung Atelectasis": SUBJECTIVE, "Gallstones": POSITIVE}),
            ("R2", {"Kidney Lesion": SUBJECTIVE}),
            ("R3", {}),
        ]
        store = build_log(tmp_path, schema, rows)
        actionable = derive_view(store.annotations, "actionable", schema)
        mention = derive_view(store.annotations, "mention", schema)
        differences = {
            (rid, lbl)
            for rid in actionable
            for lbl in schema.labels
            if actionable[rid][lbl] != mention[rid][lbl]
        }
        assert differences == {("R1", "Lung Atelectasis"), ("R2", "Kidney Lesion")}

    def test_actionable_positives_subset_of_mention(self, tmp_path, schema):
        rows = [
            ("R1", {"Lung Atelectasis": SUBJECTIVE, "Fatty Liver": POSITIVE}),
            ("R2", {"Kidney Cyst": POSITIVE, "Kidney Lesion": SUBJECTIVE}),
        ]
        store = build_log(tmp_path, schema, rows)
        actionable = derive_view(store.annotations, "actionable", schema)
        mention = derive_view(store.annotations, "mention", schema)
        for rid in actionable:
            for lbl in schema.labels:
                assert actionable[rid][lbl] <= mention[rid][lbl]

    def test_unknown_view_kind(self, tmp_path, schema):
        store = build_log(tmp_path, schema, [("R1", {})])
        with pytest.raises(DataContractError):
            derive_view(store.annotations, "strict", schema)


class TestExport:
    def test_round_trip(self, tmp_path, schema):
        store = build_log(
            tmp_path / "s", schema, [("R1", {"Gallstones": POSITIVE}), ("R2", {})]
        )
        view = derive_view(store.annotations, "actionable", schema)
        out = tmp_path / "truth.csv"
        export_reference(view, out, schema)
        assert read_truth_csv(out, schema) == view

    def test_header_only_for_empty_view(self, tmp_path, schema):
        out = tmp_path / "empty.csv"
        export_reference({}, out, schema)
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 1
        assert lines[0].startswith("report_id")

    def test_two_reports_sixteen_columns(self, tmp_path, schema):
        store = build_log(tmp_path / "s", schema, [("R1", {}), ("R2", {})])
        out = tmp_path / "two.csv"
        export_reference(derive_view(store.annotations, "mention", schema), out, schema)
        import csv

        with out.open() as handle:
            rows = list(csv.reader(handle))
        assert len(rows) == 3
        assert all(len(row) == 16 for row in rows)

    def test_export_endpoint(self, client, schema):
        sid = client.post("/api/sessions", json={"annotator_id": "a"}).json()["session_id"]
        client.post(
            f"/api/session/{sid}/annotations",
            json={"report_id": "R1", "labels": all_negative(schema, **{"Gallstones": POSITIVE})},
        )
        response = client.get("/api/export", params={"view": "actionable"})
        assert response.status_code == 200
        assert response.text.startswith("report_id")
        assert ",1," in response.text


class TestSubjectivity:
    def test_proportion_fixture(self, tmp_path, schema):
        rows = []
        for i in range(100):
            value = SUBJECTIVE if i < 28 else (POSITIVE if i < 50 else NEGATIVE)
            rows.append((f"R{i:03d}", {"Kidney Lesion": value}))
        store = build_log(tmp_path, schema, rows)
        table = subjectivity_report(store.annotations, schema)
        assert table["Kidney Lesion"][SUBJECTIVE] == 28
        assert table["Kidney Lesion"][POSITIVE] == 22
        assert table["Kidney Lesion"][NEGATIVE] == 50

    def test_all_negative_log(self, tmp_path, schema):
        store = build_log(tmp_path, schema, [(f"R{i}", {}) for i in range(5)])
        table = subjectivity_report(store.annotations, schema)
        assert all(row[SUBJECTIVE] == 0 for row in table.values())

    def test_counts_sum_to_annotated_reports(self, tmp_path, schema):
        rows = [(f"R{i}", {"Gallstones": POSITIVE} if i % 2 else {}) for i in range(7)]
        store = build_log(tmp_path, schema, rows)
        table = subjectivity_report(store.annotations, schema)
        for label in schema.labels:
            assert sum(table[label].values()) == 7


def test_log_replay_reproduces_exports(tmp_path, schema):
    rows = [("R1", {"Lung Atelectasis": SUBJECTIVE}), ("R2", {"Gallstones": POSITIVE})]
    store = build_log(tmp_path, schema, rows)
    first = derive_view(store.annotations, "mention", schema)
    replayed = AnnotationStore(tmp_path, schema)
    second = derive_view(replayed.annotations, "mention", schema)
    assert first == second
