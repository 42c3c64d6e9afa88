import csv
import json

import numpy as np
import pytest

from radlabel.cli import main
from radlabel.io import (
    read_corpus_jsonl,
    read_predictions_jsonl,
    read_truth_csv,
    write_truth_csv,
)
from radlabel.llm import serialize_completion
from radlabel.schema import LabelVector
from radlabel.stubserver import StubChatServer
from radlabel.synthetic import generate_corpus, write_fixture

from conftest import REPO_DIR


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    synthetic = generate_corpus(40, seed=31)
    write_fixture(synthetic, root / "reports.jsonl", root / "truth.csv")
    assert main([
        "ingest", "--reports", str(root / "reports.jsonl"), "--format", "jsonl",
        "--out", str(root / "corpus.jsonl"),
    ]) == 0
    return root, synthetic


def test_ingest_extracts_findings(workspace):
    root, _ = workspace
    corpus = read_corpus_jsonl(root / "corpus.jsonl")
    assert len(corpus) == 40
    assert any(r.findings for r in corpus)


def test_rba_command(workspace):
    root, _ = workspace
    code = main([
        "rba", "--corpus", str(root / "corpus.jsonl"), "--out", str(root / "rba.jsonl"),
    ])
    assert code == 0
    preds = read_predictions_jsonl(root / "rba.jsonl")
    corpus = read_corpus_jsonl(root / "corpus.jsonl")
    assert len(preds.predictions) + len(preds.errors) == len(corpus)


def test_llm_command_against_stub(workspace, schema):
    root, synthetic = workspace

    def responder(rid, _user):
        row = synthetic.truth.get(rid)
        vec = LabelVector.zeros(schema)
        for label, bit in row.items():
            vec.decisions[label] = bit
        return serialize_completion(vec, rid, schema)

    with StubChatServer(responder) as server:
        code = main([
            "llm", "--corpus", str(root / "corpus.jsonl"), "--model", "stub-model",
            "--base-url", server.base_url, "--concurrency", "2",
            "--out", str(root / "llm.jsonl"), "--audit", str(root / "audit.jsonl"),
        ])
    assert code == 0
    audit_lines = (root / "audit.jsonl").read_text().strip().splitlines()
    preds = read_predictions_jsonl(root / "llm.jsonl")
    assert audit_lines and len(preds.predictions) > 0
    statuses = {json.loads(line)["parse_status"] for line in audit_lines}
    assert statuses == {"strict"}


def test_vote_and_agree_commands(workspace):
    root, _ = workspace
    assert main([
        "vote", "--preds", str(root / "rba.jsonl"), str(root / "llm.jsonl"),
        str(root / "llm.jsonl"), "--out", str(root / "vote.jsonl"),
    ]) == 0
    assert main([
        "agree", "--preds", str(root / "rba.jsonl"), str(root / "llm.jsonl"),
        "--out", str(root / "kappa.csv"),
    ]) == 0
    with (root / "kappa.csv").open() as handle:
        rows = list(csv.DictReader(handle))
    assert rows[0]["model_a"] and rows[0]["kappa"]


def test_agree_identical_predictions_all_ones(workspace):
    root, _ = workspace
    assert main([
        "agree", "--preds", str(root / "rba.jsonl"), str(root / "rba.jsonl"),
        "--out", str(root / "kappa_self.csv"),
    ]) == 0
    with (root / "kappa_self.csv").open() as handle:
        rows = [r for r in csv.DictReader(handle) if not r["label"].startswith("(")]
    assert all(float(r["kappa"]) == 1.0 for r in rows)


def test_eval_command_with_bootstrap(workspace):
    root, _ = workspace
    code = main([
        "eval", "--preds", str(root / "llm.jsonl"), "--truth", str(root / "truth.csv"),
        "--bootstrap", "50", "--seed", "3", "--out", str(root / "metrics.csv"),
    ])
    assert code == 0
    with (root / "metrics.csv").open() as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 17  # 15 labels + micro + macro
    assert all(r["ci_low"] != "" for r in rows)


def test_eval_lung_subset(workspace):
    root, _ = workspace
    lungs = "Lung Atelectasis,Lung Nodules,Lung Emphysema,Lung Pleural Effusion"
    code = main([
        "eval", "--preds", str(root / "llm.jsonl"), "--truth", str(root / "truth.csv"),
        "--labels", lungs, "--out", str(root / "metrics_lung.csv"),
    ])
    assert code == 0
    with (root / "metrics_lung.csv").open() as handle:
        rows = list(csv.DictReader(handle))
    assert [r["label"] for r in rows] == lungs.split(",") + ["micro", "macro"]


def test_eval_bootstrap_requires_seed(workspace, capsys):
    root, _ = workspace
    code = main([
        "eval", "--preds", str(root / "llm.jsonl"), "--truth", str(root / "truth.csv"),
        "--bootstrap", "10", "--out", str(root / "m.csv"),
    ])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["code"] == 2 and "seed" in err["error"]


def test_split_command(workspace):
    root, _ = workspace
    code = main([
        "split", "--corpus", str(root / "corpus.jsonl"), "--labels", str(root / "truth.csv"),
        "--train-frac", "0.7", "--seed", "11", "--out", str(root / "split.csv"),
    ])
    assert code == 0
    with (root / "split.csv").open() as handle:
        rows = list(csv.DictReader(handle))
    sides_by_patient = {}
    for row in rows:
        sides_by_patient.setdefault(row["patient_id"], set()).add(row["side"])
    assert all(len(sides) == 1 for sides in sides_by_patient.values())


def test_sample_command(workspace):
    root, _ = workspace
    code = main([
        "sample", "--preds", str(root / "rba.jsonl"), str(root / "llm.jsonl"),
        str(root / "vote.jsonl"), "--quota", "2", "--supplement", "3",
        "--seed", "5", "--out", str(root / "ids.txt"),
    ])
    assert code == 0
    ids = (root / "ids.txt").read_text().split()
    assert ids and len(ids) == len(set(ids))
    prevalence = (root / "ids.txt.prevalence.csv").read_text()
    assert prevalence.startswith("category,")


def test_export_command(workspace, tmp_path, schema):
    from radlabel.service import AnnotationStore

    root, _ = workspace
    data_dir = tmp_path / "annotations"
    store = AnnotationStore(data_dir, schema)
    session = store.start_session("ann", ["R00001"], {"R00001"})
    labels = {lbl: "negative" for lbl in schema.labels}
    labels["Gallstones"] = "positive"
    store.submit(session.session_id, "R00001", labels)
    code = main([
        "export", "--data-dir", str(data_dir), "--view", "actionable",
        "--out", str(tmp_path / "ref.csv"),
    ])
    assert code == 0
    truth = read_truth_csv(tmp_path / "ref.csv", schema)
    assert truth["R00001"]["Gallstones"] == 1


def test_terms_command(workspace):
    root, _ = workspace
    code = main([
        "terms", "--corpus", str(root / "corpus.jsonl"), "--top-k", "10",
        "--out", str(root / "terms.csv"),
    ])
    assert code == 0
    with (root / "terms.csv").open() as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 10


def test_contract_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "dup.jsonl"
    bad.write_text(
        json.dumps({"report_id": "R1", "patient_id": "P1", "text": "a"}) + "\n"
        + json.dumps({"report_id": "R1", "patient_id": "P2", "text": "b"}) + "\n"
    )
    code = main(["ingest", "--reports", str(bad), "--out", str(tmp_path / "o.jsonl")])
    assert code == 3
    err = json.loads(capsys.readouterr().err.strip())
    assert err["code"] == 3 and "R1" in err["error"]


def test_missing_file_exit_code(tmp_path, capsys):
    code = main(["rba", "--corpus", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "o")])
    assert code == 3


def test_transport_error_exit_code(workspace, monkeypatch, tmp_path, capsys):
    root, _ = workspace
    monkeypatch.delenv("RL_LLM_BASE_URL", raising=False)
    code = main([
        "llm", "--corpus", str(root / "corpus.jsonl"), "--model", "m",
        "--out", str(tmp_path / "o.jsonl"), "--audit", str(tmp_path / "a.jsonl"),
    ])
    assert code == 4


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as excinfo:
        main(["eval", "--preds"])  # missing value and required flags
    assert excinfo.value.code == 2


def test_reproducible_outputs(workspace, tmp_path):
    root, _ = workspace
    for index in (1, 2):
        main([
            "sample", "--preds", str(root / "rba.jsonl"), str(root / "llm.jsonl"),
            "--quota", "2", "--seed", "9", "--out", str(tmp_path / f"ids{index}.txt"),
        ])
    assert (tmp_path / "ids1.txt").read_bytes() == (tmp_path / "ids2.txt").read_bytes()
