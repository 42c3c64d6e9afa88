from pathlib import Path

import pytest

from radlabel.ingest import Corpus, extract_findings
from radlabel.lexicon import load_lexicon
from radlabel.schema import DEFAULT_SCHEMA, load_schema
from radlabel.synthetic import generate_corpus

TESTS_DIR = Path(__file__).parent
DATA_DIR = TESTS_DIR / "data"
REPO_DIR = TESTS_DIR.parent


@pytest.fixture(scope="session")
def schema():
    return load_schema()


@pytest.fixture(scope="session")
def lexicon():
    return load_lexicon()


@pytest.fixture(scope="session")
def synthetic_small():
    """100-report deterministic corpus with findings already extracted."""
    synthetic = generate_corpus(100, seed=7)
    sectioned = Corpus(
        records=[extract_findings(r) for r in synthetic.corpus],
        source=synthetic.corpus.source,
    )
    synthetic.corpus = sectioned
    return synthetic


def make_record(findings: str, rid: str = "R1", pid: str = "P1"):
    from radlabel.schema import ReportRecord

    return ReportRecord(report_id=rid, patient_id=pid, raw_text=findings, findings=findings)
