import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from inter_ir.corpus import Corpus, Document


@pytest.fixture
def tiny_corpus() -> Corpus:
    return Corpus([
        Document("d1", None, "a b a"),
        Document("d2", None, "b c"),
    ])


def write_jsonl_corpus(path: Path, docs: list[dict]) -> Path:
    with path.open("w", encoding="utf-8") as out:
        for doc in docs:
            out.write(json.dumps(doc) + "\n")
    return path


def write_queries(path: Path, queries: list[tuple[str, str]]) -> Path:
    with path.open("w", encoding="utf-8") as out:
        for qid, text in queries:
            out.write(f"{qid}\t{text}\n")
    return path


def write_qrels(path: Path, judgments: list[tuple[str, str, int]]) -> Path:
    with path.open("w", encoding="utf-8") as out:
        for qid, doc_id, grade in judgments:
            out.write(f"{qid}\t0\t{doc_id}\t{grade}\n")
    return path


_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def record_acceptance(name: str, passed: bool) -> None:
    _ACCEPTANCE_RESULTS.append((name, "PASS" if passed else "FAIL"))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and "test_acceptance" in item.nodeid:
        criterion = getattr(item.function, "_criterion", None)
        if criterion:
            record_acceptance(criterion, report.passed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, status in _ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{status}  {name}")
