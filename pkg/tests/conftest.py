import json
from pathlib import Path

import pytest

from taser.workload import demo_corpus_jsonl, demo_labels_json

DATA = Path(__file__).parent / "data"


@pytest.fixture
def demo_inputs(tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    labels = tmp_path / "labels.json"
    corpus.write_text(demo_corpus_jsonl(), encoding="utf-8")
    labels.write_text(demo_labels_json(), encoding="utf-8")
    return corpus, labels


@pytest.fixture
def forward_transcript():
    return DATA / "forward_transcript.jsonl"


@pytest.fixture(scope="session")
def golden_rows():
    return json.loads((DATA / "golden_rows.json").read_text(encoding="utf-8"))


# --------------------------------------------------------------------------
# acceptance summary: one line per criterion, failed if any of its tests failed

CRITERIA = {
    1: "metric kernels agree with the edit-distance oracle",
    2: "published table arithmetic is self-consistent",
    3: "golden extraction rows reproduce field-exact",
    4: "scripted refinement transcript behaves as specified",
    5: "batch-size tradeoff direction on the heavy-tail workload",
    6: "strict TAD rows reconcile to the baseline",
    7: "artifact trees identical across worker counts",
    8: "validator property suite",
}
_outcomes: dict[int, list[tuple[str, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    result = yield
    report = result.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _outcomes.setdefault(marker.args[0], []).append((item.name, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in CRITERIA.items():
        results = _outcomes.get(number)
        if not results:
            terminalreporter.write_line(f"criterion {number}: NOT RUN  {title}")
            continue
        failed = [name for name, outcome in results if outcome == "failed"]
        status = "FAIL" if failed else "PASS"
        detail = f"  ({len(failed)} of {len(results)} checks failed: {', '.join(failed)})" if failed else ""
        terminalreporter.write_line(f"criterion {number}: {status}  {title}{detail}")
