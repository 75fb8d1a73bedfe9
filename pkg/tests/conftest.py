import json

import pytest

from eereplay.logmodel import QueryRecord, make_impression

TABLE1_SCORES = (0.95, 0.90, 0.60, 0.45, 0.40)


def table1_record(query_id="q1", click_at=3):
    imps = [make_impression(i, int(i == click_at), s, f"r{i}", (s, 1.0 - s))
            for i, s in enumerate(TABLE1_SCORES, start=1)]
    return QueryRecord(query_id, tuple(imps))


def table1_line(query_id="q1"):
    return json.dumps({
        "query_id": query_id,
        "impressions": [{"position": i, "label": int(i == 3), "score": s,
                         "result_id": f"r{i}", "features": [s, 1.0 - s]}
                        for i, s in enumerate(TABLE1_SCORES, start=1)],
    })


@pytest.fixture
def table1():
    return table1_record()


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
