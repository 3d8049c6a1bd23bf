"""Collects the outcome of every ``criterion``-marked test and prints one line per criterion."""

import pytest

CRITERIA = {
    1: "structural hypotheses on the sweep grid",
    2: "closed-form derivatives vs finite differences",
    3: "branch limit near tau = pi/2",
    4: "disk benchmark",
    5: "scaled-disk benchmark",
    6: "ellipse benchmark",
    7: "uniqueness up to constants",
    8: "refinement order",
    9: "determinism across thread counts",
}

_outcomes = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    details = [v for k, v in item.user_properties if k == "detail"]
    _outcomes.setdefault(marker.args[0], []).append((item.name, rep.outcome, details))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid, title in CRITERIA.items():
        runs = _outcomes.get(cid)
        if not runs:
            tr.write_line(f"criterion {cid} ({title}): NOT RUN")
            continue
        ok = all(outcome == "passed" for _, outcome, _ in runs)
        tr.write_line(f"criterion {cid} ({title}): {'PASS' if ok else 'FAIL'}")
        for name, outcome, details in runs:
            for d in details or [""]:
                tr.write_line(f"    {name}: {outcome} {d}".rstrip())
