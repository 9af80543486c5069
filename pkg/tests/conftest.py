import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_criteria = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    crit = name.split("_")[1]  # test_cNN_...
    if report.when == "call" or report.failed:
        ok, dur, names, notes = _criteria.get(crit, (True, 0.0, set(), []))
        names.add(name.split("[")[0][len("test_") + len(crit) + 1:])
        notes += [v for k, v in report.user_properties if k == "result"]
        _criteria[crit] = (ok and report.passed, dur + report.duration, names, notes)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_criteria):
        ok, dur, names, notes = _criteria[crit]
        label = ", ".join(sorted(names)).replace("_", " ")
        extra = f"  [{'; '.join(notes)}]" if notes else ""
        terminalreporter.write_line(f"criterion {crit[1:]}: {'PASS' if ok else 'FAIL'}  {label} ({dur:.1f} s){extra}")
