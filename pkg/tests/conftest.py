"""Collects acceptance-criterion outcomes and prints them after the run."""

# (number, title, passed, seconds, detail), appended by test_acceptance
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, seconds, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number:2d}  {status}  {title}  ({seconds:.1f}s)"
        terminalreporter.write_line(line + (f"  {detail}" if detail else ""))
