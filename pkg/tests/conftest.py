import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import helpers  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    results = helpers.ACCEPTANCE
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key, name in helpers.CRITERIA:
        if key in results:
            ok, detail = results[key]
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        else:
            terminalreporter.write_line(f"NOT RUN  {name}")
