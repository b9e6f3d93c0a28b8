import os

import pytest
from hypothesis import settings

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Record one PASS/FAIL line per acceptance criterion and assert it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(number: int, title: str, checks: dict, detail: str = "") -> None:
        ok = all(checks.values())
        parts = ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items())
        line = f"criterion {number} ({title}): {'PASS' if ok else 'FAIL'} [{parts}]"
        if detail:
            line += f" {detail}"
        lines.append(line)
        print(line)
        failed = [k for k, v in checks.items() if not v]
        assert not failed, f"criterion {number} failed checks: {failed}; {detail}"

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
