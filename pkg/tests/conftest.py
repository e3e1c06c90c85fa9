from __future__ import annotations

import warnings

import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_admissibility():
    # probes near the detector edge legitimately drop directions
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="no admissible direction")
        yield


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, with the measurements behind it."""
    import sys

    mod = next((m for name, m in list(sys.modules.items()) if name.endswith("test_acceptance")), None)
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(results, key=lambda c: (int(c.split()[0][0]), c)):
        lines = results[crit]
        verdict = "PASS" if all(s == "PASS" for s, _ in lines) else "FAIL"
        tr.write_line(f"{verdict}  criterion {crit}")
        for s, detail in lines:
            tr.write_line(f"        {s}  {detail}")
