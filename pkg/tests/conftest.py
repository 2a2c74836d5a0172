import numpy as np
import pytest

from caaed.data import SynthLanguage, synth_transcripts


@pytest.fixture(scope="session")
def synth_lines():
    rng = np.random.default_rng(0)
    return synth_transcripts(SynthLanguage.default(), 1000, rng)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def acceptance():
    def record(criterion: str, passed: bool, detail: str):
        ACCEPTANCE.append((criterion, passed, detail))
        print(f"[acceptance] {criterion}: {'PASS' if passed else 'FAIL'} - {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {criterion:<28s} {detail}")
