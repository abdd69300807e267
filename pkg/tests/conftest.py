import pytest

from sgcis.field_model import LinearSGField
from sgcis.trajectory import KinematicParams

# Toy SI magnet: b1 a / b0 = 0.25, precession angle ~19 rad, b = 4 a.
BEAM_A = 1e-3


@pytest.fixture(scope="session")
def toy_magnet():
    return KinematicParams(mass=3.75e-28, mu0=1e-33, v_y=100.0, t0=0.0, tf=2.0, td=4.0,
                           field=LinearSGField(1.0, 250.0))


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    def _report(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
