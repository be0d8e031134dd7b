import pytest

from neuromesh.config import system_from_dict


def make_system(**overrides):
    doc = {
        "mesh": {"width": 2, "height": 2},
        "cores_per_chip": 4,
        "perf_levels": [{"mhz": 100, "volts": 0.5}, {"mhz": 200, "volts": 0.6}, {"mhz": 400, "volts": 0.8}],
        "max_neurons_per_core": 16,
        "seed": 1,
    }
    doc.update(overrides)
    return system_from_dict(doc)


@pytest.fixture
def small_sys():
    return make_system()


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion, then assert."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        _CRITERIA[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
