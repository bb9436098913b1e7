import pytest

from lwck import _backend, conv, lowrank


@pytest.fixture(params=_backend.available())
def backend(request, monkeypatch):
    """Run the test once per importable kernel backend."""
    k = _backend.get(request.param)
    monkeypatch.setattr(conv, "kernels", k)
    monkeypatch.setattr(lowrank, "kernels", k)
    return k


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE.items()):
            terminalreporter.write_line(line)
