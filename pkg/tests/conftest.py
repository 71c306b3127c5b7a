import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


_ACCEPTANCE: dict[str, str] = {}


@pytest.fixture
def record():
    """record(n, ok, detail): one pass/fail line per acceptance criterion."""

    def _record(n, ok: bool, detail: str) -> bool:
        line = f"criterion {str(n):>3}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[str(n)] = line
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE, key=lambda k: (int(k.rstrip("abc")), k)):
            terminalreporter.write_line(_ACCEPTANCE[n])
