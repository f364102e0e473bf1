import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

_ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class Criterion:
    def __init__(self):
        self.line = None

    def check(self, number: int, title: str, ok: bool, detail: str) -> None:
        self.line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}"
        print(self.line)
        assert ok, self.line


@pytest.fixture
def criterion(request):
    c = Criterion()
    yield c
    _ACCEPTANCE.append(c.line or f"FAIL {request.node.name}: raised before reporting")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: s.split("criterion")[-1]):
            terminalreporter.write_line(line)
