import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nonlocal_fk import Gaussian, Grid, ModelParams, build_kernel, combined_kernel

settings.register_profile(
    "repo",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("repo")


@pytest.fixture
def grid64():
    return Grid(1, 20.0, 64)


@pytest.fixture
def params():
    # theta = 1, beta = 1; with a+ = a- the kernel J_theta equals a+
    return ModelParams(2.0, 1.0, 1.0)


@pytest.fixture
def kernel64(grid64):
    return build_kernel(Gaussian(1.0), grid64)


@pytest.fixture
def J_theta64(params, kernel64):
    return combined_kernel(params, kernel64, kernel64, params.theta)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record and print one pass/fail line, then assert."""

    def record(k: int, title: str, ok: bool, detail: str = ""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
