import dataclasses

import pytest

from slowfast_vr.models import LinearParams, make_linear_model, make_nonlinear_model

EPS = 1e-3
REFERENCE_LINEAR = LinearParams(lam=-10.0, p=4.0, q=0.5, A=1.2)

# (criterion number, PASS/FAIL, detail) filled in by test_acceptance
ACCEPTANCE_LINES = []


@pytest.fixture
def linear_params():
    return REFERENCE_LINEAR


@pytest.fixture
def linear_model():
    return make_linear_model(REFERENCE_LINEAR, EPS)


@pytest.fixture
def nonlinear_model():
    return make_nonlinear_model(EPS)


@pytest.fixture
def silent_linear_model():
    """Linear model with the noise switched off."""
    return dataclasses.replace(make_linear_model(REFERENCE_LINEAR, EPS), diffusion=lambda x, y: 0.0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")
