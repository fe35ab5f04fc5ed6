import numpy as np
import pytest

from vba import scm_gaussian


@pytest.fixture
def appendix_config():
    """The worked example constants c1=3, c2=2, c3=-6, sigma1=0.5, sigma2=1."""
    return scm_gaussian.ScmConfig(c1=[3.0], c2=[2.0], c3=[-6.0], sigma1=[0.5], sigma2=[1.0], seed=0)


@pytest.fixture
def config3():
    return scm_gaussian.sample_config(3, 11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria record their verdicts here; printed at the end of the run
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
