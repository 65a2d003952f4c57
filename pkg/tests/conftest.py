import math

import pytest

from vendorcount.hierarchical import FitConfig, HyperPrior, calibrate

# Prior used for synthetic recovery: cell-level response rates near 0.3 and
# a few hundred uncredentialed vendors per cell.
CALIBRATION_PRIOR = HyperPrior(
    mu_p=(math.log(0.3 / 0.7), 0.5),
    mu_0=(math.log(300.0), 0.5),
    sigma_p=0.5,
    sigma_0=0.5,
    sigma_1=0.5,
)


@pytest.fixture(scope="session")
def model4_calibration():
    """200 synthetic Model 4 fits at K = 6, shared by the acceptance and module suites."""
    config = FitConfig(chains=4, warmup=3000, iters=6000, thin=3, seed=0)
    return calibrate(6, 1000, CALIBRATION_PRIOR, fits=200, seed=20240403, config=config, level=0.90)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for a headline criterion, then assert it."""

    def record(criterion: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
