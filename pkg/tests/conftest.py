import pytest

from airsample.experiment import ExperimentConfig, ExperimentData
from airsample.synth import generate, noiseless_scenario, noisy_scenario

O3_FEATURES = ["o3_s", "no2_s", "temperature", "humidity"]


def quick_config(**sections) -> ExperimentConfig:
    """Config for in-memory data: O3 target, fixed features, few seeds."""
    d = {
        "features": {"target": "O3", "O3": {"fixed": O3_FEATURES}},
        "evaluation": {"seeds": [0, 1, 2]},
    }
    for name, value in sections.items():
        d.setdefault(name, {}).update(value)
    return ExperimentConfig.from_dict(d)


@pytest.fixture(scope="session")
def noisy_small():
    raw, refs, truth = generate(noisy_scenario(duration_days=6, seed=11))
    return raw, refs, truth, ExperimentData.from_raw(raw, refs)


@pytest.fixture(scope="session")
def noiseless_small():
    raw, refs, truth = generate(noiseless_scenario(duration_days=6, seed=3))
    return raw, refs, truth, ExperimentData.from_raw(raw, refs)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[str, str] = {}


def record_criterion(name: str, passed: bool | None, detail: str) -> bool | None:
    """Store the summary line; ``passed=None`` marks a skipped criterion."""
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    ACCEPTANCE[name] = f"{name} {status}  {detail}"
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda s: int(s[1:])):
        terminalreporter.write_line(ACCEPTANCE[name])
