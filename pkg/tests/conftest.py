import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    return ACCEPTANCE_LINES


class TrainedRuns:
    """Full preset training runs, each trained once per session and greedily evaluated on seeds 0-49."""

    def __init__(self):
        self._cache = {}

    def get(self, preset: str, seed: int):
        from victimtag.train import TRAIN_PRESETS, evaluate, train

        key = (preset, seed)
        if key not in self._cache:
            cfg = TRAIN_PRESETS[preset].replace(seed=seed)
            result = train(cfg)
            ev = evaluate(result.params, cfg.scenario, 50, cfg.bins, zeta=cfg.zeta, step_cap=cfg.step_cap)
            self._cache[key] = (result, ev)
        return self._cache[key]


@pytest.fixture(scope="session")
def trained_runs():
    return TrainedRuns()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
