import pytest

from distctx.config import ExperimentConfig, dump_config
from distctx.experiment import run_experiment

_RUNS: dict[str, object] = {}


def cached_run(cfg: ExperimentConfig):
    """Run ``cfg`` once per session; several tests share the larger simulations."""
    key = dump_config(cfg)
    if key not in _RUNS:
        _RUNS[key] = run_experiment(cfg)
    return _RUNS[key]


@pytest.fixture
def run_cached():
    return cached_run
