import copy
import logging

import pytest
import yaml


SMALL_RUN = {
    "name": "small",
    "seed": 3,
    "algorithm": {
        "kind": "zeroone_adam",
        "hyper": {"n": 2, "d": 8, "T": 60, "momentum_order": "post"},
    },
    "schedules": {
        "variance": {"kappa": 4},
        "sync": {"warmup_steps": 10, "doubling_period": 10, "clip": 8},
        "lr": {"kind": "constant", "params": {"gamma": 0.01}},
    },
    "problem": {"kind": "quadratic", "sigma": 0.5},
}


@pytest.fixture(autouse=True)
def reset_root_handlers():
    yield
    logging.getLogger().handlers.clear()


@pytest.fixture
def small_run():
    return copy.deepcopy(SMALL_RUN)


@pytest.fixture
def write_config(tmp_path):
    def _write(data, name="run.yaml"):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data), encoding="utf-8")
        return path

    return _write
