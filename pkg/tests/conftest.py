import json
import logging

import numpy as np
import pytest
from click.testing import CliRunner
from seqexp import cli
from seqexp.models import CustomPair, ExponentialPair, GaussianPair
from seqexp.renewal import constants_series
from seqexp.workers import RandomStreams

SEED = 1234567
CUSTOM_MOMENTS = {'D0': 0.5, 'D1': 0.5, 'V0': 1.0, 'V1': 1.0}


def pytest_addoption(parser):
    parser.addoption(
        "--runmulti", action="store_true", default=False,
        help="run multiprocessing tests"
    )
    parser.addoption(
        "--runslow", action="store_true", default=False,
        help="run long Monte Carlo acceptance tests"
    )


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "multi: mark test as using multiprocessing"
    )
    config.addinivalue_line(
        "markers", "slow: mark test as a long Monte Carlo run"
    )


def pytest_collection_modifyitems(config, items):
    skips = {
        option: pytest.mark.skip(reason=f"need --{option} option to run")
        for option in ("runmulti", "runslow")
        if not config.getoption(f"--{option}")
    }
    for item in items:
        if "multi" in item.keywords and "runmulti" in skips:
            item.add_marker(skips["runmulti"])
        if "slow" in item.keywords and "runslow" in skips:
            item.add_marker(skips["runslow"])


def gaussian_llr_sampler(hypothesis, rng, size):
    """LLR draws of N(0,1) against N(1,1), for custom pairs in tests."""
    theta = 0.0 if hypothesis == 0 else 1.0
    return 0.5 - rng.normal(theta, 1.0, size=size)


class SeqExpRunner(CliRunner):
    def invoke(self, cli=cli, args=None, **kwargs):
        return super().invoke(cli, args=args, **kwargs)


@pytest.fixture()
def logger():
    return logging.getLogger()


@pytest.fixture()
def seed():
    return SEED


@pytest.fixture()
def streams():
    return RandomStreams(seed=SEED)


@pytest.fixture()
def rng():
    return np.random.default_rng(SEED)


@pytest.fixture()
def gaussian():
    return GaussianPair(0.0, 1.0)


@pytest.fixture()
def exponential():
    return ExponentialPair(1.0, 2.0)


@pytest.fixture(params=['gaussian', 'exponential'])
def pair(request, gaussian, exponential):
    return {'gaussian': gaussian, 'exponential': exponential}[request.param]


@pytest.fixture()
def gaussian_constants(gaussian):
    return constants_series(gaussian)


@pytest.fixture()
def exponential_constants(exponential):
    return constants_series(exponential)


@pytest.fixture()
def custom_moments():
    return dict(CUSTOM_MOMENTS)


@pytest.fixture()
def arithmetic_pair_dict(custom_moments):
    return {'kind': 'custom', 'moments': custom_moments, 'span': 1.0}


@pytest.fixture()
def arithmetic_pair_json(arithmetic_pair_dict):
    return json.dumps(arithmetic_pair_dict)


@pytest.fixture()
def sampled_pair_dict(custom_moments):
    return {
        'kind': 'custom',
        'moments': custom_moments,
        'sampler': 'conftest:gaussian_llr_sampler',
    }


@pytest.fixture()
def sampled_pair(sampled_pair_dict):
    return CustomPair.from_dict(sampled_pair_dict)


@pytest.fixture()
def plan_dict():
    return {
        'pair': {'kind': 'gaussian', 'theta0': 0.0, 'theta1': 1.0},
        'seed': SEED,
        'trials': 3000,
        'points': [
            {'alpha': 2.0, 'beta': 3.0},
            {'n': 40, 'eps': 0.2, 'eta': 0.05},
            {'n': 40, 'eta': 1.0},
        ],
    }


@pytest.fixture()
def plan_json(plan_dict):
    return json.dumps(plan_dict)


@pytest.fixture()
def plan_file(plan_json, tmp_path):
    path = tmp_path / 'plan.json'
    path.write_text(plan_json)
    return str(path)


@pytest.fixture
def runner():
    return SeqExpRunner()
