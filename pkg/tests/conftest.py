"""Shared, session-scoped fixtures for the slower module tests."""

import numpy as np
import pytest

from weightflow import nn
from weightflow.codec import VaeConfig, VaeTrainConfig, WeightSpace, make_codec
from weightflow.rng import derive
from weightflow.zoo import DatasetSpec, TrainConfig, build_zoo, make_dataset

BASE_ARCH = nn.mlp_arch(64, [16], 4)


@pytest.fixture(scope="session")
def base_arch():
    return BASE_ARCH


@pytest.fixture(scope="session")
def sinusoid_ds():
    return make_dataset(DatasetSpec("sinusoid"))


@pytest.fixture(scope="session")
def zoo50(sinusoid_ds):
    """50 seeds of the base MLP on the default dataset, final epoch only."""
    return build_zoo(sinusoid_ds, BASE_ARCH, TrainConfig(epochs=30), 50, {30}, master_seed=0)


@pytest.fixture(scope="session")
def zoo_vae(zoo50):
    space = WeightSpace.for_arch(BASE_ARCH)
    codec = make_codec("vae", space, derive(0, "vae"), VaeConfig())
    vectors = space.to_vectors(zoo50)
    curve = codec.fit(vectors, derive(1, "vae-train"), VaeTrainConfig(steps=3000))
    return codec, curve


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def run_cfg():
    from weightflow.config import default_config

    return default_config()


@pytest.fixture(scope="session")
def primary_field(run_cfg, zoo50, zoo_vae):
    """Unconditional field over the VAE latents of ``zoo50`` (config defaults)."""
    from weightflow.experiments import pipelines as P

    field, curve = P.train_unconditional(run_cfg, zoo_vae[0], zoo50)
    return field, curve


@pytest.fixture(scope="session")
def init_study_models(run_cfg):
    """(datasets, mid-training records, codec, field) for the initialization study."""
    from weightflow.experiments import pipelines as P

    datasets = P.init_study_datasets(run_cfg)
    records = P.init_study_zoo(run_cfg, datasets[0])
    codec, _ = P.fit_codec(run_cfg, records, tag="init_study")
    field, _ = P.train_unconditional(run_cfg, codec, records, tag="init_study")
    return datasets, records, codec, field


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
