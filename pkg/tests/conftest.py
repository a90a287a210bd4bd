"""Pytest configuration and fixtures"""

import pytest

from splatproto.core.backbone import BackboneHyper, BackboneParams
from splatproto.core.splat_io import SplatDataset, generate_synthetic, split_dataset

TINY_WIDTHS = [8, 8, 16, 16, 8]


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run desk-scale acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale training runs (enable with --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def disable_colors():
    """Disable colors in tests."""
    import os
    os.environ["NO_COLOR"] = "1"
    yield
    if "NO_COLOR" in os.environ:
        del os.environ["NO_COLOR"]


def tiny_hyper(grid_size=2, channels=8, n_classes=2, lambda_density=3.5):
    return BackboneHyper(grid_size=grid_size, channels=channels, n_classes=n_classes,
                         lambda_density=lambda_density,
                         stn3_widths=list(TINY_WIDTHS), stn64_widths=list(TINY_WIDTHS))


def tiny_samples(classes=("sphere", "box"), per_class=4, n_primitives=48, grid_size=2, seed=0):
    samples = []
    for label, name in enumerate(classes):
        for i in range(per_class):
            samples.append(generate_synthetic(name, n_primitives, seed=seed + 100 * label + i,
                                              grid_size=grid_size, label=label,
                                              sample_id=f"{name}_{i:04d}"))
    return samples


def tiny_dataset(classes=("sphere", "box"), per_class=4, grid_size=2, seed=0):
    samples = tiny_samples(classes, per_class, grid_size=grid_size, seed=seed)
    split = split_dataset([(s.sample_id, s.label) for s in samples], [0.5, 0.25, 0.25], seed,
                          class_names=list(classes))
    return SplatDataset.from_samples(samples, split)


@pytest.fixture
def hyper():
    return tiny_hyper()


@pytest.fixture
def params(hyper):
    return BackboneParams.initialize(hyper, seed=0)


@pytest.fixture
def samples():
    return tiny_samples()


@pytest.fixture
def dataset():
    return tiny_dataset()
