from importlib import resources

import pytest

from mssr.network import load_network


def bundled(name: str):
    return load_network(resources.files("mssr") / "data" / name)


@pytest.fixture(scope="session")
def futile():
    return bundled("futile.net")


@pytest.fixture(scope="session")
def yeast():
    return bundled("yeast.net")


@pytest.fixture(scope="session")
def p53():
    return bundled("p53.net")


@pytest.fixture(scope="session")
def lotka():
    return bundled("lotka.net")


@pytest.fixture(scope="session")
def example():
    return bundled("projection_example.net")
