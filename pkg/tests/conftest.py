import numpy as np
import pytest

from glmls import SyntheticSpec, synthesize


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def multinomial_ds():
    """Small softmax classification problem with sampled one-hot labels."""
    return synthesize(
        SyntheticSpec(n=400, d=8, k=4, link="softmax", noise="multinomial"),
        seed=7,
    )


@pytest.fixture(scope="session")
def noiseless_ds():
    """Targets are exact conditional means, so zero loss is attainable."""
    return synthesize(
        SyntheticSpec(n=400, d=8, k=3, link="softmax", noise="noiseless-soft"),
        seed=11,
    )
