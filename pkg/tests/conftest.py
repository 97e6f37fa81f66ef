import numpy as np
import pytest

from dplab import Architecture, Batch, LayeredVector, init_model


def random_vector(layer_dims, seed, scale=1.0) -> LayeredVector:
    gen = np.random.Generator(np.random.Philox(key=seed))
    return LayeredVector(tuple(gen.standard_normal(d) * scale for d in layer_dims))


def random_problem(seed, d_in=None, hidden=None, n_classes=None, batch=None, activation="tanh"):
    """A random (model, batch) pair, small enough for finite differences."""
    gen = np.random.Generator(np.random.Philox(key=seed + 1000))
    d_in = d_in if d_in is not None else int(gen.integers(2, 6))
    n_classes = n_classes if n_classes is not None else int(gen.integers(2, 4))
    if hidden is None:
        hidden = (int(gen.integers(2, 5)),) if gen.random() < 0.5 else ()
    batch = batch if batch is not None else int(gen.integers(1, 6))
    arch = Architecture(d_in, hidden, n_classes, activation)
    model = init_model(arch, seed)
    inputs = gen.standard_normal((batch, d_in))
    labels = gen.integers(0, n_classes, size=batch)
    return model, Batch(inputs, labels)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(key=20240917))
