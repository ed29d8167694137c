import numpy as np
import pytest
from hypothesis import settings

from evoad.genome import DENSE, VANILLA, Genome, LayerGene

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def dense_genome(widths, window=1, connections=(), attention=()):
    """Chained dense genome from a width list, e.g. [4, 8, 2]."""
    genes = tuple(LayerGene(DENSE, a, b) for a, b in zip(widths[:-1], widths[1:]))
    return Genome(VANILLA, window, genes, tuple(connections), tuple(attention))
