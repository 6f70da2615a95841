import numpy as np
import pytest

from trflm.corpus import Vocabulary


class TabularPotential:
    """Test double: phi values looked up per id tuple (default elsewhere)."""

    def __init__(self, table=None, default=0.0):
        self.table = dict(table or {})
        self.default = default

    def phi_batch(self, ids):
        return np.array([self.table.get(tuple(int(i) for i in row), self.default)
                         for row in np.asarray(ids)])

    def phi(self, seq):
        return float(self.phi_batch(np.array([tuple(seq.ids)]))[0])


@pytest.fixture
def tiny_vocab():
    # payload symbols: <unk>, a, b
    return Vocabulary(("<s>", "</s>", "<unk>", "a", "b"))
