import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cgcn.graph import build_graph, load_template  # noqa: E402


@pytest.fixture
def p3():
    return build_graph([(0, 1), (1, 2)], 3)


@pytest.fixture(scope="session")
def ntu():
    return load_template("ntu25")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
