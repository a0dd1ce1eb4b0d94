import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

from rotlab import CostSpec, DiscreteMeasure, make_divergence  # noqa: E402
from rotlab.geometry import rng  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

SPECS = {
    "kl": make_divergence("kl"),
    "tsallis1.5": make_divergence("tsallis", 1.5),
    "tsallis1.2": make_divergence("tsallis", 1.2),
    "quad": make_divergence("quad"),
}
SQ = CostSpec("sqeuclidean")


def random_measure(n, d, seed, skew=0.3):
    g = rng(seed)
    w = g.random(n) + skew
    return DiscreteMeasure(g.random((n, d)), w / w.sum())


@pytest.fixture(params=sorted(SPECS))
def spec(request):
    return SPECS[request.param]


@pytest.fixture
def two_point():
    return DiscreteMeasure.uniform(np.array([[0.0], [1.0]]))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
