import numpy as np
import pytest
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from wviab.measures import EmpiricalMeasure

coords = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


@st.composite
def clouds(draw, dim=None, max_atoms=6):
    d = draw(st.integers(1, 3)) if dim is None else dim
    n = draw(st.integers(1, max_atoms))
    pts = draw(hnp.arrays(float, (n, d), elements=coords))
    w = draw(hnp.arrays(float, n, elements=st.floats(0.05, 1.0)))
    return EmpiricalMeasure(pts, w / w.sum())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
