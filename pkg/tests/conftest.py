import sys
from pathlib import Path

import pytest
from hypothesis import settings, strategies as st

from vfgkit.geometry import BBox

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=200, deadline=None)
settings.load_profile("default")

coord = st.floats(min_value=-50, max_value=150, allow_nan=False, allow_infinity=False)
size = st.floats(min_value=0, max_value=80, allow_nan=False, allow_infinity=False)


@st.composite
def boxes(draw, positive=False):
    lo = 0.5 if positive else 0.0
    w = draw(st.floats(min_value=lo, max_value=80))
    h = draw(st.floats(min_value=lo, max_value=80))
    return BBox(draw(coord), draw(coord), w, h)


@st.composite
def grid_boxes(draw):
    """Integer boxes on a small canvas, so overlaps and ties are common."""
    x = draw(st.integers(0, 30))
    y = draw(st.integers(0, 30))
    return BBox(x, y, draw(st.integers(1, 20)), draw(st.integers(1, 20)))


@pytest.fixture
def tmp_cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path
