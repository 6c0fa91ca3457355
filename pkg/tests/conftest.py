import random

import numpy as np
import pytest
import torch
from hypothesis import strategies as st

from sta_cascade.core import BoundingBox, ModelConfig


@st.composite
def boxes(draw, min_side=1e-3):
    x1 = draw(st.floats(0, 1 - min_side))
    y1 = draw(st.floats(0, 1 - min_side))
    x2 = draw(st.floats(x1 + min_side, 1))
    y2 = draw(st.floats(y1 + min_side, 1))
    return BoundingBox(x1, y1, x2, y2)


def random_box(rng: random.Random | np.random.Generator, min_side=0.05) -> BoundingBox:
    u = rng.random if isinstance(rng, random.Random) else (lambda: float(rng.random()))
    w = min_side + (1 - min_side) * u() * 0.6
    h = min_side + (1 - min_side) * u() * 0.6
    x1 = u() * (1 - w)
    y1 = u() * (1 - h)
    return BoundingBox(x1, y1, min(1.0, x1 + w), min(1.0, y1 + h))


@pytest.fixture
def tiny_config():
    return ModelConfig(d=16, num_layers=2, num_heads=2, num_nouns=5, num_verbs=4, k_train=4,
                       k_infer=6, top_verbs=3, image_size=8, grid=2, backbone_dim=8, ttc_hidden=8)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    random.seed(0)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
