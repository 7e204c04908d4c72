import numpy as np
import pytest
from hypothesis import strategies as st

from codeal.panel import PanelDataset, build_four_block, extract_block_partition, four_block_indicator


def staggered_pattern(group_sizes, segment_lengths):
    """Sorted staggered W: group xi adopts at the start of segment r + 2 - xi."""
    r = len(group_sizes)
    assert len(segment_lengths) == r
    re = np.concatenate([[0], np.cumsum(group_sizes)])
    ce = np.concatenate([[0], np.cumsum(segment_lengths)])
    W = np.zeros((re[-1], ce[-1]), dtype=np.int8)
    for xi in range(2, r + 1):
        W[re[xi - 1]:re[xi], ce[r + 1 - xi]:] = 1
    return W


# layout of a five-group design: blocks with xi + eta > 6 are treated
FIG_GROUPS = (3, 2, 4, 2, 3)
FIG_SEGMENTS = (4, 3, 5, 2, 3)


@pytest.fixture
def fig_pattern():
    return staggered_pattern(FIG_GROUPS, FIG_SEGMENTS)


@st.composite
def staggered_patterns(draw, max_n=60, max_t=60, max_r=6):
    r = draw(st.integers(1, max_r))
    n = draw(st.integers(r, max_n))
    t = draw(st.integers(r, max_t))
    rng = np.random.default_rng(draw(st.integers(0, 2 ** 32 - 1)))
    cut_rows = np.sort(rng.choice(np.arange(1, n), r - 1, replace=False)) if r > 1 else []
    cut_cols = np.sort(rng.choice(np.arange(1, t), r - 1, replace=False)) if r > 1 else []
    groups = np.diff(np.concatenate([[0], cut_rows, [n]])).astype(int)
    segments = np.diff(np.concatenate([[0], cut_cols, [t]])).astype(int)
    return staggered_pattern(tuple(groups), tuple(segments))


def four_block_view(Y, n_control, n_pre, X=None):
    """The single (2, 2) view of a four-block panel."""
    Y = np.asarray(Y, dtype=float)
    W = four_block_indicator(*Y.shape, n_control, n_pre)
    panel = PanelDataset(Y, W, X)
    return build_four_block(panel, extract_block_partition(W), 2, 2)
