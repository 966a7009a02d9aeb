import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from midilstm.dataset import CorpusTooSmall, make_batches


def test_hand_enumerated_example():
    bs = make_batches(np.arange(10), 2, 2)
    assert len(bs) == 2
    (x0, y0), (x1, y1) = bs.blocks
    assert x0.tolist() == [[0, 1], [4, 5]] and y0.tolist() == [[1, 2], [5, 6]]
    assert x1.tolist() == [[2, 3], [6, 7]] and y1.tolist() == [[3, 4], [7, 8]]


def test_minimal():
    bs = make_batches([7, 9], 1, 1)
    assert [(x.tolist(), y.tolist()) for x, y in bs] == [([[7]], [[9]])]


def test_too_small():
    with pytest.raises(CorpusTooSmall):
        make_batches(np.arange(4), 2, 2)
    make_batches(np.arange(5), 2, 2)


def test_blocks_are_read_only():
    x, _ = make_batches(np.arange(10), 2, 2).blocks[0]
    with pytest.raises(ValueError):
        x[0, 0] = 5


@given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 60))
def test_successor_and_coverage(B, T, extra):
    n = B * T + 1 + extra
    ids = np.arange(n) * 3 + 1  # distinct values, so positions are recoverable
    bs = make_batches(ids, B, T)
    per_stream = (n - 1) // B
    assert len(bs) == per_stream // T
    for b in range(B):
        xs = np.concatenate([x[b] for x, _ in bs]) if len(bs) else np.array([])
        ys = np.concatenate([y[b] for _, y in bs]) if len(bs) else np.array([])
        start = b * per_stream
        assert xs.tolist() == ids[start:start + len(xs)].tolist()
        assert ys.tolist() == ids[start + 1:start + 1 + len(ys)].tolist()
    again = make_batches(ids, B, T)
    assert all((x1 == x2).all() and (y1 == y2).all() for (x1, y1), (x2, y2) in zip(bs, again))


def test_full_streams_covered_when_divisible():
    # (len - 1) / B a multiple of T: concatenated rows give each stream minus its last id
    ids = np.arange(2 * 6 + 1)
    bs = make_batches(ids, 2, 3)
    row0 = np.concatenate([x[0] for x, _ in bs])
    assert row0.tolist() == list(range(6))
