"""Stateful (batch x time) blocking of an id stream for truncated BPTT."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class CorpusTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class BatchSet:
    batch_size: int
    seq_len: int
    blocks: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)


def make_batches(ids, batch_size: int, seq_len: int) -> BatchSet:
    """Split ``ids`` into ``batch_size`` contiguous streams and cut them into windows.

    Row b of consecutive blocks walks stream b in order, so hidden state can
    be carried from one block to the next. Y is X shifted by one position.
    """
    if batch_size <= 0 or seq_len <= 0:
        raise ValueError("batch_size and seq_len must be positive")
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError("ids must be one-dimensional")
    if len(ids) < batch_size * seq_len + 1:
        raise CorpusTooSmall(
            f"need at least {batch_size * seq_len + 1} ids for batch_size={batch_size}, "
            f"seq_len={seq_len}; got {len(ids)}"
        )
    per_stream = (len(ids) - 1) // batch_size
    starts = np.arange(batch_size) * per_stream
    # each stream owns per_stream inputs plus one trailing target
    streams = ids[starts[:, None] + np.arange(per_stream + 1)[None, :]]
    blocks = []
    for k in range(per_stream // seq_len):
        lo = k * seq_len
        x = streams[:, lo:lo + seq_len].copy()
        y = streams[:, lo + 1:lo + seq_len + 1].copy()
        x.flags.writeable = False
        y.flags.writeable = False
        blocks.append((x, y))
    return BatchSet(batch_size, seq_len, tuple(blocks))
