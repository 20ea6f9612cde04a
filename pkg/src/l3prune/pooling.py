"""Weighted mean pooling of hidden states into sequence embeddings.

Kept tokens (everything except instruction prefix and padding) are ranked
1..L in order and pooled with weights t / sum(1..L), so later tokens count
more and the weights always form a distribution over pooled content.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from . import numeric
from .errors import L3PruneError
from .model import TokenBatch, Transformer
from .numeric import Tensor


@dataclass
class PoolingMask:
    """Per-position keep flags and 1-based ranks among kept tokens."""

    keep: np.ndarray
    positions: np.ndarray

    @classmethod
    def from_lengths(
        cls, lengths: np.ndarray, instruction_lengths: np.ndarray | int, width: int
    ) -> "PoolingMask":
        lengths = np.asarray(lengths, dtype=np.int64)
        instr = np.broadcast_to(
            np.asarray(instruction_lengths, dtype=np.int64), lengths.shape
        )
        if np.any(instr >= lengths):
            raise L3PruneError("a sequence consists only of instruction tokens")
        cols = np.arange(width, dtype=np.int64)[None, :]
        keep = (cols >= instr[:, None]) & (cols < lengths[:, None])
        positions = np.where(keep, np.cumsum(keep, axis=1), 0)
        return cls(keep=keep, positions=positions)

    def validate(self) -> None:
        kept = self.keep.sum(axis=1)
        if np.any(kept < 1):
            raise L3PruneError("every sequence must keep at least one token")
        ranks = np.where(self.keep, self.positions, 0)
        for row, count in zip(ranks, kept):
            vals = row[row > 0]
            if not np.array_equal(np.sort(vals), np.arange(1, count + 1)):
                raise L3PruneError("kept-token ranks must be contiguous 1..L")

    def weights(self) -> np.ndarray:
        """Linear-in-rank weights, normalized to sum to 1 per row."""
        pos = self.positions.astype(np.float64)
        totals = pos.sum(axis=1, keepdims=True)
        if np.any(totals == 0.0):
            raise L3PruneError("cannot pool a fully masked sequence")
        return pos / totals


def weighted_mean_pool(hidden: Tensor, mask: PoolingMask) -> Tensor:
    if mask.keep.shape != hidden.shape[:2]:
        raise L3PruneError(
            f"mask shape {mask.keep.shape} does not match hidden {hidden.shape[:2]}"
        )
    return numeric.weighted_sum_seq(hidden, mask.weights())


def embed(
    model: Transformer,
    tokens: TokenBatch,
    instruction_lengths: np.ndarray | int = 0,
    layer: int | None = None,
) -> Tensor:
    """Pool the residual stream at ``layer`` (default: the last layer)."""
    n = model.config.n_layers
    if layer is None:
        layer = n
    if not 1 <= layer <= n:
        raise L3PruneError(f"layer {layer} out of range 1..{n}")
    hidden = model_mod.forward_all(model, tokens)
    mask = PoolingMask.from_lengths(tokens.lengths, instruction_lengths, tokens.width)
    return weighted_mean_pool(hidden.per_layer[layer], mask)


def build_tuple_batch(tuples, pad_id: int = 0) -> tuple[TokenBatch, PoolingMask]:
    """Stack queries, positives, and hard negatives of B tuples into one
    3B-row token batch (query rows first) so a single forward pass serves
    all three sides.

    Instructions are prepended to queries always and to documents only for
    symmetric tasks; the mask excludes them from pooling either way.
    """
    sequences: list[list[int]] = []
    instr_lens: list[int] = []
    for t in tuples:
        sequences.append(list(t.instruction) + list(t.query))
        instr_lens.append(len(t.instruction))
    for side in ("positive", "hard_negative"):
        for t in tuples:
            doc = list(getattr(t, side))
            if t.symmetric:
                sequences.append(list(t.instruction) + doc)
                instr_lens.append(len(t.instruction))
            else:
                sequences.append(doc)
                instr_lens.append(0)
    batch = TokenBatch.from_sequences(sequences, pad_id=pad_id)
    mask = PoolingMask.from_lengths(
        batch.lengths, np.array(instr_lens, dtype=np.int64), batch.width
    )
    return batch, mask


def split_pooled(pooled: Tensor, n_tuples: int) -> tuple[Tensor, Tensor, Tensor]:
    """Undo build_tuple_batch stacking: rows -> (queries, positives, negatives)."""
    if pooled.shape[0] != 3 * n_tuples:
        raise L3PruneError(
            f"pooled rows {pooled.shape[0]} do not match 3 x {n_tuples} tuples"
        )
    parts = [
        numeric.slice_rows(pooled, i * n_tuples, (i + 1) * n_tuples) for i in range(3)
    ]
    return parts[0], parts[1], parts[2]


def embed_tuples(
    model: Transformer, tuples, layer: int | None = None, adapters=None
) -> tuple[Tensor, Tensor, Tensor]:
    """Embed B tuples at one layer with a single forward pass."""
    n = model.config.n_layers
    if layer is None:
        layer = n
    if not 1 <= layer <= n:
        raise L3PruneError(f"layer {layer} out of range 1..{n}")
    batch, mask = build_tuple_batch(tuples)
    hidden = model_mod.forward_all(model, batch, adapters=adapters)
    pooled = weighted_mean_pool(hidden.per_layer[layer], mask)
    return split_pooled(pooled, len(tuples))
