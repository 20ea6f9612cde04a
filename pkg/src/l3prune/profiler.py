"""Zero-shot layerwise loss profiling and two-minima prune selection.

A profile runs one forward pass per tuple batch and evaluates the pooled
contrastive loss at every layer of that same pass. Selection splits the
layer axis at floor(n/2) and takes the loss argmin of each half: the first
half yields the small variant's depth, the second half the large one's.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import data as data_mod
from . import numeric, pooling
from .errors import L3PruneError
from .model import Transformer, forward_all
from .objective import DEFAULT_TEMPERATURE, ContrastiveBatch, info_nce
from .prune import PruneReport, PruneSpec, prune_layers

DEFAULT_SAMPLE_COUNT = 256
DEFAULT_BATCH_SIZE = 32


@dataclass
class LayerLossProfile:
    """Mean contrastive loss per layer (index 0 of ``losses`` is layer 1)."""

    losses: np.ndarray
    sample_count: int
    seed: int
    batch_size: int

    def to_csv(self) -> str:
        lines = ["layer,loss"]
        lines += [f"{i + 1},{v:.12g}" for i, v in enumerate(self.losses)]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class L3Selection:
    small_layer: int
    large_layer: int
    midpoint: int

    def __post_init__(self):
        if not 1 <= self.small_layer <= self.midpoint < self.large_layer:
            raise L3PruneError(
                f"invalid selection: small={self.small_layer} "
                f"midpoint={self.midpoint} large={self.large_layer}"
            )

    def to_text(self) -> str:
        return (
            f"small_layer={self.small_layer}\n"
            f"large_layer={self.large_layer}\n"
            f"midpoint={self.midpoint}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> "L3Selection":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if line:
                key, _, value = line.partition("=")
                kv[key] = int(value)
        try:
            return cls(kv["small_layer"], kv["large_layer"], kv["midpoint"])
        except KeyError as exc:
            raise L3PruneError(f"selection text missing field {exc}") from exc


def profile(
    model: Transformer,
    dataset,
    sample_count: int = DEFAULT_SAMPLE_COUNT,
    seed: int = 0,
    batch_size: int = DEFAULT_BATCH_SIZE,
    temperature: float = DEFAULT_TEMPERATURE,
) -> LayerLossProfile:
    """Average each layer's pooled contrastive loss over a seeded sample.

    Per batch all three tuple sides run in one forward pass whose hidden
    states feed every layer's pooling and loss; per-layer values are the
    unweighted mean over batches.
    """
    if not dataset:
        raise L3PruneError("cannot profile an empty dataset")
    if not 1 <= sample_count <= len(dataset):
        raise L3PruneError(
            f"sample_count {sample_count} out of range 1..{len(dataset)}"
        )
    indices = data_mod.sample_indices(len(dataset), sample_count, seed)
    sampled = [dataset[i] for i in indices]
    n = model.config.n_layers
    sums = np.zeros(n)
    batches = 0
    with numeric.no_grad():
        for start in range(0, len(sampled), batch_size):
            chunk = sampled[start : start + batch_size]
            batch, mask = pooling.build_tuple_batch(chunk)
            hidden = forward_all(model, batch)
            for layer in range(1, n + 1):
                pooled = pooling.weighted_mean_pool(hidden.per_layer[layer], mask)
                q, p, neg = pooling.split_pooled(pooled, len(chunk))
                sums[layer - 1] += info_nce(
                    ContrastiveBatch(q, p, neg, temperature=temperature)
                ).item()
            batches += 1
    return LayerLossProfile(
        losses=sums / batches,
        sample_count=sample_count,
        seed=seed,
        batch_size=batch_size,
    )


def l3prune_select(profile: LayerLossProfile) -> L3Selection:
    """Per-half loss argmin with ties broken toward the smaller layer index."""
    losses = np.asarray(profile.losses, dtype=np.float64)
    n = len(losses)
    if n < 2:
        raise L3PruneError(f"selection needs at least 2 layers, got {n}")
    midpoint = n // 2
    small = 1 + int(np.argmin(losses[:midpoint]))
    large = midpoint + 1 + int(np.argmin(losses[midpoint:]))
    return L3Selection(small_layer=small, large_layer=large, midpoint=midpoint)


@dataclass
class Variants:
    """The two pruned models produced by a selection, with their reports."""

    large: Transformer
    large_report: PruneReport
    small: Transformer
    small_report: PruneReport


def make_variants(model: Transformer, selection: L3Selection) -> Variants:
    if selection.large_layer > model.config.n_layers:
        raise L3PruneError(
            f"selection targets layer {selection.large_layer} "
            f"but model has {model.config.n_layers}"
        )
    large, large_report = prune_layers(
        model, PruneSpec.by_layers(selection.large_layer, provenance="l3prune-large")
    )
    small, small_report = prune_layers(
        model, PruneSpec.by_layers(selection.small_layer, provenance="l3prune-small")
    )
    return Variants(large, large_report, small, small_report)
