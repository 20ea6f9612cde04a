"""Supervised contrastive loss over (query, positive, hard negative) triples.

For query i the candidate pool is every positive and every hard negative in
the batch (2B candidates, own positive included); similarities are cosines
scaled by a temperature. The loss is the mean cross entropy of picking the
own positive, taken in the query -> document direction only.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import numeric, pooling
from .errors import L3PruneError
from .model import Transformer
from .numeric import Tensor

DEFAULT_TEMPERATURE = 0.05
DEFAULT_BATCH_SIZE = 32


@dataclass
class ContrastiveBatch:
    queries: Tensor
    positives: Tensor
    hard_negatives: Tensor
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        shapes = {self.queries.shape, self.positives.shape, self.hard_negatives.shape}
        if len(shapes) != 1 or len(self.queries.shape) != 2:
            raise L3PruneError(f"embedding shapes differ or are not 2-D: {shapes}")
        if self.queries.shape[0] < 1:
            raise L3PruneError("contrastive batch must be non-empty")
        if not self.temperature > 0:
            raise L3PruneError(f"temperature must be positive, got {self.temperature}")


def info_nce(batch: ContrastiveBatch) -> Tensor:
    """Differentiable scalar contrastive loss; zero-norm rows are an error."""
    inv_t = 1.0 / batch.temperature
    q = numeric.normalize_rows(batch.queries)
    p = numeric.normalize_rows(batch.positives)
    n = numeric.normalize_rows(batch.hard_negatives)
    sims_p = numeric.matmul(q, p, transpose_b=True)
    sims_n = numeric.matmul(q, n, transpose_b=True)
    logits = numeric.scale(numeric.concat(sims_p, sims_n, axis=1), inv_t)
    log_denom = numeric.logsumexp(logits, axis=1)
    pos_logit = numeric.scale(numeric.diagonal(sims_p), inv_t)
    return numeric.reduce_mean(numeric.sub(log_denom, pos_logit))


def layer_loss(
    model: Transformer,
    tuples,
    layer: int,
    batch_size: int = DEFAULT_BATCH_SIZE,
    temperature: float = DEFAULT_TEMPERATURE,
) -> float:
    """Mean contrastive loss of the given layer's embeddings over the tuples.

    Embeds batch_size tuples at a time and averages the per-batch losses
    (unweighted); runs without gradient recording.
    """
    if not tuples:
        raise L3PruneError("layer_loss requires at least one tuple")
    losses = []
    with numeric.no_grad():
        for start in range(0, len(tuples), batch_size):
            chunk = tuples[start : start + batch_size]
            q, p, n = pooling.embed_tuples(model, chunk, layer=layer)
            losses.append(
                info_nce(ContrastiveBatch(q, p, n, temperature=temperature)).item()
            )
    return sum(losses) / len(losses)
