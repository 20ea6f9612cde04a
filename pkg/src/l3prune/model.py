"""Toy decoder-only transformer exposing its full residual stream.

Blocks are pre-norm (RMS) with causal multi-head attention under rotary
position embeddings and a SwiGLU MLP, both added to the residual stream.
``forward_all`` returns the stream after the embedding and after every
block, all taken before the final norm, so that any prefix of the layer
stack produces exactly the same states as the full model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import numeric
from .errors import L3PruneError
from .numeric import Tensor

ROPE_BASE = 10000.0
INIT_STD = 0.02
# Finite stand-in for -inf in masked attention scores; exp() underflows it
# to exactly 0 after max subtraction, keeping all tensor data finite.
MASK_VALUE = -1e30


class ConfigError(L3PruneError):
    """A model configuration field violates its constraints."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int
    n_layers: int
    n_heads: int
    d_ff: int
    max_seq_len: int
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int):
                raise ConfigError(f"{f.name} must be an int, got {type(v).__name__}")
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}"
            )
        if (self.d_model // self.n_heads) % 2 != 0:
            raise ConfigError(
                f"head dim {self.d_model // self.n_heads} must be even for rotary pairs"
            )

    def with_layers(self, n_layers: int) -> "ModelConfig":
        return ModelConfig(
            vocab_size=self.vocab_size,
            d_model=self.d_model,
            n_layers=n_layers,
            n_heads=self.n_heads,
            d_ff=self.d_ff,
            max_seq_len=self.max_seq_len,
            seed=self.seed,
        )

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            kv[key] = int(value)
        names = {f.name for f in fields(cls)}
        unknown = set(kv) - names
        missing = names - set(kv)
        if unknown or missing:
            raise ConfigError(f"bad config text: unknown={sorted(unknown)} missing={sorted(missing)}")
        return cls(**kv)


@dataclass
class TokenBatch:
    """Padded id matrix [batch, seq] plus the true length of each row."""

    ids: np.ndarray
    lengths: np.ndarray

    @classmethod
    def from_sequences(cls, sequences: list[list[int]], pad_id: int = 0) -> "TokenBatch":
        if not sequences:
            raise L3PruneError("token batch must contain at least one sequence")
        lengths = np.array([len(s) for s in sequences], dtype=np.int64)
        if lengths.min() == 0:
            raise L3PruneError("empty sequence in token batch")
        width = int(lengths.max())
        ids = np.full((len(sequences), width), pad_id, dtype=np.int64)
        for i, s in enumerate(sequences):
            ids[i, : len(s)] = s
        return cls(ids=ids, lengths=lengths)

    @property
    def batch_size(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]


@dataclass
class HiddenStates:
    """Residual-stream snapshots: index 0 after embedding, index L after block L."""

    per_layer: list[Tensor]

    @property
    def n_layers(self) -> int:
        return len(self.per_layer) - 1


BLOCK_MATRIX_NAMES = ("wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down")


class Block:
    """One transformer block: x + attn(norm(x)) then x + mlp(norm(x))."""

    def __init__(self, attn_norm, wq, wk, wv, wo, mlp_norm, w_gate, w_up, w_down):
        self.attn_norm = attn_norm
        self.wq = wq
        self.wk = wk
        self.wv = wv
        self.wo = wo
        self.mlp_norm = mlp_norm
        self.w_gate = w_gate
        self.w_up = w_up
        self.w_down = w_down

    def named_tensors(self):
        yield "attn_norm", self.attn_norm
        for name in BLOCK_MATRIX_NAMES[:4]:
            yield name, getattr(self, name)
        yield "mlp_norm", self.mlp_norm
        for name in BLOCK_MATRIX_NAMES[4:]:
            yield name, getattr(self, name)

    def copy(self) -> "Block":
        return Block(*(Tensor(t.data.copy()) for _, t in self.named_tensors()))


@dataclass
class Transformer:
    token_embedding: Tensor
    layers: list[Block]
    final_norm: Tensor
    config: ModelConfig
    prune_report: object | None = field(default=None, repr=False)

    def named_tensors(self):
        yield "token_embedding", self.token_embedding
        for i, block in enumerate(self.layers):
            for name, t in block.named_tensors():
                yield f"layers.{i}.{name}", t
        yield "final_norm", self.final_norm


def init(config: ModelConfig) -> Transformer:
    """Build a transformer with seeded normal(0, 0.02) weights.

    Norm gains start at 1 so that untrained blocks mix signal rather than
    suppressing it; all matrices draw from one rng in a fixed order, so the
    same seed always yields bit-identical weights.
    """
    rng = np.random.default_rng(config.seed)
    d, ff = config.d_model, config.d_ff

    def mat(*shape):
        return Tensor(rng.normal(0.0, INIT_STD, size=shape))

    embedding = mat(config.vocab_size, d)
    blocks = []
    for _ in range(config.n_layers):
        blocks.append(
            Block(
                attn_norm=Tensor(np.ones(d)),
                wq=mat(d, d),
                wk=mat(d, d),
                wv=mat(d, d),
                wo=mat(d, d),
                mlp_norm=Tensor(np.ones(d)),
                w_gate=mat(ff, d),
                w_up=mat(ff, d),
                w_down=mat(d, ff),
            )
        )
    return Transformer(
        token_embedding=embedding,
        layers=blocks,
        final_norm=Tensor(np.ones(d)),
        config=config,
    )


def count_params(model: Transformer) -> int:
    """Exact scalar parameter count: embedding + per-block + final norm."""
    return sum(t.data.size for _, t in model.named_tensors())


def _rope_tables(seq_len: int, head_dim: int) -> tuple[np.ndarray, np.ndarray]:
    half = head_dim // 2
    freqs = ROPE_BASE ** (-np.arange(half, dtype=np.float64) * 2.0 / head_dim)
    angles = np.arange(seq_len, dtype=np.float64)[:, None] * freqs[None, :]
    return np.cos(angles), np.sin(angles)


def _causal_mask(seq_len: int) -> np.ndarray:
    mask = np.zeros((seq_len, seq_len), dtype=np.float64)
    mask[np.triu_indices(seq_len, k=1)] = MASK_VALUE
    return mask


def _linear(x: Tensor, weight: Tensor, name: str, adapters) -> Tensor:
    """x @ weight.T, plus the low-rank adapter path when one is attached."""
    out = numeric.matmul(x, weight, transpose_b=True)
    if adapters:
        adapter = adapters.get(name)
        if adapter is not None:
            low = numeric.matmul(x, adapter.A, transpose_b=True)
            out = numeric.add(out, numeric.scale(
                numeric.matmul(low, adapter.B, transpose_b=True),
                adapter.alpha / adapter.rank,
            ))
    return out


def _block_forward(block, x, cos, sin, mask, n_heads, prefix, adapters):
    b, s, d = x.shape
    hd = d // n_heads

    def split_heads(t):
        return numeric.transpose(numeric.reshape(t, (b, s, n_heads, hd)), (0, 2, 1, 3))

    xn = numeric.rms_norm(x, block.attn_norm)
    q = numeric.rope(split_heads(_linear(xn, block.wq, prefix + "wq", adapters)), cos, sin)
    k = numeric.rope(split_heads(_linear(xn, block.wk, prefix + "wk", adapters)), cos, sin)
    v = split_heads(_linear(xn, block.wv, prefix + "wv", adapters))
    scores = numeric.scale(numeric.matmul(q, k, transpose_b=True), 1.0 / math.sqrt(hd))
    attn = numeric.softmax(numeric.add(scores, mask), axis=-1)
    ctx = numeric.reshape(numeric.transpose(numeric.matmul(attn, v), (0, 2, 1, 3)), (b, s, d))
    x = numeric.add(x, _linear(ctx, block.wo, prefix + "wo", adapters))

    xn = numeric.rms_norm(x, block.mlp_norm)
    gate = numeric.silu(_linear(xn, block.w_gate, prefix + "w_gate", adapters))
    up = _linear(xn, block.w_up, prefix + "w_up", adapters)
    down = _linear(numeric.mul(gate, up), block.w_down, prefix + "w_down", adapters)
    return numeric.add(x, down)


# forward_all invocations, for single-pass cost assertions in tests
_FORWARD_CALLS = 0


def forward_calls() -> int:
    return _FORWARD_CALLS


def reset_forward_calls() -> None:
    global _FORWARD_CALLS
    _FORWARD_CALLS = 0


def forward_all(model: Transformer, tokens: TokenBatch, adapters=None) -> HiddenStates:
    """Run one pass and return all n_layers + 1 residual-stream states."""
    global _FORWARD_CALLS
    _FORWARD_CALLS += 1
    cfg = model.config
    if tokens.ids.size and (tokens.ids.min() < 0 or tokens.ids.max() >= cfg.vocab_size):
        raise L3PruneError(
            f"token id out of range for vocab_size={cfg.vocab_size}"
        )
    if tokens.lengths.min() < 1:
        raise L3PruneError("empty sequence in token batch")
    if tokens.width > cfg.max_seq_len:
        raise L3PruneError(
            f"sequence length {tokens.width} exceeds max_seq_len={cfg.max_seq_len}"
        )
    seq = tokens.width
    cos, sin = _rope_tables(seq, cfg.d_model // cfg.n_heads)
    mask = Tensor(_causal_mask(seq))
    x = numeric.embedding_lookup(model.token_embedding, tokens.ids)
    states = [x]
    for i, block in enumerate(model.layers):
        x = _block_forward(
            block, x, cos, sin, mask, cfg.n_heads, f"layers.{i}.", adapters
        )
        states.append(x)
    return HiddenStates(per_layer=states)
