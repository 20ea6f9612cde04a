"""Contrastive tuple ingestion and a seeded synthetic topic corpus.

The JSONL interchange format stores whitespace-separated words; a plain
text vocabulary file (one token per line, line number = id) maps them to
ids, with one reserved id after the listed tokens for unknown words. The
synthetic generator partitions the id space into overlapping topic ranges
so that hard negatives drawn from an adjacent topic share tokens with the
query's topic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

UNK_WORD = "<unk>"


class Vocabulary:
    """Word <-> id mapping backed by a token-per-line file."""

    def __init__(self, words: list[str]):
        for i, w in enumerate(words):
            if not w or any(c.isspace() for c in w):
                raise DataError(f"vocabulary word {i} is empty or contains whitespace")
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise DataError("vocabulary contains duplicate words")
        self.unk_id = len(self.words)
        self.size = len(self.words) + 1

    @classmethod
    def from_file(cls, path: str | Path) -> "Vocabulary":
        path = Path(path)
        if not path.exists():
            raise DataError(f"vocabulary file not found: {path}")
        words = [line for line in path.read_text("utf-8").splitlines() if line]
        return cls(words)

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text("".join(w + "\n" for w in self.words), "utf-8")

    def encode(self, text: str) -> list[int]:
        return [self.index.get(w, self.unk_id) for w in text.split()]

    def decode(self, ids: list[int]) -> str:
        out = []
        for i in ids:
            if 0 <= i < len(self.words):
                out.append(self.words[i])
            elif i == self.unk_id:
                out.append(UNK_WORD)
            else:
                raise DataError(f"id {i} outside vocabulary of size {self.size}")
        return " ".join(out)

    @classmethod
    def synthetic(cls, vocab_size: int) -> "Vocabulary":
        """Placeholder words t0000.. for id-level generated corpora."""
        if vocab_size < 2:
            raise DataError(f"vocab_size must be >= 2, got {vocab_size}")
        return cls([f"t{i:04d}" for i in range(vocab_size - 1)])


@dataclass(frozen=True)
class ContrastiveTuple:
    instruction: tuple[int, ...]
    query: tuple[int, ...]
    positive: tuple[int, ...]
    hard_negative: tuple[int, ...]
    task_id: str
    symmetric: bool

    def validate(self, vocab_size: int) -> None:
        if not self.query or not self.positive:
            raise DataError(f"tuple for task {self.task_id}: query and positive must be non-empty")
        for name in ("instruction", "query", "positive", "hard_negative"):
            ids = getattr(self, name)
            if any(i < 0 or i >= vocab_size for i in ids):
                raise DataError(
                    f"tuple for task {self.task_id}: {name} id outside vocab of {vocab_size}"
                )


_JSONL_FIELDS = ("instruction", "query", "positive", "negative", "task", "symmetric")


def load_jsonl(path: str | Path, vocab: Vocabulary) -> list[ContrastiveTuple]:
    """Order-preserving load; errors name the offending line and field."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    tuples = []
    for lineno, line in enumerate(path.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(record, dict):
            raise DataError(f"line {lineno}: expected a JSON object")
        for field_name in _JSONL_FIELDS:
            if field_name not in record:
                raise DataError(f"line {lineno}: missing field {field_name}")
        t = ContrastiveTuple(
            instruction=tuple(vocab.encode(str(record["instruction"]))),
            query=tuple(vocab.encode(str(record["query"]))),
            positive=tuple(vocab.encode(str(record["positive"]))),
            hard_negative=tuple(vocab.encode(str(record["negative"]))),
            task_id=str(record["task"]),
            symmetric=bool(record["symmetric"]),
        )
        try:
            t.validate(vocab.size)
        except DataError as exc:
            raise DataError(f"line {lineno}: {exc}") from exc
        tuples.append(t)
    return tuples


def write_jsonl(tuples, vocab: Vocabulary, path: str | Path) -> None:
    lines = []
    for t in tuples:
        lines.append(
            json.dumps(
                {
                    "instruction": vocab.decode(list(t.instruction)),
                    "query": vocab.decode(list(t.query)),
                    "positive": vocab.decode(list(t.positive)),
                    "negative": vocab.decode(list(t.hard_negative)),
                    "task": t.task_id,
                    "symmetric": t.symmetric,
                },
                sort_keys=True,
            )
        )
    Path(path).write_text("".join(line + "\n" for line in lines), "utf-8")


@dataclass(frozen=True)
class SynthSpec:
    vocab_size: int
    n_topics: int
    tuple_count: int
    noise_rate: float
    seed: int

    def __post_init__(self):
        if self.n_topics < 2:
            raise DataError(f"n_topics must be >= 2, got {self.n_topics}")
        if not 0.0 <= self.noise_rate < 0.5:
            raise DataError(f"noise_rate must be in [0, 0.5), got {self.noise_rate}")
        if self.tuple_count < 1:
            raise DataError(f"tuple_count must be >= 1, got {self.tuple_count}")
        if self.vocab_size < self.content_start + 8 * self.n_topics + 1:
            raise DataError(
                f"vocab_size {self.vocab_size} too small for {self.n_topics} topics"
            )

    @property
    def content_start(self) -> int:
        # first ids are reserved for the per-topic instruction words
        return 2 * self.n_topics


def topic_ranges(spec: SynthSpec) -> list[tuple[int, int]]:
    """Half-open content id ranges per topic; each overlaps the next by ~50%."""
    content = spec.vocab_size - 1 - spec.content_start  # last id is reserved unknown
    width = content // spec.n_topics
    ranges = []
    for t in range(spec.n_topics):
        start = spec.content_start + t * width
        stop = min(start + width + width // 2, spec.content_start + content)
        ranges.append((start, stop))
    return ranges


def synth_generate(spec: SynthSpec) -> list[ContrastiveTuple]:
    """Seeded topic-structured tuples standing in for a retrieval corpus.

    Per tuple: the positive is a fresh sample from the topic's token range,
    the query is that sample with noise_rate of its tokens replaced (so at
    noise 0 their multisets coincide), and the hard negative comes from the
    adjacent, partially overlapping topic.
    """
    rng = np.random.default_rng(spec.seed)
    ranges = topic_ranges(spec)
    content_lo = spec.content_start
    content_hi = spec.vocab_size - 1

    def sample(topic: int) -> tuple[int, ...]:
        lo, hi = ranges[topic]
        length = int(rng.integers(4, 11))
        return tuple(int(i) for i in rng.integers(lo, hi, size=length))

    def corrupt(ids: tuple[int, ...]) -> tuple[int, ...]:
        if spec.noise_rate == 0:
            return ids
        flips = rng.random(len(ids)) < spec.noise_rate
        fresh = rng.integers(content_lo, content_hi, size=len(ids))
        return tuple(int(f) if flip else i for i, flip, f in zip(ids, flips, fresh))

    tuples = []
    for _ in range(spec.tuple_count):
        topic = int(rng.integers(0, spec.n_topics))
        neighbor = topic + 1 if topic + 1 < spec.n_topics else topic - 1
        positive = sample(topic)
        t = ContrastiveTuple(
            instruction=(2 * topic, 2 * topic + 1),
            query=corrupt(positive),
            positive=positive,
            hard_negative=sample(neighbor),
            task_id=f"synth{topic:02d}",
            symmetric=False,
        )
        t.validate(spec.vocab_size)
        tuples.append(t)
    return tuples


def sample_indices(
    n: int, count: int, seed: int, weights: np.ndarray | None = None
) -> np.ndarray:
    """Seeded draw of ``count`` distinct indices from range(n)."""
    if not 1 <= count <= n:
        raise DataError(f"cannot draw {count} samples from {n} items")
    rng = np.random.default_rng(seed)
    if weights is None:
        return rng.permutation(n)[:count]
    p = np.asarray(weights, dtype=np.float64)
    if p.shape != (n,) or np.any(p < 0) or p.sum() == 0:
        raise DataError("weights must be non-negative with a positive sum")
    return rng.choice(n, size=count, replace=False, p=p / p.sum())


class EpochSampler:
    """Yields index batches, reshuffling per epoch; within an epoch no index
    repeats before all are used."""

    def __init__(
        self,
        dataset_size: int,
        batch_size: int,
        seed: int,
        weights: np.ndarray | None = None,
    ):
        if dataset_size < 1 or batch_size < 1:
            raise DataError("dataset_size and batch_size must be >= 1")
        self.dataset_size = dataset_size
        self.batch_size = batch_size
        self.weights = weights
        self._rng = np.random.default_rng(seed)
        self._queue: list[int] = []

    def _refill(self) -> None:
        n = self.dataset_size
        if self.weights is None:
            order = self._rng.permutation(n)
        else:
            p = np.asarray(self.weights, dtype=np.float64)
            order = self._rng.choice(n, size=n, replace=False, p=p / p.sum())
        self._queue = list(order)

    def next_batch(self) -> list[int]:
        if len(self._queue) < self.batch_size:
            self._refill()
        batch = self._queue[: self.batch_size]
        self._queue = self._queue[self.batch_size :]
        return batch
