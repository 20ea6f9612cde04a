"""Desk-scale evaluation proxies mirroring a retrieval benchmark's category mix.

A suite holds five synthetic tasks: two retrieval (recall@1, nDCG@10), one
reranking (MRR), one STS (Spearman against generator-known similarity), and
one pair classification (best-threshold accuracy). Queries embed with their
task instruction prepended and excluded from pooling; symmetric tasks use
the same instruction on both sides. All reported scores live in [0, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import numeric, pooling
from .errors import DataError, L3PruneError
from .model import TokenBatch, Transformer, count_params

RETRIEVAL = "retrieval"
RERANK = "rerank"
STS = "sts"
PAIRCLASS = "pairclass"


# ---------------------------------------------------------------------------
# metrics (plain ndarray in, float out)
# ---------------------------------------------------------------------------


def _cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise L3PruneError("zero-norm embedding in metric computation")
    return (a / na) @ (b / nb).T


def recall_at_k(
    query_embs: np.ndarray, doc_embs: np.ndarray, gold: dict[int, int], k: int
) -> float:
    """Fraction of queries whose gold document ranks in the cosine top k."""
    if k < 1 or k > doc_embs.shape[0]:
        raise L3PruneError(f"k={k} out of range for corpus of {doc_embs.shape[0]}")
    sims = _cosine_matrix(query_embs, doc_embs)
    top = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    hits = sum(1 for qi, di in gold.items() if di in top[qi])
    return hits / len(gold)


def ndcg_at_k(
    query_embs: np.ndarray, doc_embs: np.ndarray, gold: dict[int, int], k: int = 10
) -> float:
    """Binary-relevance nDCG with log2 discounting; one gold doc per query."""
    if k < 1 or k > doc_embs.shape[0]:
        raise L3PruneError(f"k={k} out of range for corpus of {doc_embs.shape[0]}")
    sims = _cosine_matrix(query_embs, doc_embs)
    top = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    total = 0.0
    for qi, di in gold.items():
        where = np.nonzero(top[qi] == di)[0]
        if where.size:
            total += 1.0 / np.log2(where[0] + 2.0)
    return total / len(gold)


def mrr(query_embs: np.ndarray, candidate_embs: np.ndarray, gold: np.ndarray) -> float:
    """Mean reciprocal rank; candidate_embs is [queries, candidates, d]."""
    total = 0.0
    for qi in range(query_embs.shape[0]):
        sims = _cosine_matrix(query_embs[qi : qi + 1], candidate_embs[qi])[0]
        order = np.argsort(-sims, kind="stable")
        rank = int(np.nonzero(order == gold[qi])[0][0]) + 1
        total += 1.0 / rank
    return total / query_embs.shape[0]


def spearman_sts(pred_sims, gold_sims) -> float:
    """Spearman rank correlation with average-rank tie handling."""
    pred = np.asarray(pred_sims, dtype=np.float64)
    gold = np.asarray(gold_sims, dtype=np.float64)
    if pred.shape != gold.shape or pred.ndim != 1 or pred.size < 2:
        raise L3PruneError("spearman_sts needs two equal-length vectors of size >= 2")
    if np.all(pred == pred[0]) or np.all(gold == gold[0]):
        raise L3PruneError("spearman correlation is undefined for a constant vector")
    return float(stats.spearmanr(pred, gold).statistic)


def best_threshold_accuracy(sims: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy of 'similarity >= threshold' at the best possible threshold."""
    sims = np.asarray(sims, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    best = 0.0
    for threshold in np.concatenate([sims, [sims.max() + 1.0]]):
        acc = np.mean((sims >= threshold) == labels)
        best = max(best, float(acc))
    return best


# ---------------------------------------------------------------------------
# suite definition
# ---------------------------------------------------------------------------


@dataclass
class EvalTask:
    name: str
    kind: str
    metric: str
    instruction: tuple[int, ...]
    symmetric: bool
    payload: dict

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "metric": self.metric,
            "instruction": list(self.instruction),
            "symmetric": self.symmetric,
            "payload": self.payload,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EvalTask":
        return cls(
            name=obj["name"],
            kind=obj["kind"],
            metric=obj["metric"],
            instruction=tuple(obj["instruction"]),
            symmetric=bool(obj["symmetric"]),
            payload=obj["payload"],
        )


@dataclass
class EvalSuite:
    vocab_size: int
    tasks: list[EvalTask] = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(
                {"vocab_size": self.vocab_size, "tasks": [t.to_json() for t in self.tasks]},
                indent=1,
                sort_keys=True,
            ),
            "utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "EvalSuite":
        path = Path(path)
        if not path.exists():
            raise DataError(f"suite file not found: {path}")
        try:
            obj = json.loads(path.read_text("utf-8"))
            return cls(
                vocab_size=int(obj["vocab_size"]),
                tasks=[EvalTask.from_json(t) for t in obj["tasks"]],
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"malformed suite file {path}: {exc}") from exc


def _topic_blocks(vocab_size: int, n_topics: int, reserved: int) -> list[tuple[int, int]]:
    content = vocab_size - 1 - reserved
    width = content // n_topics
    return [
        (reserved + t * width, min(reserved + t * width + width + width // 2, reserved + content))
        for t in range(n_topics)
    ]


def build_synth_suite(
    vocab_size: int,
    seed: int = 0,
    n_topics: int = 8,
    queries_per_task: int = 32,
    corpus_size: int = 160,
) -> EvalSuite:
    """Generate the five-task suite with generator-known ground truth."""
    if vocab_size < 4 * n_topics + 1:
        raise DataError(f"vocab_size {vocab_size} too small for {n_topics} topics")
    rng = np.random.default_rng(seed)
    reserved = 2 * n_topics
    blocks = _topic_blocks(vocab_size, n_topics, reserved)
    content_lo, content_hi = reserved, vocab_size - 1

    def sample(topic: int, length: int | None = None) -> list[int]:
        lo, hi = blocks[topic]
        length = length or int(rng.integers(5, 11))
        return [int(i) for i in rng.integers(lo, hi, size=length)]

    def noisy_copy(ids: list[int], keep_fraction: float) -> list[int]:
        out = list(ids)
        for i in range(len(out)):
            if rng.random() > keep_fraction:
                out[i] = int(rng.integers(content_lo, content_hi))
        return out

    def instruction(slot: int) -> tuple[int, ...]:
        return (2 * (slot % n_topics), 2 * (slot % n_topics) + 1)

    tasks = []

    # two retrieval tasks over a shared-style corpus, different metric each
    for idx, metric in enumerate(("recall@1", "ndcg@10")):
        docs = [sample(int(rng.integers(0, n_topics))) for _ in range(corpus_size)]
        queries, gold = [], {}
        for qi in range(queries_per_task):
            di = int(rng.integers(0, corpus_size))
            queries.append(noisy_copy(docs[di], keep_fraction=0.7))
            gold[qi] = di
        tasks.append(
            EvalTask(
                name=f"synth-retrieval-{idx}",
                kind=RETRIEVAL,
                metric=metric,
                instruction=instruction(idx),
                symmetric=False,
                payload={"queries": queries, "docs": docs, "gold": gold},
            )
        )

    # reranking: per query one gold plus distractors, adjacent topic included
    queries, candidates, gold_pos = [], [], []
    for _ in range(queries_per_task):
        topic = int(rng.integers(0, n_topics))
        neighbor = topic + 1 if topic + 1 < n_topics else topic - 1
        base = sample(topic)
        cands = [noisy_copy(base, keep_fraction=0.8)]
        cands += [sample(neighbor) for _ in range(3)]
        cands += [sample(int(rng.integers(0, n_topics))) for _ in range(4)]
        queries.append(base)
        candidates.append(cands)
        gold_pos.append(0)
    tasks.append(
        EvalTask(
            name="synth-rerank",
            kind=RERANK,
            metric="mrr",
            instruction=instruction(2),
            symmetric=False,
            payload={"queries": queries, "candidates": candidates, "gold": gold_pos},
        )
    )

    # STS: pair similarity is the known kept-token fraction
    pairs, gold_sims = [], []
    for level in np.linspace(0.0, 1.0, 11):
        for _ in range(6):
            a = sample(int(rng.integers(0, n_topics)), length=10)
            pairs.append([a, noisy_copy(a, keep_fraction=float(level))])
            gold_sims.append(float(level))
    tasks.append(
        EvalTask(
            name="synth-sts",
            kind=STS,
            metric="spearman",
            instruction=instruction(3),
            symmetric=True,
            payload={"pairs": pairs, "gold_sims": gold_sims},
        )
    )

    # pair classification: same-topic near-duplicates vs cross-topic pairs
    pairs, labels = [], []
    for _ in range(queries_per_task * 2):
        if rng.random() < 0.5:
            topic = int(rng.integers(0, n_topics))
            a = sample(topic)
            pairs.append([a, noisy_copy(a, keep_fraction=0.8)])
            labels.append(1)
        else:
            t1 = int(rng.integers(0, n_topics))
            t2 = (t1 + int(rng.integers(2, n_topics - 1))) % n_topics
            pairs.append([sample(t1), sample(t2)])
            labels.append(0)
    tasks.append(
        EvalTask(
            name="synth-pairclass",
            kind=PAIRCLASS,
            metric="accuracy",
            instruction=instruction(4),
            symmetric=True,
            payload={"pairs": pairs, "labels": labels},
        )
    )

    return EvalSuite(vocab_size=vocab_size, tasks=tasks)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    per_task: dict[str, float]
    aggregate: float
    model_params: int
    layers: int

    def to_csv(self) -> str:
        lines = ["name,value"]
        lines += [f"{name},{value:.6f}" for name, value in self.per_task.items()]
        lines.append(f"aggregate,{self.aggregate:.6f}")
        lines.append(f"model_params,{self.model_params}")
        lines.append(f"layers,{self.layers}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        per_task: dict[str, float] = {}
        extras: dict[str, float] = {}
        lines = text.strip().splitlines()
        if not lines or lines[0] != "name,value":
            raise DataError("eval report CSV must start with 'name,value'")
        for line in lines[1:]:
            name, _, value = line.partition(",")
            if name in ("aggregate", "model_params", "layers"):
                extras[name] = float(value)
            else:
                per_task[name] = float(value)
        try:
            return cls(
                per_task=per_task,
                aggregate=extras["aggregate"],
                model_params=int(extras["model_params"]),
                layers=int(extras["layers"]),
            )
        except KeyError as exc:
            raise DataError(f"eval report CSV missing row {exc}") from exc


def _embed_texts(
    model: Transformer, texts: list[list[int]], instruction: tuple[int, ...]
) -> np.ndarray:
    sequences = [list(instruction) + list(t) for t in texts]
    batch = TokenBatch.from_sequences(sequences)
    with numeric.no_grad():
        out = pooling.embed(model, batch, instruction_lengths=len(instruction))
    return out.data


def _score_task(model: Transformer, task: EvalTask) -> float:
    doc_instruction = task.instruction if task.symmetric else ()
    payload = task.payload
    if task.kind == RETRIEVAL:
        q = _embed_texts(model, payload["queries"], task.instruction)
        d = _embed_texts(model, payload["docs"], doc_instruction)
        gold = {int(k): int(v) for k, v in payload["gold"].items()}
        if task.metric == "recall@1":
            return recall_at_k(q, d, gold, k=1)
        return ndcg_at_k(q, d, gold, k=10)
    if task.kind == RERANK:
        q = _embed_texts(model, payload["queries"], task.instruction)
        cands = np.stack(
            [
                _embed_texts(model, cand_list, doc_instruction)
                for cand_list in payload["candidates"]
            ]
        )
        return mrr(q, cands, np.asarray(payload["gold"], dtype=np.int64))
    if task.kind == STS:
        left = _embed_texts(model, [p[0] for p in payload["pairs"]], task.instruction)
        right = _embed_texts(model, [p[1] for p in payload["pairs"]], task.instruction)
        sims = np.sum(
            left / np.linalg.norm(left, axis=1, keepdims=True)
            * (right / np.linalg.norm(right, axis=1, keepdims=True)),
            axis=1,
        )
        # a negative rank correlation is no better than random for retrieval
        # purposes; scores are floored at 0 to stay in [0, 1]
        return max(0.0, spearman_sts(sims, payload["gold_sims"]))
    if task.kind == PAIRCLASS:
        left = _embed_texts(model, [p[0] for p in payload["pairs"]], task.instruction)
        right = _embed_texts(model, [p[1] for p in payload["pairs"]], task.instruction)
        sims = np.sum(
            left / np.linalg.norm(left, axis=1, keepdims=True)
            * (right / np.linalg.norm(right, axis=1, keepdims=True)),
            axis=1,
        )
        return best_threshold_accuracy(sims, np.asarray(payload["labels"]))
    raise DataError(f"unknown task kind {task.kind!r}")


def evaluate(model: Transformer, suite: EvalSuite) -> EvalReport:
    """Score every suite task and aggregate with an unweighted mean."""
    if suite.vocab_size != model.config.vocab_size:
        raise DataError(
            f"suite vocab_size {suite.vocab_size} does not match "
            f"model vocab_size {model.config.vocab_size}"
        )
    if not suite.tasks:
        raise DataError("evaluation suite has no tasks")
    per_task = {task.name: float(_score_task(model, task)) for task in suite.tasks}
    return EvalReport(
        per_task=per_task,
        aggregate=sum(per_task.values()) / len(per_task),
        model_params=count_params(model),
        layers=model.config.n_layers,
    )


def variants_table(
    reports: dict[str, EvalReport],
    baseline: str,
    train_wall_s: dict[str, float] | None = None,
) -> str:
    """Render a layers/params/score comparison with deltas vs the baseline.

    Scores print on the x100 scale with signed deltas in parentheses; params
    show the percentage kept relative to the baseline.
    """
    if baseline not in reports:
        raise DataError(f"baseline {baseline!r} is not among the reports")
    base = reports[baseline]
    names = [baseline] + [n for n in reports if n != baseline]
    rows = [[""] + names]

    layer_cells = ["Layers"]
    param_cells = ["Params"]
    score_cells = ["Score"]
    time_cells = ["TrainTime"]
    for name in names:
        r = reports[name]
        if name == baseline:
            layer_cells.append(f"{r.layers}")
            param_cells.append(f"{r.model_params}")
            score_cells.append(f"{100 * r.aggregate:.1f}")
        else:
            layer_cells.append(f"{r.layers} ({r.layers - base.layers:+d})")
            param_cells.append(
                f"{r.model_params} ({100 * r.model_params / base.model_params:.0f}%)"
            )
            score_cells.append(
                f"{100 * r.aggregate:.1f} ({100 * (r.aggregate - base.aggregate):+.1f})"
            )
        if train_wall_s and name in train_wall_s:
            time_cells.append(f"{train_wall_s[name]:.1f}s")
        else:
            time_cells.append("-")
    rows += [layer_cells, param_cells, score_cells, time_cells]

    widths = [max(len(row[i]) for row in rows) for i in range(len(names) + 1)]
    return "\n".join(
        "  ".join(cell.rjust(widths[i]) for i, cell in enumerate(row)) for row in rows
    ) + "\n"
