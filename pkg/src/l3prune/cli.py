"""Operator pipeline: init-model / gen-data / profile / prune / train / eval / report.

Every command writes a run manifest into its output directory before any
other artifact, then CSV (source of truth) and SVG renderings. Exit codes:
0 success, 2 usage error, 3 data error, 4 numeric failure. The environment
variable L3P_SEED supplies the seed when --seed is not given.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import hashlib
import json
import os
import sys
from pathlib import Path

from . import adapt, checkpoint, data, profiler, prune, svgplot
from .errors import DataError, L3PruneError, NumericError
from .evaluation import EvalReport, EvalSuite, build_synth_suite, evaluate, variants_table
from .model import ModelConfig, init
from .profiler import L3Selection, l3prune_select, profile

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

MANIFEST_NAME = "manifest.json"


class UsageError(L3PruneError):
    """Bad flag combination or value, reported with exit code 2."""


def _git_blob_hash(path: Path) -> str:
    content = path.read_bytes()
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(content))
    h.update(content)
    return h.hexdigest()


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("L3P_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"L3P_SEED must be an integer, got {env!r}") from exc
    return 0


def write_manifest(
    out_dir: Path, command: str, config: dict, seed: int, inputs: list[Path], outputs: list[str]
) -> None:
    """Record what ran; must land before any other output file."""
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): _git_blob_hash(p) for p in inputs},
        "outputs": outputs,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True), "utf-8")


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise DataError(f"{what} not found: {path}")
    return path


def _load_dataset(data_path: Path, vocab_path: Path | None):
    vocab_path = vocab_path or data_path.with_name("vocab.txt")
    vocab = data.Vocabulary.from_file(_require_file(vocab_path, "vocabulary file"))
    tuples = data.load_jsonl(_require_file(data_path, "dataset file"), vocab)
    if not tuples:
        raise DataError(f"dataset {data_path} is empty")
    return tuples, vocab


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_init_model(args) -> int:
    seed = _resolve_seed(args.seed)
    config = ModelConfig(
        vocab_size=args.vocab_size,
        d_model=args.d_model,
        n_layers=args.n_layers,
        n_heads=args.n_heads,
        d_ff=args.d_ff,
        max_seq_len=args.max_seq_len,
        seed=seed,
    )
    out_dir = Path(args.out_dir)
    write_manifest(
        out_dir, "init-model", _config_dict(args), seed, [], ["model.l3p"]
    )
    checkpoint.save(init(config), out_dir / "model.l3p")
    print(f"wrote {out_dir / 'model.l3p'}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    seed = _resolve_seed(args.seed)
    spec = data.SynthSpec(
        vocab_size=args.vocab_size,
        n_topics=args.topics,
        tuple_count=args.tuples,
        noise_rate=args.noise,
        seed=seed,
    )
    out_dir = Path(args.out_dir)
    outputs = ["vocab.txt", "tuples.jsonl", "suite.json"]
    write_manifest(out_dir, "gen-data", _config_dict(args), seed, [], outputs)
    vocab = data.Vocabulary.synthetic(spec.vocab_size)
    vocab.to_file(out_dir / "vocab.txt")
    tuples = data.synth_generate(spec)
    data.write_jsonl(tuples, vocab, out_dir / "tuples.jsonl")
    suite = build_synth_suite(spec.vocab_size, seed=seed, n_topics=args.topics)
    suite.save(out_dir / "suite.json")
    print(f"wrote {len(tuples)} tuples, vocab, and eval suite to {out_dir}")
    return EXIT_OK


def cmd_profile(args) -> int:
    seed = _resolve_seed(args.seed)
    model_path = _require_file(Path(args.model), "checkpoint")
    data_path = Path(args.data)
    tuples, _ = _load_dataset(data_path, args.vocab and Path(args.vocab))
    out_dir = Path(args.out_dir)
    inputs = [model_path, data_path]
    write_manifest(
        out_dir, "profile", _config_dict(args), seed, inputs,
        ["layer_loss.csv", "selection.txt", "layer_loss.svg"],
    )
    model = checkpoint.load(model_path)
    samples = min(args.samples, len(tuples))
    prof = profile(model, tuples, sample_count=samples, seed=seed, batch_size=args.batch_size)
    selection = l3prune_select(prof)
    (out_dir / "layer_loss.csv").write_text(prof.to_csv(), "utf-8")
    (out_dir / "selection.txt").write_text(selection.to_text(), "utf-8")
    layers = list(range(1, len(prof.losses) + 1))
    svg = svgplot.line_plot(
        [float(x) for x in layers],
        [float(v) for v in prof.losses],
        title="Layerwise contrastive loss",
        x_label="layer",
        y_label="loss",
        marked=[selection.small_layer - 1, selection.large_layer - 1],
    )
    (out_dir / "layer_loss.svg").write_text(svg, "utf-8")
    print(
        f"profiled {len(prof.losses)} layers on {samples} samples: "
        f"small={selection.small_layer} large={selection.large_layer}"
    )
    return EXIT_OK


def _resolve_prune_spec(args) -> prune.PruneSpec:
    chosen = [
        name
        for name, val in (
            ("--percent", args.percent),
            ("--layers", args.layers),
            ("--from-selection", args.from_selection),
        )
        if val is not None
    ]
    if len(chosen) != 1:
        raise UsageError(f"exactly one of --percent/--layers/--from-selection required, got {chosen}")
    if args.percent is not None:
        return prune.PruneSpec.by_percent(args.percent, provenance="cli-percent")
    if args.layers is not None:
        return prune.PruneSpec.by_layers(args.layers, provenance="cli-layers")
    sel_path = _require_file(Path(args.selection_file), "selection file")
    selection = L3Selection.from_text(sel_path.read_text("utf-8"))
    layer = selection.small_layer if args.from_selection == "small" else selection.large_layer
    return prune.PruneSpec.by_layers(layer, provenance=f"l3prune-{args.from_selection}")


def cmd_prune(args) -> int:
    seed = _resolve_seed(args.seed)
    model_path = _require_file(Path(args.model), "checkpoint")
    spec = _resolve_prune_spec(args)
    out_dir = Path(args.out_dir)
    write_manifest(
        out_dir, "prune", _config_dict(args), seed, [model_path],
        ["model.l3p", "prune_report.csv"],
    )
    model = checkpoint.load(model_path)
    pruned, report = prune.prune_layers(model, spec)
    checkpoint.save(pruned, out_dir / "model.l3p")
    (out_dir / "prune_report.csv").write_text(prune.reports_to_csv([report]), "utf-8")
    print(
        f"pruned {report.layers_before} -> {report.layers_after} layers "
        f"({report.percent_params_kept:.1%} of parameters kept)"
    )
    return EXIT_OK


def _train_config(args, seed: int) -> adapt.TrainConfig:
    base = adapt.PAPER_PRESET if args.preset == "paper" else adapt.DESK_PRESET
    return adapt.TrainConfig(
        steps=args.steps if args.steps is not None else base.steps,
        batch_size=args.batch_size if args.batch_size is not None else base.batch_size,
        lr=args.lr if args.lr is not None else base.lr,
        warmup_steps=args.warmup if args.warmup is not None else base.warmup_steps,
        lora_rank=args.rank if args.rank is not None else base.lora_rank,
        lora_alpha=args.alpha if args.alpha is not None else base.lora_alpha,
        temperature=args.temperature if args.temperature is not None else base.temperature,
        seed=seed,
    )


def cmd_train(args) -> int:
    seed = _resolve_seed(args.seed)
    model_path = _require_file(Path(args.model), "checkpoint")
    data_path = Path(args.data)
    tuples, _ = _load_dataset(data_path, args.vocab and Path(args.vocab))
    config = _train_config(args, seed)
    out_dir = Path(args.out_dir)
    write_manifest(
        out_dir, "train",
        {**_config_dict(args), "resolved": dataclasses.asdict(config)},
        seed, [model_path, data_path],
        ["model.l3p", "train_curve.csv", "train_curve.svg"],
    )
    model = checkpoint.load(model_path)
    adapted = adapt.attach_lora(model, config.lora_rank, config.lora_alpha, seed=seed)
    adapted, curve = adapt.train(adapted, tuples, config)
    merged = adapt.merge(adapted)
    checkpoint.save(merged, out_dir / "model.l3p")
    (out_dir / "train_curve.csv").write_text(curve.to_csv(), "utf-8")
    if curve.steps:
        svg = svgplot.line_plot(
            [float(s) for s in curve.steps],
            list(curve.losses),
            title="Training loss",
            x_label="step",
            y_label="loss",
        )
        (out_dir / "train_curve.svg").write_text(svg, "utf-8")
    final = curve.losses[-1] if curve.losses else float("nan")
    print(f"trained {config.steps} steps (final loss {final:.4f}) -> {out_dir / 'model.l3p'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    seed = _resolve_seed(args.seed)
    model_path = _require_file(Path(args.model), "checkpoint")
    suite_path = _require_file(Path(args.suite), "suite file")
    out_dir = Path(args.out_dir)
    write_manifest(
        out_dir, "eval", _config_dict(args), seed, [model_path, suite_path],
        ["eval_report.csv"],
    )
    model = checkpoint.load(model_path)
    suite = EvalSuite.load(suite_path)
    report = evaluate(model, suite)
    (out_dir / "eval_report.csv").write_text(report.to_csv(), "utf-8")
    print(f"aggregate score {100 * report.aggregate:.1f} over {len(report.per_task)} tasks")
    return EXIT_OK


def _scan_run_dir(run_dir: Path) -> tuple[EvalReport | None, float | None]:
    """Find an eval report and total training seconds in a dir or its children."""
    report = None
    wall_s = None
    candidates = [run_dir] + sorted(p for p in run_dir.iterdir() if p.is_dir())
    for d in candidates:
        report_path = d / "eval_report.csv"
        if report is None and report_path.is_file():
            report = EvalReport.from_csv(report_path.read_text("utf-8"))
        curve_path = d / "train_curve.csv"
        if wall_s is None and curve_path.is_file():
            lines = curve_path.read_text("utf-8").strip().splitlines()[1:]
            wall_s = sum(float(line.split(",")[2]) for line in lines) / 1e3
    return report, wall_s


def cmd_report(args) -> int:
    seed = _resolve_seed(args.seed)
    run_dirs = [Path(d) for d in args.run_dirs]
    for d in run_dirs:
        if not d.is_dir():
            raise DataError(f"run directory not found: {d}")
    out_dir = Path(args.out_dir)
    write_manifest(
        out_dir, "report", _config_dict(args), seed, [],
        ["score_vs_params.csv", "score_vs_params.svg", "variants.txt"],
    )
    reports: dict[str, EvalReport] = {}
    wall: dict[str, float] = {}
    for d in run_dirs:
        report, wall_s = _scan_run_dir(d)
        if report is None:
            raise DataError(f"no eval_report.csv found under {d}")
        reports[d.name] = report
        if wall_s is not None:
            wall[d.name] = wall_s

    ordered = sorted(reports.items(), key=lambda kv: kv[1].model_params)
    lines = ["run,layers,params,score,train_wall_s"]
    for name, r in ordered:
        wall_cell = f"{wall[name]:.3f}" if name in wall else ""
        lines.append(f"{name},{r.layers},{r.model_params},{r.aggregate:.6f},{wall_cell}")
    (out_dir / "score_vs_params.csv").write_text("\n".join(lines) + "\n", "utf-8")

    svg = svgplot.line_plot(
        [float(r.model_params) for _, r in ordered],
        [float(r.aggregate) for _, r in ordered],
        title="Score vs parameters",
        x_label="parameters",
        y_label="aggregate score",
    )
    (out_dir / "score_vs_params.svg").write_text(svg, "utf-8")

    baseline = args.baseline or max(reports, key=lambda n: reports[n].model_params)
    (out_dir / "variants.txt").write_text(
        variants_table(reports, baseline, wall), "utf-8"
    )
    print(f"joined {len(reports)} runs -> {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _config_dict(args) -> dict:
    skip = {"func"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="l3prune",
        description="Profile, prune, finetune, and evaluate a toy decoder as a text encoder.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_seed(p):
        p.add_argument("--seed", type=int, default=None, help="falls back to $L3P_SEED, then 0")

    p = sub.add_parser("init-model", help="create a seeded toy checkpoint")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--vocab-size", type=int, default=256)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--n-layers", type=int, default=8)
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--d-ff", type=int, default=64)
    p.add_argument("--max-seq-len", type=int, default=48)
    add_seed(p)
    p.set_defaults(func=cmd_init_model)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus, vocab, and eval suite")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--vocab-size", type=int, default=256)
    p.add_argument("--topics", type=int, default=8)
    p.add_argument("--tuples", type=int, default=512)
    p.add_argument("--noise", type=float, default=0.15)
    add_seed(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("profile", help="layerwise loss profile and prune selection")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", default=None, help="defaults to vocab.txt beside the data file")
    p.add_argument("--samples", type=int, default=profiler.DEFAULT_SAMPLE_COUNT)
    p.add_argument("--batch-size", type=int, default=profiler.DEFAULT_BATCH_SIZE)
    p.add_argument("--out-dir", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("prune", help="drop trailing layers and save the pruned checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--percent", type=float, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--from-selection", choices=("small", "large"), default=None)
    p.add_argument("--selection-file", default="selection.txt")
    p.add_argument("--out-dir", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("train", help="contrastive LoRA finetuning, merged checkpoint out")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--out-dir", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on an eval suite")
    p.add_argument("--model", required=True)
    p.add_argument("--suite", required=True)
    p.add_argument("--out-dir", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="join runs into score-vs-params and a variants table")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--baseline", default=None, help="run name; defaults to the largest model")
    p.add_argument("--out-dir", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except L3PruneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
