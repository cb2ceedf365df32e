"""Command-line front end.

Subcommands: synth, train-extractor, train-generator, fit-agg, generate,
session, chat, evaluate, analyze.  Every command that writes artifacts also
writes a manifest (resolved config, seed, input hashes, output hashes)
beside them so any artifact can be regenerated bit-for-bit from its
manifest.  Config precedence: built-in defaults < --config JSON < flags;
COCON_SEED in the environment is the seed fallback when neither sets one.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .corpus import (
    CorpusSplit,
    Dialogue,
    SynthConfig,
    Vocabulary,
    build_vocab,
    load_dialogues,
    save_dialogues,
    split_corpus,
    synth_corpus,
    tokenize,
)
from .extractor import (
    ExtractorConfig,
    ExtractorTrainConfig,
    eval_matching_accuracy,
    load_extractor,
    new_extractor,
    save_extractor,
    train_extractor,
    vocab_hash,
)
from .generator import (
    VARIANT_KINDS,
    GeneratorConfig,
    GeneratorTrainConfig,
    StSchedule,
    dialogue_windows,
    fit_agg_weights,
    load_generator,
    new_generator,
    save_generator,
    train_generator,
    variant_mode,
    window_context_features,
)
from .inference import (
    ChatSession,
    FeatureOverride,
    InferenceEngine,
    chat_step,
    generate_session,
    parse_feature_name,
)
from .metrics import EmbeddingTable, evaluate_corpus
from .utils import canonical_json, read_json, sha256_file, write_json


@dataclass
class RunConfig:
    """Every tunable, with the defaults used throughout: learning rate
    1e-4, decorrelation weight 0.01, cycle weight 0.1, 100 features,
    hidden/state width 500, embeddings 300, final ST temperature 0.01,
    match temperature 1, context K=4, patience 10, batch 128."""

    seed: int = 0
    lr: float = 1e-4
    lam: float = 0.01
    eta: float = 0.1
    n_features: int = 100
    hidden: int = 500
    embed_dim: int = 300
    enc_dim: int = 500
    n_filters: int = 300
    filter_width: int = 5
    stride: int = 2
    dropout: float = 0.0
    st_tau_final: float = 0.01
    match_tau: float = 1.0
    head_bias_init: float = 0.0
    k: int = 4
    patience: int = 10
    batch_size: int = 128
    max_epochs: int = 200
    gen_max_epochs: int = 50
    gen_batch_size: int = 64
    max_len: int = 30
    min_turns: int = 8
    n_pairs: int = 2000
    n_valid_pairs: int = 400
    agg_iters: int = 400
    agg_lr: float = 0.1
    rollout_len: int = 30
    split_ratios: tuple = (0.8, 0.1, 0.1)
    # synthetic-corpus knobs
    n_dialogues: int = 200
    n_topics: int = 4
    n_personas: int = 6
    turns: int = 8
    two_topic_prob: float = 0.5
    topic_vocab_size: int = 12
    persona_style_size: int = 6
    style_interleave_prob: float = 0.2
    min_content: int = 3
    max_content: int = 6


CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def resolve_config(config_path: str | None, overrides: dict) -> RunConfig:
    """defaults < config file < flags; COCON_SEED fills in the seed when
    neither the file nor a flag provides one.  Unknown file keys reject."""
    values = dataclasses.asdict(RunConfig())
    seed_set = False
    if config_path:
        file_values = read_json(config_path)
        unknown = set(file_values) - CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(file_values)
        seed_set = "seed" in file_values
    for key, val in overrides.items():
        if val is not None:
            if key not in CONFIG_KEYS:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = val
            seed_set = seed_set or key == "seed"
    if not seed_set and "COCON_SEED" in os.environ:
        values["seed"] = int(os.environ["COCON_SEED"])
    if isinstance(values["split_ratios"], list):
        values["split_ratios"] = tuple(values["split_ratios"])
    return RunConfig(**values)


def _hash_outputs(paths: list[Path]) -> dict:
    out = {}
    for p in sorted(paths):
        if p.is_dir():
            for f in sorted(p.rglob("*")):
                if f.is_file() and f.name != "manifest.json":
                    out[str(f)] = sha256_file(f)
        elif p.is_file():
            out[str(p)] = sha256_file(p)
    return out


def write_manifest(
    command: str,
    cfg: RunConfig,
    args: dict,
    inputs: list[str | Path],
    outputs: list[str | Path],
    extra: dict | None = None,
) -> Path:
    """Reproducibility record beside the outputs: the resolved config plus
    input/output content hashes.  No timestamps, so reruns are bytewise
    identical."""
    out_paths = [Path(p) for p in outputs]
    primary = out_paths[0]
    manifest_path = primary / "manifest.json" if primary.is_dir() else primary.with_name(
        primary.name + ".manifest.json"
    )
    payload = {
        "command": command,
        "version": __version__,
        "config": dataclasses.asdict(cfg),
        "args": args,
        "inputs": {str(p): sha256_file(p) for p in inputs if Path(p).is_file()},
        "outputs": _hash_outputs(out_paths),
    }
    if extra:
        payload["extra"] = extra
    write_json(payload, manifest_path)
    return manifest_path


def _load_corpus(path: str, min_turns: int) -> list[Dialogue]:
    result = load_dialogues(path, min_turns=min_turns)
    for err in result.errors:
        print(f"warning: {path}:{err.line_no}: {err.message}", file=sys.stderr)
    if not result.dialogues:
        raise ValueError(f"no usable dialogues in {path} (min_turns={min_turns})")
    return result.dialogues


def _split(dialogues: list[Dialogue], cfg: RunConfig) -> CorpusSplit:
    return split_corpus(dialogues, ratios=cfg.split_ratios, seed=cfg.seed)


# --- commands ---------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = resolve_config(args.config, {
        "seed": args.seed,
        "n_dialogues": args.n_dialogues,
        "n_topics": args.n_topics,
        "n_personas": args.n_personas,
        "turns": args.turns,
    })
    synth_cfg = SynthConfig(
        n_dialogues=cfg.n_dialogues,
        n_topics=cfg.n_topics,
        n_personas=cfg.n_personas,
        turns=cfg.turns,
        topic_vocab_size=cfg.topic_vocab_size,
        persona_style_size=cfg.persona_style_size,
        two_topic_prob=cfg.two_topic_prob,
        style_interleave_prob=cfg.style_interleave_prob,
        min_content=cfg.min_content,
        max_content=cfg.max_content,
    )
    dialogues = synth_corpus(synth_cfg, seed=cfg.seed)
    save_dialogues(dialogues, args.out)
    write_manifest("synth", cfg, {"out": args.out}, [], [args.out])
    print(f"wrote {len(dialogues)} dialogues to {args.out}")
    return 0


def _extractor_config(cfg: RunConfig, kind: str, mode: str) -> ExtractorConfig:
    return ExtractorConfig(
        kind=kind,
        mode=mode,
        n_features=cfg.n_features,
        embed_dim=cfg.embed_dim,
        n_filters=cfg.n_filters,
        filter_width=cfg.filter_width,
        stride=cfg.stride,
        enc_dim=cfg.enc_dim,
        dropout=cfg.dropout,
        match_tau=cfg.match_tau,
        head_bias_init=cfg.head_bias_init,
    )


def cmd_train_extractor(args: argparse.Namespace) -> int:
    from .pairing import make_persona_pairs, make_topic_pairs, shuffle_and_order

    cfg = resolve_config(args.config, {"seed": args.seed, "lam": args.lam})
    dialogues = _load_corpus(args.data, cfg.min_turns)
    split = _split(dialogues, cfg)
    vocab = build_vocab(split.train, max_len=cfg.max_len)
    make_pairs = make_topic_pairs if args.kind == "topic" else make_persona_pairs
    train_pairs = shuffle_and_order(
        make_pairs(split.train, cfg.n_pairs, vocab, seed=cfg.seed), seed=cfg.seed
    )
    valid_pairs = shuffle_and_order(
        make_pairs(split.valid, cfg.n_valid_pairs, vocab, seed=cfg.seed + 1), seed=cfg.seed + 1
    )
    model = new_extractor(vocab, _extractor_config(cfg, args.kind, args.mode), seed=cfg.seed)
    history = train_extractor(
        model, train_pairs, valid_pairs,
        ExtractorTrainConfig(
            lam=cfg.lam, lr=cfg.lr, batch_size=cfg.batch_size,
            max_epochs=cfg.max_epochs, patience=cfg.patience, seed=cfg.seed,
        ),
    )
    accuracy = eval_matching_accuracy(model, valid_pairs)
    out = Path(args.out)
    save_extractor(model, vocab, out)
    write_json({"history": history, "valid_accuracy": accuracy}, out / "history.json")
    write_manifest(
        "train-extractor", cfg,
        {"kind": args.kind, "mode": args.mode, "data": args.data, "out": args.out},
        [args.data], [out],
        extra={"valid_accuracy": accuracy, "epochs_run": len(history)},
    )
    print(f"{args.kind}/{args.mode} extractor: valid accuracy {accuracy:.3f} "
          f"after {len(history)} epochs -> {args.out}")
    return 0


def _load_extractor_dirs(arg: str | None, variant: str):
    """--extractors DIR[,DIR]; order must match the variant's feature kinds
    (topic first)."""
    kinds = VARIANT_KINDS[variant]
    dirs = [d for d in (arg.split(",") if arg else []) if d]
    if not kinds and dirs:
        raise ValueError("variant s2s takes no --extractors")
    if len(dirs) != len(kinds):
        raise ValueError(
            f"variant {variant} needs --extractors with checkpoints for: {','.join(kinds)}"
        )
    loaded = []
    for d, kind in zip(dirs, kinds):
        model, vocab, payload = load_extractor(d)
        if model.kind != kind:
            raise ValueError(f"{d}: expected a {kind} extractor, found {model.kind}")
        if model.mode != variant_mode(variant):
            raise ValueError(
                f"{d}: variant {variant} needs {variant_mode(variant)} extractors, "
                f"found {model.mode}"
            )
        loaded.append((model, vocab, payload))
    return loaded


def cmd_train_generator(args: argparse.Namespace) -> int:
    cfg = resolve_config(args.config, {"seed": args.seed, "eta": args.eta})
    loaded = _load_extractor_dirs(args.extractors, args.variant)
    dialogues = _load_corpus(args.data, cfg.min_turns)
    split = _split(dialogues, cfg)
    if loaded:
        vocab = loaded[0][1]
        hashes = {vocab_hash(v) for _, v, _ in loaded}
        if len(hashes) != 1:
            raise ValueError("extractor checkpoints use different vocabularies")
    else:
        vocab = build_vocab(split.train, max_len=cfg.max_len)
    extractors = [m for m, _, _ in loaded]
    feature_dim = sum(m.n_features for m in extractors)
    model = new_generator(
        vocab,
        GeneratorConfig(
            variant=args.variant, k=cfg.k, embed_dim=cfg.embed_dim,
            n_filters=cfg.n_filters, filter_width=cfg.filter_width,
            stride=cfg.stride, enc_dim=cfg.enc_dim, hidden=cfg.hidden,
            dropout=cfg.dropout, feature_dim=feature_dim,
        ),
        seed=cfg.seed,
    )
    history = train_generator(
        model, split, extractors,
        GeneratorTrainConfig(
            eta=cfg.eta, lr=cfg.lr, batch_size=cfg.gen_batch_size,
            max_epochs=cfg.gen_max_epochs, patience=cfg.patience, seed=cfg.seed,
            rollout_len=cfg.rollout_len,
            st=StSchedule(final_slope=1.0 / cfg.st_tau_final),
        ),
        vocab,
    )
    agg = {}
    windows = dialogue_windows(split.train, cfg.k, vocab)
    by_kind = dict(zip(VARIANT_KINDS[args.variant], extractors))
    for kind, extractor in by_kind.items():
        ctx_f, tgt_f = window_context_features(extractor, windows)
        agg[kind] = fit_agg_weights(ctx_f, tgt_f, kind, iters=cfg.agg_iters, lr=cfg.agg_lr)
    out = Path(args.out)
    save_generator(model, vocab, agg, by_kind, out, extra={"eta": cfg.eta})
    write_json({"history": history}, out / "history.json")
    write_manifest(
        "train-generator", cfg,
        {"variant": args.variant, "data": args.data, "extractors": args.extractors,
         "out": args.out},
        [args.data], [out],
        extra={"epochs_run": len(history), "final_valid": history[-1]},
    )
    last = history[-1]
    cycle = f", cycle {last['valid_cycle']:.4f}" if last["valid_cycle"] is not None else ""
    print(f"{args.variant} generator: valid MLE {last['valid_mle']:.4f}{cycle} "
          f"after {len(history)} epochs -> {args.out}")
    return 0


def cmd_fit_agg(args: argparse.Namespace) -> int:
    cfg = resolve_config(args.config, {"seed": args.seed})
    model, vocab, _, extractors, payload = load_generator(args.model)
    dialogues = _load_corpus(args.data, cfg.min_turns)
    windows = dialogue_windows(dialogues, model.config.k, vocab)
    if not windows:
        raise ValueError("no context windows in the given data")
    agg = {}
    for kind, extractor in extractors.items():
        ctx_f, tgt_f = window_context_features(extractor, windows)
        agg[kind] = fit_agg_weights(ctx_f, tgt_f, kind, iters=cfg.agg_iters, lr=cfg.agg_lr)
    out = Path(args.out)
    save_generator(model, vocab, agg, extractors, out,
                   extra={k: v for k, v in payload.items()
                          if k not in ("variant", "config", "vocab_sha256",
                                       "extractor_hashes", "agg")})
    write_manifest("fit-agg", cfg,
                   {"model": args.model, "data": args.data, "out": args.out},
                   [args.data], [out])
    for kind, w in agg.items():
        rounded = [round(x, 4) for x in w.weights]
        print(f"{kind} aggregation weights: {rounded}")
    print(f"updated checkpoint -> {args.out}")
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args.config, {})
    engine = InferenceEngine.from_checkpoint(args.model)
    dialogues = _load_corpus(args.context, engine.k)
    records = []
    for d in dialogues:
        result = engine.generate_response(list(d.turns[-engine.k :]))
        record = {
            "id": d.id,
            "turns": [{"speaker": t.speaker, "text": t.text} for t in d.turns]
            + [{"speaker": len(d.turns) % 2, "text": result.text, "generated": True}],
            "diagnostics": [result.diagnostics()],
        }
        records.append(record)
    with open(args.out, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(canonical_json(record) + "\n")
    write_manifest("generate", cfg, {"model": args.model, "context": args.context,
                                     "out": args.out},
                   [args.context], [args.out])
    print(f"generated {len(records)} responses -> {args.out}")
    return 0


def cmd_session(args: argparse.Namespace) -> int:
    cfg = resolve_config(args.config, {})
    engine = InferenceEngine.from_checkpoint(args.model)
    overrides = tuple(FeatureOverride.parse(t) for t in (args.toggle or []))
    dialogues = _load_corpus(args.seed_turns, engine.k)
    lines = []
    for d in dialogues:
        result = generate_session(engine, list(d.turns), args.n_future, overrides)
        lines.append(canonical_json(result.to_record(d.id)))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        write_manifest("session", cfg,
                       {"model": args.model, "seed_turns": args.seed_turns,
                        "n_future": args.n_future, "toggle": args.toggle or [],
                        "out": args.out},
                       [args.seed_turns], [args.out])
        print(f"rolled {len(dialogues)} sessions {args.n_future} turns forward -> {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_chat(args: argparse.Namespace) -> int:
    engine = InferenceEngine.from_checkpoint(args.model)
    session = ChatSession(engine)
    interactive = sys.stdin.isatty()
    if interactive:
        print("chat ready; /toggle /features /reset /save, Ctrl-D to quit")
    for line in sys.stdin:
        result = chat_step(session, line)
        if result.kind == "usage":
            print(result.text, file=sys.stderr)
        else:
            print(result.text)
        if interactive:
            sys.stdout.flush()
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args.config, {})

    def read_lines(path):
        with open(path, encoding="utf-8") as fh:
            return [list(tokenize(line)) for line in fh.read().splitlines()]

    outputs = read_lines(args.hyp)
    references = read_lines(args.ref) if args.ref else None
    table = EmbeddingTable.load(args.embeddings) if args.embeddings else None
    report = evaluate_corpus(outputs, references, table)
    write_json(report.to_dict(), args.out)
    inputs = [p for p in (args.hyp, args.ref, args.embeddings) if p]
    write_manifest("evaluate", cfg,
                   {"hyp": args.hyp, "ref": args.ref, "embeddings": args.embeddings,
                    "out": args.out},
                   inputs, [args.out])
    if report.bleu is not None:
        print(f"BLEU {report.bleu:.2f}  NIST {report.nist:.3f}  METEOR-s {report.meteor_s:.3f}")
    print(f"Dist-1 {report.dist1:.3f}  Dist-2 {report.dist2:.3f}  Ent-4 {report.ent4:.3f}")
    print(f"report -> {args.out}")
    return 0


def _analysis_extractor(args: argparse.Namespace):
    """--model may point at an extractor checkpoint or a generator
    checkpoint; for the latter pick the embedded extractor by kind."""
    model_dir = Path(args.model)
    payload = read_json(model_dir / "config.json") if (model_dir / "config.json").exists() else {}
    if "kind" in payload:
        model, vocab, _ = load_extractor(model_dir)
        return model, vocab
    kind = parse_feature_name(args.feature)[0] if args.feature else (args.kind or "topic")
    _, vocab, _, extractors, _ = load_generator(model_dir)
    if kind not in extractors:
        raise ValueError(f"checkpoint has no {kind} extractor")
    return extractors[kind], vocab


def cmd_analyze(args: argparse.Namespace) -> int:
    from . import analysis

    cfg = resolve_config(args.config, {"seed": args.seed})
    dialogues = _load_corpus(args.data, cfg.min_turns)
    sentences = [list(t.tokens) for d in dialogues for t in d.turns]

    if args.what == "ngrams":
        model, vocab = _analysis_extractor(args)
        report = analysis.ngram_report(
            model, sentences, vocab,
            min_occurrence=args.min_occurrence if args.min_occurrence else 20,
        )
        write_json(report.to_dict(), args.out)
        print(f"n-gram profiles for {len(report.profiles)} features -> {args.out}")
    elif args.what == "alignment":
        model, vocab = _analysis_extractor(args)
        report = analysis.alignment_score(model, dialogues, vocab, seed=cfg.seed)
        write_json(report.to_dict(), args.out)
        print(f"best feature {report.best_feature}: MI {report.best_mi:.4f} nats "
              f"(permutation baseline {report.baseline_best_mi:.4f}) -> {args.out}")
    elif args.what == "toggle":
        if not args.feature:
            raise ValueError("analyze toggle needs --feature (e.g. --feature T-17)")
        kind, index = parse_feature_name(args.feature)
        engine = InferenceEngine.from_checkpoint(args.model)
        contexts = []
        for d in dialogues:
            for start in range(len(d.turns) - engine.k + 1):
                contexts.append(list(d.turns[start : start + engine.k]))
        contexts = contexts[: args.max_contexts]
        report = analysis.toggle_success_rate(engine, contexts, kind, index)
        write_json(report.to_dict(), args.out)
        print(f"toggle {report.feature}: success {report.success_rate:.3f} "
              f"(base {report.base_rate:.3f}, {report.n_eligible} eligible) -> {args.out}")
    else:  # export
        model, vocab = _analysis_extractor(args)
        ids, labels = [], {"topic": [], "persona": []}
        has_truth = all(d.truth is not None for d in dialogues)
        for d in dialogues:
            for i, t in enumerate(d.turns, 1):
                ids.append(f"{d.id}:{i}")
                if has_truth:
                    labels["topic"].append("+".join(map(str, sorted(d.truth.topic_ids))))
                    labels["persona"].append(d.truth.persona_ids[t.speaker])
        analysis.export_features(
            model, sentences, vocab, args.out,
            ids=ids, labels=labels if has_truth else None,
        )
        print(f"exported {len(sentences)} feature rows -> {args.out}")

    write_manifest(f"analyze-{args.what}", cfg,
                   {"model": args.model, "data": args.data, "out": args.out,
                    "feature": args.feature, "min_occurrence": args.min_occurrence},
                   [args.data], [args.out])
    return 0


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convofeat",
        description="dialogue feature extraction and controllable generation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON file of config overrides")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("synth", help="generate a synthetic dialogue corpus")
    add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-dialogues", type=int, default=None)
    p.add_argument("--n-topics", type=int, default=None)
    p.add_argument("--n-personas", type=int, default=None)
    p.add_argument("--turns", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-extractor", help="train a feature extractor")
    add_common(p)
    p.add_argument("--kind", required=True, choices=["topic", "persona"])
    p.add_argument("--mode", default="soft", choices=["soft", "hard"])
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="decorrelation weight")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_extractor)

    p = sub.add_parser("train-generator", help="train a response generator")
    add_common(p)
    p.add_argument("--variant", required=True, choices=["s2s", "t", "tp", "tp-bin"])
    p.add_argument("--eta", type=float, default=None, help="cycle-loss weight")
    p.add_argument("--extractors", default=None,
                   help="comma-separated extractor checkpoint dirs (topic[,persona])")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_generator)

    p = sub.add_parser("fit-agg", help="refit aggregation weights on a corpus")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_agg)

    p = sub.add_parser("generate", help="generate one response per context")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("session", help="roll dialogues forward n turns")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--seed-turns", required=True)
    p.add_argument("--n-future", type=int, required=True)
    p.add_argument("--toggle", action="append", default=None,
                   help="feature override, e.g. T-17=1 (repeatable)")
    p.add_argument("--out", default=None, help="transcript path (default stdout)")
    p.set_defaults(func=cmd_session)

    p = sub.add_parser("chat", help="interactive chat REPL")
    add_common(p)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_chat)

    p = sub.add_parser("evaluate", help="score hypotheses against references")
    add_common(p)
    p.add_argument("--hyp", required=True, help="text file, one utterance per line")
    p.add_argument("--ref", default=None)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="inspect trained features")
    add_common(p)
    p.add_argument("what", choices=["ngrams", "alignment", "toggle", "export"])
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--feature", default=None, help="feature name, e.g. T-17")
    p.add_argument("--kind", default=None, choices=["topic", "persona"])
    p.add_argument("--min-occurrence", type=int, default=None)
    p.add_argument("--max-contexts", type=int, default=200)
    p.set_defaults(func=cmd_analyze)

    return parser


def main_dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except BrokenPipeError:
        return 0
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(main_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
