"""Frozen-model generation: feature aggregation over the most recent K
turns, single responses with toggle diagnostics, rolled multi-turn
sessions, and the backend driving the interactive chat loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import Tensor

from .corpus import PAD, Dialogue, Turn, Vocabulary, decode_ids, dialogue_to_record, encode_utterance
from .extractor import ExtractorModel
from .generator import VARIANT_KINDS, AggWeights, GeneratorModel, load_generator

KIND_LETTER = {"topic": "T", "persona": "P"}
LETTER_KIND = {v: k for k, v in KIND_LETTER.items()}


def feature_name(kind: str, index: int) -> str:
    return f"{KIND_LETTER[kind]}-{index}"


def parse_feature_name(name: str) -> tuple[str, int]:
    """'T-17' -> ('topic', 17); 'P-3' -> ('persona', 3)."""
    letter, sep, idx = name.partition("-")
    if sep != "-" or letter not in LETTER_KIND or not idx.isdigit():
        raise ValueError(f"malformed feature name {name!r}; expected T-<i> or P-<i>")
    return LETTER_KIND[letter], int(idx)


@dataclass(frozen=True)
class FeatureOverride:
    """Force one feature component to a fixed value (1 activate, 0 off)
    after aggregation and before the generator's initial hidden state."""

    kind: str
    index: int
    value: float

    def __post_init__(self):
        if self.kind not in KIND_LETTER:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.value not in (0.0, 1.0):
            raise ValueError("override value must be 0 or 1")
        if self.index < 0:
            raise ValueError("override index must be non-negative")

    @property
    def name(self) -> str:
        return feature_name(self.kind, self.index)

    @staticmethod
    def parse(text: str) -> "FeatureOverride":
        """'T-17=1' -> FeatureOverride('topic', 17, 1.0)."""
        name, sep, value = text.partition("=")
        if sep != "=" or value not in ("0", "1"):
            raise ValueError(f"malformed override {text!r}; expected T-<i>=0|1")
        kind, index = parse_feature_name(name)
        return FeatureOverride(kind, index, float(value))


@dataclass
class GenerationResult:
    text: str
    tokens: list[str]
    features: dict[str, list[float]]  # conditioning F per kind, post-override
    re_extracted: dict[str, list[float]]  # F of the generated utterance

    def diagnostics(self) -> dict:
        return {"features": self.features, "re_extracted": self.re_extracted}


def _as_turn(item: Turn | str, speaker: int) -> Turn:
    return item if isinstance(item, Turn) else Turn.make(speaker, item)


class InferenceEngine:
    """Immutable bundle of a trained generator, its frozen extractors,
    fitted aggregation weights and the shared vocabulary."""

    def __init__(
        self,
        model: GeneratorModel,
        vocab: Vocabulary,
        agg: dict[str, AggWeights],
        extractors: dict[str, ExtractorModel],
        rollout_len: int | None = None,
    ):
        model.eval()
        model.requires_grad_(False)
        for ex in extractors.values():
            ex.eval()
            ex.requires_grad_(False)
        self.model = model
        self.vocab = vocab
        self.kinds = VARIANT_KINDS[model.variant]
        for kind in self.kinds:
            if kind not in extractors:
                raise ValueError(f"missing extractor for kind {kind!r}")
            if kind not in agg:
                raise ValueError(f"missing aggregation weights for kind {kind!r}")
        self.extractors = extractors
        self.agg = agg
        self.rollout_len = vocab.max_len if rollout_len is None else rollout_len

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> "InferenceEngine":
        model, vocab, agg, extractors, _ = load_generator(path)
        return cls(model, vocab, agg, extractors)

    @property
    def k(self) -> int:
        return self.model.config.k

    def _context_rows(self, turns: list[Turn | str]) -> Tensor:
        if len(turns) != self.k:
            raise ValueError(f"context must have exactly {self.k} turns, got {len(turns)}")
        rows = [encode_utterance(_as_turn(t, i % 2), self.vocab) for i, t in enumerate(turns)]
        return torch.tensor(rows, dtype=torch.long)

    def aggregate_features(self, rows: Tensor, kind: str) -> Tensor:
        """Weighted sum of per-turn features over the window; the
        hard-binary variant re-rounds the aggregate into {0,1}^L."""
        if kind not in self.extractors:
            raise ValueError(f"missing extractor for kind {kind!r}")
        ex = self.extractors[kind]
        with torch.no_grad():
            per_turn = ex.extract(rows)  # (K, L)
        w = torch.tensor(self.agg[kind].weights, dtype=per_turn.dtype)
        agg = (per_turn * w.unsqueeze(-1)).sum(dim=0)
        if ex.mode == "hard":
            agg = torch.floor(agg + 0.5)
        return agg

    def _conditioning(self, rows: Tensor, overrides: tuple[FeatureOverride, ...]) -> tuple[Tensor | None, dict]:
        if not self.kinds:
            if overrides:
                raise ValueError("variant has no features")
            return None, {}
        per_kind: dict[str, Tensor] = {k: self.aggregate_features(rows, k) for k in self.kinds}
        for ov in overrides:
            if ov.kind not in per_kind:
                raise ValueError(f"variant has no {ov.kind} features")
            if ov.index >= per_kind[ov.kind].shape[-1]:
                raise ValueError(f"feature index {ov.index} out of range for {ov.kind}")
            per_kind[ov.kind] = per_kind[ov.kind].clone()
            per_kind[ov.kind][ov.index] = ov.value
        feats = torch.cat([per_kind[k] for k in self.kinds], dim=-1).unsqueeze(0)
        return feats, {k: per_kind[k].tolist() for k in self.kinds}

    def _extract_generated(self, text: str) -> dict[str, list[float]]:
        row = torch.tensor([encode_utterance(Turn.make(0, text), self.vocab)], dtype=torch.long)
        out = {}
        with torch.no_grad():
            for kind in self.kinds:
                out[kind] = self.extractors[kind].extract(row)[0].tolist()
        return out

    def generate_response(
        self,
        context: list[Turn | str],
        overrides: tuple[FeatureOverride, ...] = (),
    ) -> GenerationResult:
        """Greedy response to exactly K context turns.  Deterministic:
        repeated calls with the same inputs yield the same utterance."""
        rows = self._context_rows(context)
        feats, feat_lists = self._conditioning(rows, tuple(overrides))
        with torch.no_grad():
            h0 = self.model.init_hidden(self.model.encode_context(rows.unsqueeze(0)), feats)
            rollout = self.model.rollout_st(h0, self.rollout_len, tau=1.0)
        tokens = decode_ids(rollout.tokens[0], self.vocab)
        text = " ".join(tokens)
        return GenerationResult(
            text=text,
            tokens=tokens,
            features=feat_lists,
            re_extracted=self._extract_generated(text) if self.kinds else {},
        )


@dataclass
class SessionResult:
    turns: list[Turn]
    generated: list[bool]  # parallel to turns
    diagnostics: list[dict]  # one record per generated turn

    def to_dialogue(self, dialogue_id: str) -> Dialogue:
        return Dialogue(id=dialogue_id, turns=tuple(self.turns), truth=None)

    def to_record(self, dialogue_id: str) -> dict:
        record = dialogue_to_record(self.to_dialogue(dialogue_id))
        for turn_rec, gen in zip(record["turns"], self.generated):
            if gen:
                turn_rec["generated"] = True
        record["diagnostics"] = self.diagnostics
        return record


def generate_session(
    engine: InferenceEngine,
    seed_turns: list[Turn],
    n_future: int,
    overrides: tuple[FeatureOverride, ...] = (),
) -> SessionResult:
    """Roll the dialogue forward n_future turns.  Each new turn conditions
    on the most recent K turns (including previously generated ones);
    features are re-aggregated every step and overrides stay applied."""
    if n_future < 1:
        raise ValueError("n_future must be at least 1")
    if len(seed_turns) < engine.k:
        raise ValueError(f"need at least {engine.k} seed turns, got {len(seed_turns)}")
    turns = list(seed_turns)
    generated = [False] * len(turns)
    diagnostics = []
    for _ in range(n_future):
        result = engine.generate_response(turns[-engine.k :], overrides)
        speaker = len(turns) % 2  # strict alternation, turn 1 is speaker 0
        turns.append(Turn.make(speaker, result.text))
        generated.append(True)
        diagnostics.append(result.diagnostics())
    return SessionResult(turns=turns, generated=generated, diagnostics=diagnostics)


CHAT_USAGE = (
    "commands: /toggle <T-i|P-i> on|off, /features, /reset, /save <path>; "
    "anything else is sent as your turn"
)


@dataclass
class ChatResult:
    kind: str  # "reply" | "info" | "usage"
    text: str


@dataclass
class ChatSession:
    """Single-user chat state over a frozen engine.  History below K turns
    is left-padded with empty utterances so chat works from the start."""

    engine: InferenceEngine
    turns: list[Turn] = field(default_factory=list)
    generated: list[bool] = field(default_factory=list)
    overrides: dict[tuple[str, int], FeatureOverride] = field(default_factory=dict)
    diagnostics: list[dict] = field(default_factory=list)

    def _window(self) -> list[Turn]:
        window = self.turns[-self.engine.k :]
        n_pad = self.engine.k - len(window)
        pad = [Turn.make(i % 2, "") for i in range(n_pad)]
        return pad + window

    def active_overrides(self) -> tuple[FeatureOverride, ...]:
        return tuple(self.overrides[k] for k in sorted(self.overrides))

    def save_transcript(self, path: str | Path) -> None:
        from .utils import canonical_json

        record = SessionResult(self.turns, self.generated, self.diagnostics).to_record("chat")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(canonical_json(record) + "\n")


def _cmd_toggle(session: ChatSession, args: list[str]) -> ChatResult:
    if len(args) != 2 or args[1] not in ("on", "off"):
        return ChatResult("usage", f"usage: /toggle <T-i|P-i> on|off\n{CHAT_USAGE}")
    try:
        kind, index = parse_feature_name(args[0])
        override = FeatureOverride(kind, index, 1.0 if args[1] == "on" else 0.0)
        if kind not in session.engine.kinds:
            return ChatResult("usage", f"variant has no {kind} features")
        n = session.engine.extractors[kind].n_features
        if index >= n:
            return ChatResult("usage", f"feature index {index} out of range (L={n})")
    except ValueError as exc:
        return ChatResult("usage", str(exc))
    session.overrides[(kind, index)] = override
    return ChatResult("info", f"{override.name} forced {'on' if override.value else 'off'}")


def _cmd_features(session: ChatSession) -> ChatResult:
    if not session.engine.kinds:
        return ChatResult("info", "variant has no features")
    rows = session.engine._context_rows(session._window())
    _, feats = session.engine._conditioning(rows, session.active_overrides())
    lines = []
    for kind in session.engine.kinds:
        active = [feature_name(kind, i) for i, v in enumerate(feats[kind]) if v >= 0.5]
        lines.append(f"{kind}: {' '.join(active) if active else '(none active)'}")
    return ChatResult("info", "\n".join(lines))


def chat_step(session: ChatSession, line: str) -> ChatResult:
    """One REPL interaction: a command (slash-prefixed) or a user turn."""
    line = line.strip()
    if not line:
        return ChatResult("usage", CHAT_USAGE)
    if line.startswith("/"):
        cmd, *args = line.split()
        if cmd == "/toggle":
            return _cmd_toggle(session, args)
        if cmd == "/features":
            return _cmd_features(session)
        if cmd == "/reset":
            session.turns.clear()
            session.generated.clear()
            session.overrides.clear()
            session.diagnostics.clear()
            return ChatResult("info", "history and overrides cleared")
        if cmd == "/save":
            if len(args) != 1:
                return ChatResult("usage", f"usage: /save <path>\n{CHAT_USAGE}")
            try:
                session.save_transcript(args[0])
            except OSError as exc:
                return ChatResult("usage", f"cannot save: {exc}")
            return ChatResult("info", f"transcript saved to {args[0]}")
        return ChatResult("usage", f"unknown command {cmd}\n{CHAT_USAGE}")

    session.turns.append(Turn.make(len(session.turns) % 2, line))
    session.generated.append(False)
    result = session.engine.generate_response(session._window(), session.active_overrides())
    session.turns.append(Turn.make(len(session.turns) % 2, result.text))
    session.generated.append(True)
    session.diagnostics.append(result.diagnostics())
    return ChatResult("reply", result.text)
