"""Dialogue data model, JSONL ingestion, vocabulary and synthetic corpora.

A dialogue is an alternating two-speaker turn sequence.  Real data comes in
as JSONL (one dialogue object per line); synthetic corpora are generated
with planted topic/persona ground truth so that feature learning can be
verified against a known signal.
"""

from __future__ import annotations

import json
import math
import random
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")

_PUNCT = set(string.punctuation)


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase, split on whitespace, peel leading/trailing punctuation off
    each chunk into separate tokens (interior punctuation is kept)."""
    tokens: list[str] = []
    for chunk in text.lower().split():
        head: list[str] = []
        while chunk and chunk[0] in _PUNCT:
            head.append(chunk[0])
            chunk = chunk[1:]
        tail: list[str] = []
        while chunk and chunk[-1] in _PUNCT:
            tail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(head)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(tail))
    return tuple(tokens)


@dataclass(frozen=True)
class Turn:
    speaker: int  # 0 or 1, alternating; turn j (1-indexed) has speaker (j-1) % 2
    text: str
    tokens: tuple[str, ...] = ()

    @staticmethod
    def make(speaker: int, text: str) -> "Turn":
        return Turn(speaker=speaker, text=text, tokens=tokenize(text))


@dataclass(frozen=True)
class PlantedTruth:
    """Ground-truth labels for synthetic dialogues (verification only)."""

    topic_ids: tuple[int, ...]
    persona_ids: tuple[int, int]  # persona of speaker 0, persona of speaker 1


@dataclass(frozen=True)
class Dialogue:
    id: str
    turns: tuple[Turn, ...]
    truth: PlantedTruth | None = None

    def __len__(self) -> int:
        return len(self.turns)


@dataclass(frozen=True)
class CorpusSplit:
    train: tuple[Dialogue, ...]
    valid: tuple[Dialogue, ...]
    test: tuple[Dialogue, ...]


@dataclass
class ParseError:
    line_no: int
    message: str


@dataclass
class LoadResult:
    dialogues: list[Dialogue]
    skipped_short: int
    errors: list[ParseError]


def dialogue_to_record(dialogue: Dialogue) -> dict:
    record: dict = {
        "id": dialogue.id,
        "turns": [{"speaker": t.speaker, "text": t.text} for t in dialogue.turns],
    }
    if dialogue.truth is not None:
        record["truth"] = {
            "topic_ids": list(dialogue.truth.topic_ids),
            "persona_ids": list(dialogue.truth.persona_ids),
        }
    return record


def dialogue_from_record(record: dict) -> Dialogue:
    turns = []
    for j, raw in enumerate(record["turns"]):
        speaker = raw["speaker"]
        if speaker not in (0, 1):
            raise ValueError(f"turn {j + 1}: speaker must be 0 or 1, got {speaker!r}")
        if speaker != j % 2:
            raise ValueError(f"turn {j + 1}: speakers must alternate starting at 0")
        turns.append(Turn.make(speaker, raw["text"]))
    truth = None
    if "truth" in record and record["truth"] is not None:
        raw_truth = record["truth"]
        persona_ids = tuple(raw_truth["persona_ids"])
        if len(persona_ids) != 2 or persona_ids[0] == persona_ids[1]:
            raise ValueError("truth.persona_ids must be two distinct ids")
        truth = PlantedTruth(
            topic_ids=tuple(raw_truth["topic_ids"]), persona_ids=persona_ids
        )
    return Dialogue(id=str(record["id"]), turns=tuple(turns), truth=truth)


def load_dialogues(path: str | Path, min_turns: int = 8) -> LoadResult:
    """Read a JSONL dialogue file.

    Dialogues with fewer than ``min_turns`` turns are skipped and counted;
    malformed lines are recorded with their line number and skipped.  An
    unreadable file raises.
    """
    result = LoadResult(dialogues=[], skipped_short=0, errors=[])
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                dialogue = dialogue_from_record(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                result.errors.append(ParseError(line_no=line_no, message=str(exc)))
                continue
            if len(dialogue) < min_turns:
                result.skipped_short += 1
                continue
            result.dialogues.append(dialogue)
    return result


def save_dialogues(dialogues: list[Dialogue] | tuple[Dialogue, ...], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for dialogue in dialogues:
            fh.write(json.dumps(dialogue_to_record(dialogue), ensure_ascii=False))
            fh.write("\n")


def split_corpus(
    dialogues: list[Dialogue] | tuple[Dialogue, ...],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> CorpusSplit:
    """Deterministic train/valid/test split.

    Valid/test sizes are floors of their ratios; the remainder goes to train.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    if len(dialogues) < 3:
        raise ValueError("need at least 3 dialogues to split")
    order = list(dialogues)
    random.Random(seed).shuffle(order)
    n = len(order)
    n_valid = math.floor(n * ratios[1])
    n_test = math.floor(n * ratios[2])
    n_train = n - n_valid - n_test
    return CorpusSplit(
        train=tuple(order[:n_train]),
        valid=tuple(order[n_train : n_train + n_valid]),
        test=tuple(order[n_train + n_valid :]),
    )


class Vocabulary:
    """Token/id mapping with reserved PAD/UNK/BOS/EOS ids and a fixed
    per-utterance encoding length ``max_len``."""

    def __init__(self, tokens: list[str] | tuple[str, ...], max_len: int = 30):
        self.max_len = max_len
        self.id_to_token: list[str] = list(RESERVED_TOKENS) + list(tokens)
        self.token_to_id: dict[str, int] = {
            tok: i for i, tok in enumerate(self.id_to_token)
        }
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def to_dict(self) -> dict:
        return {"max_len": self.max_len, "tokens": self.id_to_token[len(RESERVED_TOKENS):]}

    @staticmethod
    def from_dict(payload: dict) -> "Vocabulary":
        return Vocabulary(payload["tokens"], max_len=payload["max_len"])


def build_vocab(
    dialogues: list[Dialogue] | tuple[Dialogue, ...],
    min_count: int = 1,
    max_size: int = 50000,
    max_len: int = 30,
) -> Vocabulary:
    """Frequency vocabulary over training dialogues.

    Tokens with count < ``min_count`` fall to UNK; at most ``max_size``
    non-reserved tokens survive, preferring higher counts, with count ties
    broken by lexicographic token order.
    """
    if not dialogues:
        raise ValueError("cannot build a vocabulary from an empty training set")
    counts: Counter[str] = Counter()
    for dialogue in dialogues:
        for turn in dialogue.turns:
            counts.update(turn.tokens)
    kept = [tok for tok, c in counts.items() if c >= min_count]
    kept.sort(key=lambda tok: (-counts[tok], tok))
    return Vocabulary(kept[:max_size], max_len=max_len)


def encode_utterance(turn: Turn | tuple[str, ...], vocab: Vocabulary) -> list[int]:
    """Fixed-length id encoding: UNK for unknown tokens, right-padded with
    PAD, truncated at ``vocab.max_len``.  No BOS/EOS (encoder-side form)."""
    tokens = turn.tokens if isinstance(turn, Turn) else tuple(turn)
    ids = [vocab.id_of(tok) for tok in tokens[: vocab.max_len]]
    ids.extend([PAD] * (vocab.max_len - len(ids)))
    return ids


def encode_target(turn: Turn | tuple[str, ...], vocab: Vocabulary) -> list[int]:
    """Decoder-side form: BOS + ids + EOS, right-padded to max_len + 2."""
    tokens = turn.tokens if isinstance(turn, Turn) else tuple(turn)
    ids = [vocab.id_of(tok) for tok in tokens[: vocab.max_len]]
    out = [BOS] + ids + [EOS]
    out.extend([PAD] * (vocab.max_len + 2 - len(out)))
    return out


def decode_ids(ids, vocab: Vocabulary) -> list[str]:
    """Ids back to tokens, dropping PAD/BOS and stopping at EOS."""
    tokens = []
    for i in ids:
        i = int(i)
        if i == EOS:
            break
        if i in (PAD, BOS):
            continue
        tokens.append(vocab.id_to_token[i])
    return tokens


@dataclass
class SynthConfig:
    """Knobs for the planted-truth synthetic corpus.

    Each dialogue samples 1-2 topics and two distinct personas.  Utterances
    follow "[persona opener] [3-6 topic tokens] [persona closer]", with a 20%
    chance of a persona style token after each topic token.  Topic
    vocabularies are pairwise disjoint; persona style sets are disjoint too
    unless custom ``persona_styles`` say otherwise.
    """

    n_dialogues: int = 200
    n_topics: int = 4
    n_personas: int = 6
    turns: int = 8
    topic_vocab_size: int = 12
    persona_style_size: int = 6
    persona_styles: tuple[tuple[str, ...], ...] | None = None
    two_topic_prob: float = 0.5
    style_interleave_prob: float = 0.2
    min_content: int = 3
    max_content: int = 6


def topic_vocabulary(config: SynthConfig, topic: int) -> tuple[str, ...]:
    return tuple(f"t{topic}w{j}" for j in range(config.topic_vocab_size))


def persona_style(config: SynthConfig, persona: int) -> tuple[str, ...]:
    if config.persona_styles is not None:
        return tuple(config.persona_styles[persona])
    return tuple(f"p{persona}s{j}" for j in range(config.persona_style_size))


def synth_corpus(config: SynthConfig, seed: int) -> list[Dialogue]:
    """Generate a synthetic corpus, a pure function of (config, seed)."""
    if config.n_personas < 2:
        raise ValueError("need at least 2 personas to cast a dialogue")
    if config.persona_styles is not None and len(config.persona_styles) < config.n_personas:
        raise ValueError("persona_styles must cover every persona")
    rng = random.Random(seed)
    dialogues = []
    for d in range(config.n_dialogues):
        n_topics = 2 if rng.random() < config.two_topic_prob else 1
        topics = tuple(sorted(rng.sample(range(config.n_topics), k=min(n_topics, config.n_topics))))
        personas = tuple(rng.sample(range(config.n_personas), k=2))
        turns = []
        for j in range(config.turns):
            speaker = j % 2
            style = persona_style(config, personas[speaker])
            content_vocab = topic_vocabulary(config, rng.choice(topics))
            words = [rng.choice(style)]
            for _ in range(rng.randint(config.min_content, config.max_content)):
                words.append(rng.choice(content_vocab))
                if rng.random() < config.style_interleave_prob:
                    words.append(rng.choice(style))
            words.append(rng.choice(style))
            turns.append(Turn.make(speaker, " ".join(words)))
        dialogues.append(
            Dialogue(
                id=f"synth-{seed}-{d:05d}",
                turns=tuple(turns),
                truth=PlantedTruth(topic_ids=topics, persona_ids=personas),
            )
        )
    return dialogues
