"""Positive/negative utterance pair construction for the two discrimination
tasks.

Topic pairs ask "do these two utterances come from the same dialogue?";
persona pairs ask "same speaker within one dialogue?".  Positive pairs must
be more than 4 turns apart so the extractor learns shared topics/personas
rather than call-response adjacency patterns.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path

from .corpus import Dialogue, Vocabulary, encode_utterance

log = logging.getLogger(__name__)

MIN_POSITIVE_GAP = 4  # positives need |i - j| > 4 (turn indices 1-based)


@dataclass(frozen=True)
class PairExample:
    s: tuple[int, ...]
    t: tuple[int, ...]
    y: int  # 1 = positive relation, 0 = negative
    kind: str  # "topic" | "persona"
    provenance: tuple[tuple[str, int], tuple[str, int]]  # ((dlg id, turn), (dlg id, turn))


def positive_index_pairs(n_turns: int, same_speaker: bool) -> list[tuple[int, int]]:
    """Admissible 1-based (i, j) positive pairs with i < j and j - i > 4,
    optionally restricted to same speaker parity."""
    out = []
    for i in range(1, n_turns + 1):
        for j in range(i + MIN_POSITIVE_GAP + 1, n_turns + 1):
            if same_speaker and (i - 1) % 2 != (j - 1) % 2:
                continue
            out.append((i, j))
    return out


def _encode(dialogue: Dialogue, turn_no: int, vocab: Vocabulary) -> tuple[int, ...]:
    return tuple(encode_utterance(dialogue.turns[turn_no - 1], vocab))


def make_topic_pairs(
    dialogues: list[Dialogue] | tuple[Dialogue, ...],
    n_pairs: int,
    vocab: Vocabulary,
    seed: int = 0,
    cross_speaker_positives: bool = False,
) -> list[PairExample]:
    """Balanced topic pairs: n_pairs/2 positives (same dialogue, > 4 turns
    apart, either speaker unless ``cross_speaker_positives``) and n_pairs/2
    negatives (two distinct dialogues, uniform)."""
    if n_pairs <= 0 or n_pairs % 2:
        raise ValueError("n_pairs must be positive and even to stay balanced")
    if len(dialogues) < 2:
        raise ValueError("topic negatives need at least two dialogues")
    rng = random.Random(seed)

    candidates = []
    for dialogue in dialogues:
        pool = positive_index_pairs(len(dialogue), same_speaker=False)
        if cross_speaker_positives:
            pool = [(i, j) for i, j in pool if (i - 1) % 2 != (j - 1) % 2]
        if pool:
            candidates.append((dialogue, pool))
        else:
            log.warning("dialogue %s admits no topic positives (needs > %d turn gap)",
                        dialogue.id, MIN_POSITIVE_GAP)
    if not candidates:
        raise ValueError(
            f"no dialogue admits a topic-positive pair more than {MIN_POSITIVE_GAP} turns apart"
        )

    pairs = []
    for _ in range(n_pairs // 2):
        dialogue, pool = candidates[rng.randrange(len(candidates))]
        i, j = pool[rng.randrange(len(pool))]
        pairs.append(PairExample(
            s=_encode(dialogue, i, vocab), t=_encode(dialogue, j, vocab),
            y=1, kind="topic",
            provenance=((dialogue.id, i), (dialogue.id, j)),
        ))
    for _ in range(n_pairs // 2):
        a, b = rng.sample(range(len(dialogues)), k=2)
        da, db = dialogues[a], dialogues[b]
        i = rng.randrange(1, len(da) + 1)
        j = rng.randrange(1, len(db) + 1)
        pairs.append(PairExample(
            s=_encode(da, i, vocab), t=_encode(db, j, vocab),
            y=0, kind="topic",
            provenance=((da.id, i), (db.id, j)),
        ))
    return pairs


def make_persona_pairs(
    dialogues: list[Dialogue] | tuple[Dialogue, ...],
    n_pairs: int,
    vocab: Vocabulary,
    seed: int = 0,
) -> list[PairExample]:
    """Balanced persona pairs, all within one dialogue so the topic stays
    constant: positives are same-speaker turns > 4 apart, negatives are
    cross-speaker turns."""
    if n_pairs <= 0 or n_pairs % 2:
        raise ValueError("n_pairs must be positive and even to stay balanced")
    rng = random.Random(seed)

    pos_candidates = []
    neg_candidates = []
    for dialogue in dialogues:
        pos_pool = positive_index_pairs(len(dialogue), same_speaker=True)
        if pos_pool:
            pos_candidates.append((dialogue, pos_pool))
        else:
            log.warning("dialogue %s admits no persona positives (no same-speaker "
                        "pair more than %d turns apart)", dialogue.id, MIN_POSITIVE_GAP)
        neg_pool = [
            (i, j)
            for i in range(1, len(dialogue) + 1)
            for j in range(i + 1, len(dialogue) + 1)
            if (i - 1) % 2 != (j - 1) % 2
        ]
        if neg_pool:
            neg_candidates.append((dialogue, neg_pool))
    if not pos_candidates:
        raise ValueError(
            f"no dialogue admits a persona-positive pair: need same-speaker turns "
            f"more than {MIN_POSITIVE_GAP} apart"
        )
    if not neg_candidates:
        raise ValueError("no dialogue admits a persona-negative (cross-speaker) pair")

    pairs = []
    for _ in range(n_pairs // 2):
        dialogue, pool = pos_candidates[rng.randrange(len(pos_candidates))]
        i, j = pool[rng.randrange(len(pool))]
        pairs.append(PairExample(
            s=_encode(dialogue, i, vocab), t=_encode(dialogue, j, vocab),
            y=1, kind="persona",
            provenance=((dialogue.id, i), (dialogue.id, j)),
        ))
    for _ in range(n_pairs // 2):
        dialogue, pool = neg_candidates[rng.randrange(len(neg_candidates))]
        i, j = pool[rng.randrange(len(pool))]
        pairs.append(PairExample(
            s=_encode(dialogue, i, vocab), t=_encode(dialogue, j, vocab),
            y=0, kind="persona",
            provenance=((dialogue.id, i), (dialogue.id, j)),
        ))
    return pairs


def shuffle_and_order(pairs: list[PairExample], seed: int = 0) -> list[PairExample]:
    """Uniform shuffle plus a fair coin per pair deciding whether (s, t) is
    swapped, so order-sensitive matchers see both orders.  Labels are
    untouched."""
    rng = random.Random(seed)
    out = list(pairs)
    rng.shuffle(out)
    flipped = []
    for pair in out:
        if rng.random() < 0.5:
            pair = PairExample(
                s=pair.t, t=pair.s, y=pair.y, kind=pair.kind,
                provenance=(pair.provenance[1], pair.provenance[0]),
            )
        flipped.append(pair)
    return flipped


def dump_pairs(pairs: list[PairExample], path: str | Path) -> None:
    """Audit dump: one JSON object per pair with provenance refs and label."""
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps({
                "s_ref": list(pair.provenance[0]),
                "t_ref": list(pair.provenance[1]),
                "y": pair.y,
                "kind": pair.kind,
            }))
            fh.write("\n")
