"""Feature interpretability: representative n-gram profiles, mutual
information against planted synthetic labels, toggle success auditing and
raw feature export for external visualization."""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus import Dialogue, Turn, Vocabulary, encode_utterance
from .extractor import ExtractorModel
from .inference import FeatureOverride, feature_name

log = logging.getLogger(__name__)

Sentence = list[str]


def sentence_features(
    extractor: ExtractorModel, sentences: list[Sentence], vocab: Vocabulary
) -> np.ndarray:
    """(N, L) feature matrix of tokenized sentences."""
    if not sentences:
        return np.zeros((0, extractor.n_features))
    rows = torch.tensor(
        [encode_utterance(Turn(0, " ".join(s), tuple(s)), vocab) for s in sentences],
        dtype=torch.long,
    )
    with torch.no_grad():
        return extractor.extract(rows).numpy()


def labeled_sentences(dialogues: list[Dialogue], kind: str) -> tuple[list[Sentence], list]:
    """Sentences plus their planted label: the dialogue's (sorted) topic id
    tuple, or the speaking persona's id.  Dialogues without truth raise."""
    sentences, labels = [], []
    for d in dialogues:
        if d.truth is None:
            raise ValueError(f"dialogue {d.id} has no planted truth")
        for turn in d.turns:
            sentences.append(list(turn.tokens))
            if kind == "topic":
                labels.append(tuple(sorted(d.truth.topic_ids)))
            else:
                labels.append(d.truth.persona_ids[turn.speaker])
    return sentences, labels


# --- n-gram profiles ------------------------------------------------------


@dataclass
class NgramEntry:
    ngram: str
    count: int  # sentences containing it
    activation: float  # mean feature value over those sentences


@dataclass
class NgramReport:
    kind: str
    min_occurrence: int
    n_max: int
    top_k: int
    profiles: dict[str, list[NgramEntry]]  # feature name -> ranked entries

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "min_occurrence": self.min_occurrence,
            "n_max": self.n_max,
            "top_k": self.top_k,
            "profiles": {
                name: [vars(e) for e in entries] for name, entries in self.profiles.items()
            },
        }


def ngram_report(
    extractor: ExtractorModel,
    sentences: list[Sentence],
    vocab: Vocabulary,
    n_max: int = 4,
    min_occurrence: int = 20,
    top_k: int = 10,
) -> NgramReport:
    """For each feature, the top_k n-grams ranked by the mean activation of
    that feature over the sentences containing the n-gram.  Ties break
    lexicographically; n-grams under the occurrence threshold are dropped."""
    feats = sentence_features(extractor, sentences, vocab)
    containing: dict[tuple[str, ...], list[int]] = defaultdict(list)
    for idx, sent in enumerate(sentences):
        seen = set()
        for n in range(1, n_max + 1):
            for i in range(len(sent) - n + 1):
                seen.add(tuple(sent[i : i + n]))
        for gram in seen:
            containing[gram].append(idx)

    kept = {g: rows for g, rows in containing.items() if len(rows) >= min_occurrence}
    if not kept:
        log.warning(
            "no n-gram occurs in >= %d sentences; report is empty", min_occurrence
        )
    means = {g: feats[rows].mean(axis=0) for g, rows in kept.items()}
    profiles: dict[str, list[NgramEntry]] = {}
    order = sorted(kept)  # lexicographic tie-break baked into the sort key
    for j in range(extractor.n_features):
        ranked = sorted(order, key=lambda g: (-means[g][j], g))[:top_k]
        profiles[feature_name(extractor.kind, j)] = [
            NgramEntry(" ".join(g), len(kept[g]), float(means[g][j])) for g in ranked
        ]
    return NgramReport(
        kind=extractor.kind,
        min_occurrence=min_occurrence,
        n_max=n_max,
        top_k=top_k,
        profiles=profiles,
    )


# --- alignment with planted labels ----------------------------------------


def _mutual_information(binary: np.ndarray, labels: list) -> float:
    """MI (nats) between one binarized feature column and a multiclass
    label, from empirical joint counts."""
    n = len(labels)
    joint: Counter = Counter(zip(binary.tolist(), labels))
    pb = Counter(binary.tolist())
    pl = Counter(labels)
    mi = 0.0
    for (b, l), c in joint.items():
        p_joint = c / n
        mi += p_joint * math.log(p_joint * n * n / (pb[b] * pl[l]))
    return max(mi, 0.0)


@dataclass
class AlignmentReport:
    kind: str
    per_feature_mi: list[float]
    per_feature_baseline: list[float]  # mean MI over label permutations
    best_feature: str
    best_mi: float
    baseline_best_mi: float  # mean over permutations of the max-feature MI
    assignment: dict  # class label (str) -> best-matching feature name
    n_permutations: int

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "per_feature_mi": self.per_feature_mi,
            "per_feature_baseline": self.per_feature_baseline,
            "best_feature": self.best_feature,
            "best_mi": self.best_mi,
            "baseline_best_mi": self.baseline_best_mi,
            "assignment": self.assignment,
            "n_permutations": self.n_permutations,
        }


def alignment_from_features(
    features: np.ndarray,
    labels: list,
    kind: str,
    n_permutations: int = 20,
    seed: int = 0,
) -> AlignmentReport:
    """MI of each feature (binarized at 0.5) with the label, against a
    shuffled-label baseline.  Feature order does not affect the summary."""
    if features.ndim != 2 or features.shape[0] != len(labels):
        raise ValueError("features must be (N, L) aligned with N labels")
    if not labels:
        raise ValueError("no labeled sentences")
    binary = (features >= 0.5).astype(np.int64)
    n, n_feat = binary.shape
    mi = [_mutual_information(binary[:, j], labels) for j in range(n_feat)]

    rng = np.random.default_rng(seed)
    baseline = np.zeros((n_permutations, n_feat))
    for p in range(n_permutations):
        shuffled = [labels[i] for i in rng.permutation(n)]
        baseline[p] = [_mutual_information(binary[:, j], shuffled) for j in range(n_feat)]

    assignment = {}
    for cls in sorted(set(labels), key=str):
        indicator = [l == cls for l in labels]
        best = max(range(n_feat), key=lambda j: _mutual_information(binary[:, j], indicator))
        assignment[str(cls)] = feature_name(kind, best)

    best_j = int(np.argmax(mi))
    return AlignmentReport(
        kind=kind,
        per_feature_mi=[float(x) for x in mi],
        per_feature_baseline=[float(x) for x in baseline.mean(axis=0)],
        best_feature=feature_name(kind, best_j),
        best_mi=float(mi[best_j]),
        baseline_best_mi=float(baseline.max(axis=1).mean()),
        assignment=assignment,
        n_permutations=n_permutations,
    )


def alignment_score(
    extractor: ExtractorModel,
    dialogues: list[Dialogue],
    vocab: Vocabulary,
    n_permutations: int = 20,
    seed: int = 0,
) -> AlignmentReport:
    sentences, labels = labeled_sentences(dialogues, extractor.kind)
    feats = sentence_features(extractor, sentences, vocab)
    return alignment_from_features(feats, labels, extractor.kind, n_permutations, seed)


# --- feature toggling ------------------------------------------------------


@dataclass
class ToggleReport:
    feature: str
    success_rate: float  # toggled feature active in the regenerated response
    base_rate: float  # same measurement without the toggle
    n_eligible: int
    n_contexts: int

    def to_dict(self) -> dict:
        return vars(self)


def toggle_success_rate(engine, contexts: list[list], kind: str, index: int) -> ToggleReport:
    """Over contexts whose aggregate feature is inactive, force it on and
    check whether the regenerated response expresses it (component >= 0.5
    in the re-extracted features)."""
    if not contexts:
        raise ValueError("no contexts given")
    override = (FeatureOverride(kind, index, 1.0),)
    n_eligible = successes = base_active = 0
    for ctx in contexts:
        plain = engine.generate_response(ctx)
        if plain.features[kind][index] >= 0.5:
            continue  # already active: toggling is a no-op, skip
        n_eligible += 1
        if plain.re_extracted[kind][index] >= 0.5:
            base_active += 1
        toggled = engine.generate_response(ctx, override)
        if toggled.re_extracted[kind][index] >= 0.5:
            successes += 1
    if n_eligible == 0:
        raise ValueError(
            f"feature {feature_name(kind, index)} is already active in all "
            f"{len(contexts)} contexts; nothing to toggle"
        )
    return ToggleReport(
        feature=feature_name(kind, index),
        success_rate=successes / n_eligible,
        base_rate=base_active / n_eligible,
        n_eligible=n_eligible,
        n_contexts=len(contexts),
    )


# --- raw export -------------------------------------------------------------


def export_features(
    extractor: ExtractorModel,
    sentences: list[Sentence],
    vocab: Vocabulary,
    path: str | Path,
    ids: list[str] | None = None,
    labels: dict[str, list] | None = None,
) -> None:
    """TSV feature dump: one row per sentence (id, label columns if given,
    then the L feature values)."""
    feats = sentence_features(extractor, sentences, vocab)
    if ids is None:
        ids = [f"s{i:05d}" for i in range(len(sentences))]
    if len(ids) != len(sentences):
        raise ValueError("ids must align with sentences")
    label_cols = list(labels) if labels else []
    for col in label_cols:
        if len(labels[col]) != len(sentences):
            raise ValueError(f"label column {col!r} must align with sentences")
    header = ["id", *label_cols, *(feature_name(extractor.kind, j) for j in range(extractor.n_features))]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for i in range(len(sentences)):
            row = [ids[i], *(str(labels[c][i]) for c in label_cols)]
            row.extend(repr(float(v)) for v in feats[i])
            fh.write("\t".join(row) + "\n")
