"""Automatic evaluation: relevance (BLEU, NIST, simplified METEOR,
embedding Greedy/Average/Extreme) and diversity (Dist-n, Ent-n).

Conventions, echoed in every report: corpus-level BLEU with add-one
smoothing on the n >= 2 precisions; NIST information weights from the
reference corpus; METEOR-s uses exact plus suffix-stem matching only;
Ent-n uses the natural log.  All metrics are pure functions of their
inputs.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

Tokens = list[str]
EvalPair = tuple[Tokens, Tokens]  # (hypothesis, reference)


def ngrams(tokens: Tokens, n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


# --- BLEU ---------------------------------------------------------------


@dataclass
class BleuResult:
    score: float  # 0-100
    precisions: list[float]  # smoothed, by order
    brevity_penalty: float
    raw_zero: bool  # some order had zero raw matches (unsmoothed score is 0)

    def __float__(self):
        return self.score


def bleu(pairs: list[EvalPair], max_n: int = 4) -> BleuResult:
    """Corpus BLEU with brevity penalty; add-one smoothing on the
    numerator and denominator of orders n >= 2."""
    if not pairs:
        raise ValueError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in pairs:
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hyp_counts = Counter(ngrams(hyp, n))
            ref_counts = Counter(ngrams(ref, n))
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())

    raw_zero = any(m == 0 for m, t in zip(matches, totals) if t > 0) or totals[0] == 0
    precisions = []
    for n in range(1, max_n + 1):
        m, t = matches[n - 1], totals[n - 1]
        if n >= 2:
            m, t = m + 1, t + 1
        precisions.append(m / t if t > 0 else 0.0)

    if hyp_len == 0 or precisions[0] == 0.0:
        return BleuResult(0.0, precisions, 0.0, True)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    if any(p == 0.0 for p in precisions):
        return BleuResult(0.0, precisions, bp, True)
    log_mean = sum(math.log(p) for p in precisions) / max_n
    return BleuResult(100.0 * bp * math.exp(log_mean), precisions, bp, raw_zero)


# --- NIST ---------------------------------------------------------------

# brevity factor hits 0.5 when the system output is 2/3 the reference length
_NIST_BETA = math.log(0.5) / math.log(2.0 / 3.0) ** 2


def nist(pairs: list[EvalPair], max_n: int = 4) -> float:
    """Information-weighted n-gram co-occurrence over the corpus.

    Weights come from the pooled reference corpus: info(g) =
    log2(count(prefix(g)) / count(g)), with the total reference word count
    as the order-1 numerator.  Co-occurrences are clipped per pair.
    """
    if not pairs:
        raise ValueError("empty corpus")
    ref_counts: Counter = Counter()
    total_ref_words = 0
    for _, ref in pairs:
        total_ref_words += len(ref)
        for n in range(1, max_n + 1):
            ref_counts.update(ngrams(ref, n))

    def info(gram: tuple[str, ...]) -> float:
        denom = ref_counts[gram]
        num = total_ref_words if len(gram) == 1 else ref_counts[gram[:-1]]
        if denom == 0 or num == 0:
            return 0.0
        return math.log2(num / denom)

    hyp_len = ref_len = 0
    score = 0.0
    gained = [0.0] * max_n
    totals = [0] * max_n
    for hyp, ref in pairs:
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hyp_c = Counter(ngrams(hyp, n))
            ref_c = Counter(ngrams(ref, n))
            totals[n - 1] += sum(hyp_c.values())
            for gram, c in hyp_c.items():
                clipped = min(c, ref_c[gram])
                if clipped:
                    gained[n - 1] += clipped * info(gram)
    for n in range(max_n):
        if totals[n] > 0:
            score += gained[n] / totals[n]

    if hyp_len == 0:
        return 0.0
    ratio = min(hyp_len / ref_len, 1.0) if ref_len > 0 else 1.0
    brevity = math.exp(_NIST_BETA * math.log(ratio) ** 2)
    return score * brevity


# --- METEOR-s -----------------------------------------------------------

_VOWELS = set("aeiou")


def stem(token: str) -> str:
    """Tiny suffix stripper (s, es, ed, ing); a doubled final consonant
    left by ed/ing is collapsed so 'running' stems like 'run'."""
    def collapse(t: str) -> str:
        if len(t) >= 2 and t[-1] == t[-2] and t[-1] not in _VOWELS:
            return t[:-1]
        return t

    if token.endswith("ing") and len(token) > 4:
        return collapse(token[:-3])
    if token.endswith("es") and len(token) > 3:
        return token[:-2]
    if token.endswith("ed") and len(token) > 3:
        return collapse(token[:-2])
    if token.endswith("s") and len(token) > 2 and not token.endswith("ss"):
        return token[:-1]
    return token


def _align(hyp: Tokens, ref: Tokens) -> list[tuple[int, int]]:
    """Greedy left-to-right alignment: exact matches first, then stem
    matches over what remains.  Returns (hyp index, ref index) pairs."""
    matched_ref = [False] * len(ref)
    alignment: dict[int, int] = {}
    for stage_key in (lambda t: t, stem):
        ref_keys = [stage_key(t) for t in ref]
        for i, tok in enumerate(hyp):
            if i in alignment:
                continue
            key = stage_key(tok)
            for j, ref_key in enumerate(ref_keys):
                if not matched_ref[j] and key == ref_key:
                    alignment[i] = j
                    matched_ref[j] = True
                    break
    return sorted(alignment.items())


def _chunks(alignment: list[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in alignment:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_simple(pairs: list[EvalPair]) -> float:
    """Mean per-pair METEOR-s: F = 10PR / (R + 9P), fragmentation penalty
    0.5 (chunks/matches)^3; unmatched pairs score 0."""
    if not pairs:
        raise ValueError("empty corpus")
    scores = []
    for hyp, ref in pairs:
        alignment = _align(hyp, ref)
        m = len(alignment)
        if m == 0 or not hyp or not ref:
            scores.append(0.0)
            continue
        p = m / len(hyp)
        r = m / len(ref)
        f = 10.0 * p * r / (r + 9.0 * p)
        penalty = 0.5 * (_chunks(alignment) / m) ** 3
        scores.append(f * (1.0 - penalty))
    return float(np.mean(scores))


# --- embedding-based metrics ---------------------------------------------


class EmbeddingTable:
    """token -> d-dim vector map backed by a plain text file
    ('token v1 v2 ... vd' per line); unknown tokens read as zeros."""

    def __init__(self, vectors: dict[str, np.ndarray]):
        if not vectors:
            raise ValueError("embedding table is empty")
        dims = {v.shape for v in vectors.values()}
        if len(dims) != 1:
            raise ValueError(f"inconsistent vector dimensions: {sorted(dims)}")
        self.vectors = {t: np.asarray(v, dtype=np.float64) for t, v in vectors.items()}
        self.dim = next(iter(self.vectors.values())).shape[0]

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def get(self, token: str) -> np.ndarray:
        return self.vectors.get(token, np.zeros(self.dim))

    @staticmethod
    def load(path: str | Path) -> "EmbeddingTable":
        vectors = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                parts = line.split()
                if not parts:
                    continue
                try:
                    vectors[parts[0]] = np.array([float(x) for x in parts[1:]], dtype=np.float64)
                except ValueError as exc:
                    raise ValueError(f"{path}:{line_no}: bad vector line") from exc
        return EmbeddingTable(vectors)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for token in sorted(self.vectors):
                vec = " ".join(repr(float(x)) for x in self.vectors[token])
                fh.write(f"{token} {vec}\n")


def train_embedding_table(dialogues, dim: int = 32, window: int = 2, seed: int = 0) -> EmbeddingTable:
    """Desk-scale word vectors: PPMI co-occurrence matrix factorized by
    truncated SVD.  Deterministic given the corpus and seed."""
    sentences = [list(turn.tokens) for d in dialogues for turn in d.turns]
    vocab = sorted({t for s in sentences for t in s})
    if not vocab:
        raise ValueError("no tokens to embed")
    index = {t: i for i, t in enumerate(vocab)}
    n = len(vocab)
    counts = np.zeros((n, n))
    for sent in sentences:
        for i, tok in enumerate(sent):
            for j in range(max(0, i - window), min(len(sent), i + window + 1)):
                if j != i:
                    counts[index[tok], index[sent[j]]] += 1.0
    total = counts.sum()
    if total == 0:
        raise ValueError("no co-occurrences to embed")
    row = counts.sum(axis=1, keepdims=True)
    col = counts.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(counts * total / (row @ col))
    ppmi = np.where(np.isfinite(pmi), np.maximum(pmi, 0.0), 0.0)
    rng = np.random.default_rng(seed)
    ppmi = ppmi + 1e-9 * rng.standard_normal(ppmi.shape)  # break exact ties
    u, s, _ = np.linalg.svd(ppmi, full_matrices=False)
    d = min(dim, n)
    emb = u[:, :d] * np.sqrt(s[:d])
    return EmbeddingTable({t: emb[index[t]] for t in vocab})


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def _known_vectors(tokens: Tokens, table: EmbeddingTable) -> np.ndarray | None:
    vecs = [table.get(t) for t in tokens if t in table]
    return np.stack(vecs) if vecs else None


@dataclass
class EmbeddingScores:
    greedy: float
    average: float
    extreme: float
    oov_pairs: int  # pairs scored 0 because one side was entirely OOV


def embedding_metrics(pairs: list[EvalPair], table: EmbeddingTable) -> EmbeddingScores:
    """Greedy (directional best-match cosine averaged both ways), Average
    (cosine of mean vectors) and Extreme (max-magnitude pooled cosine);
    OOV tokens are skipped, fully-OOV sides zero the pair."""
    if not pairs:
        raise ValueError("empty corpus")
    greedy, average, extreme = [], [], []
    oov_pairs = 0
    for hyp, ref in pairs:
        h = _known_vectors(hyp, table)
        r = _known_vectors(ref, table)
        if h is None or r is None:
            greedy.append(0.0)
            average.append(0.0)
            extreme.append(0.0)
            oov_pairs += 1
            continue
        sims = np.array([[_cosine(a, b) for b in r] for a in h])
        greedy.append(0.5 * (sims.max(axis=1).mean() + sims.max(axis=0).mean()))
        average.append(_cosine(h.mean(axis=0), r.mean(axis=0)))
        pool = lambda m: m[np.abs(m).argmax(axis=0), np.arange(m.shape[1])]
        extreme.append(_cosine(pool(h), pool(r)))
    return EmbeddingScores(
        greedy=float(np.mean(greedy)),
        average=float(np.mean(average)),
        extreme=float(np.mean(extreme)),
        oov_pairs=oov_pairs,
    )


# --- diversity -----------------------------------------------------------


def dist_n(hypotheses: list[Tokens], n: int) -> float:
    """Unique / total n-grams pooled over the corpus."""
    pooled = [g for hyp in hypotheses for g in ngrams(hyp, n)]
    if not pooled:
        raise ValueError(f"no {n}-grams in corpus")
    return len(set(pooled)) / len(pooled)


def ent_n(hypotheses: list[Tokens], n: int = 4) -> float:
    """Shannon entropy (nats) of the pooled n-gram distribution."""
    counts = Counter(g for hyp in hypotheses for g in ngrams(hyp, n))
    total = sum(counts.values())
    if total == 0:
        raise ValueError(f"no {n}-grams in corpus")
    return -sum((c / total) * math.log(c / total) for c in counts.values())


# --- full report ----------------------------------------------------------

REPORT_CONFIG = {
    "bleu_smoothing": "add-one on numerator and denominator for n >= 2",
    "nist_weights": "reference-corpus information weights, per-pair clipping",
    "meteor": "METEOR-s: exact + suffix-stem matching only",
    "ent_log_base": "e",
}


@dataclass
class MetricsReport:
    bleu: float | None
    nist: float | None
    meteor_s: float | None
    greedy: float | None
    average: float | None
    extreme: float | None
    dist1: float
    dist2: float
    ent4: float
    counts: dict = field(default_factory=dict)
    config: dict = field(default_factory=lambda: dict(REPORT_CONFIG))

    def to_dict(self) -> dict:
        return {
            "relevance": {
                "bleu": self.bleu,
                "nist": self.nist,
                "meteor_s": self.meteor_s,
                "greedy": self.greedy,
                "average": self.average,
                "extreme": self.extreme,
            },
            "diversity": {"dist1": self.dist1, "dist2": self.dist2, "ent4": self.ent4},
            "counts": self.counts,
            "config": self.config,
        }

    @staticmethod
    def from_dict(payload: dict) -> "MetricsReport":
        rel, div = payload["relevance"], payload["diversity"]
        return MetricsReport(
            bleu=rel["bleu"], nist=rel["nist"], meteor_s=rel["meteor_s"],
            greedy=rel["greedy"], average=rel["average"], extreme=rel["extreme"],
            dist1=div["dist1"], dist2=div["dist2"], ent4=div["ent4"],
            counts=payload["counts"], config=payload["config"],
        )


def evaluate_corpus(
    outputs: list[Tokens],
    references: list[Tokens] | None,
    table: EmbeddingTable | None = None,
) -> MetricsReport:
    """Full battery over aligned output/reference token lists.  With no
    references (human rows) only the diversity metrics are populated;
    with no embedding table the embedding metrics are left null."""
    if not outputs:
        raise ValueError("empty corpus")
    counts: dict = {"n_outputs": len(outputs)}
    if references is not None:
        if len(references) != len(outputs):
            raise ValueError(
                f"misaligned corpora: {len(outputs)} outputs vs {len(references)} references"
            )
        pairs = list(zip(outputs, references))
        b = bleu(pairs)
        counts["bleu_raw_zero"] = b.raw_zero
        report_bleu = b.score
        report_nist = nist(pairs)
        report_meteor = meteor_simple(pairs)
        if table is not None:
            emb = embedding_metrics(pairs, table)
            counts["oov_pairs"] = emb.oov_pairs
            greedy, average, extreme = emb.greedy, emb.average, emb.extreme
        else:
            greedy = average = extreme = None
    else:
        report_bleu = report_nist = report_meteor = None
        greedy = average = extreme = None
    return MetricsReport(
        bleu=report_bleu,
        nist=report_nist,
        meteor_s=report_meteor,
        greedy=greedy,
        average=average,
        extreme=extreme,
        dist1=dist_n(outputs, 1),
        dist2=dist_n(outputs, 2),
        ent4=ent_n(outputs, 4),
        counts=counts,
    )
