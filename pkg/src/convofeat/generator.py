"""Controllable response generator.

A CNN context encoder summarizes the K previous turns into a context vector
C; an MLP mixes C with a feature vector F into an initial hidden variable
H0 that the LSTM decoder receives at every step.  Training combines
teacher-forced MLE with a cycle-consistency loss: the greedy rollout is
re-encoded by the frozen feature extractors and pulled toward the input
features.  The rollout stays exact (argmax) in the forward pass; the token
selection back-propagates through a straight-through surrogate with
gradient 1/tau.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import Tensor, nn

from .corpus import BOS, EOS, PAD, CorpusSplit, Dialogue, Vocabulary, encode_target, encode_utterance
from .extractor import (
    CnnEncoder,
    ExtractorModel,
    TrainingDiverged,
    load_extractor,
    save_extractor,
    seed_everything,
)
from .utils import read_json, sha256_bytes, write_json

VARIANTS = ("s2s", "t", "tp", "tp-bin")

# feature kinds each variant conditions on, in concatenation order
VARIANT_KINDS = {"s2s": (), "t": ("topic",), "tp": ("topic", "persona"), "tp-bin": ("topic", "persona")}


def variant_mode(variant: str) -> str:
    """Head mode the variant's extractors must use."""
    return "hard" if variant.endswith("-bin") else "soft"


def st_select(p: Tensor, tau: float) -> Tensor:
    """Straight-through token selection.

    Forward: exact one-hot argmax of the step distribution p.  Backward: the
    selection Jacobian is replaced by (1/tau) * identity, so upstream
    gradients reach p scaled by 1/tau.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    hard = torch.nn.functional.one_hot(p.argmax(dim=-1), p.shape[-1]).to(p.dtype)
    return hard.detach() + (p - p.detach()) / tau


@dataclass
class StSchedule:
    """Linear slope annealing for the straight-through decoder: slope runs
    from 1 to 100 over the epochs, i.e. tau from 1 down to 0.01."""

    initial_slope: float = 1.0
    final_slope: float = 100.0

    def tau(self, epoch: int, n_epochs: int) -> float:
        if n_epochs <= 1:
            return 1.0 / self.final_slope
        frac = min(max(epoch / (n_epochs - 1), 0.0), 1.0)
        slope = self.initial_slope + (self.final_slope - self.initial_slope) * frac
        return 1.0 / slope


@dataclass
class GeneratorConfig:
    variant: str = "tp"
    k: int = 4  # context turns
    embed_dim: int = 300
    n_filters: int = 300
    filter_width: int = 5
    stride: int = 2
    enc_dim: int = 500
    hidden: int = 500
    dropout: float = 0.0
    feature_dim: int = 0  # total feature width; 0 for s2s

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.variant == "s2s" and self.feature_dim != 0:
            raise ValueError("s2s takes no features")
        if self.variant != "s2s" and self.feature_dim <= 0:
            raise ValueError(f"variant {self.variant} needs feature_dim > 0")


class GeneratorModel(nn.Module):
    def __init__(self, vocab_size: int, max_len: int, config: GeneratorConfig):
        super().__init__()
        self.config = config
        self.variant = config.variant
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.encoder = CnnEncoder(
            vocab_size,
            max_len=max_len,
            embed_dim=config.embed_dim,
            n_filters=config.n_filters,
            filter_width=config.filter_width,
            stride=config.stride,
            out_dim=config.enc_dim,
            dropout=config.dropout,
        )
        self.agg_c = nn.Linear(config.k * config.enc_dim, config.enc_dim)
        self.h0_mlp = nn.Sequential(
            nn.Linear(config.enc_dim + config.feature_dim, config.hidden),
            nn.Tanh(),
            nn.Linear(config.hidden, config.hidden),
        )
        # decoder shares the encoder's embedding table
        self.decoder = nn.LSTMCell(config.embed_dim + config.hidden, config.hidden)
        self.out_proj = nn.Linear(config.hidden, vocab_size)

    def encode_context(self, ids: Tensor) -> Tensor:
        """(B, K, max_len) ids -> (B, enc_dim) context vector (positional:
        the K sentence vectors are concatenated before the linear map)."""
        if ids.dim() != 3 or ids.shape[1] != self.config.k:
            raise ValueError(f"expected (B, {self.config.k}, {self.max_len}) context ids")
        b, k, t = ids.shape
        sent = self.encoder(ids.reshape(b * k, t)).reshape(b, k * self.config.enc_dim)
        return self.agg_c(sent)

    def init_hidden(self, context: Tensor, features: Tensor | None) -> Tensor:
        if self.config.feature_dim == 0:
            if features is not None and features.numel() > 0:
                raise ValueError("s2s variant takes no features")
            joined = context
        else:
            if features is None or features.shape[-1] != self.config.feature_dim:
                got = None if features is None else features.shape[-1]
                raise ValueError(f"expected {self.config.feature_dim}-dim features, got {got}")
            joined = torch.cat([context, features], dim=-1)
        return self.h0_mlp(joined)

    def _step(self, tokens_embedded: Tensor, h0: Tensor, state):
        h, c = self.decoder(torch.cat([tokens_embedded, h0], dim=-1), state)
        return self.out_proj(h), (h, c)

    def decode_teacher_forced(self, h0: Tensor, targets: Tensor) -> Tensor:
        """Mean NLL of target tokens (BOS-led, EOS-terminated, PAD-masked).

        Step inputs are the gold prefix tokens; H0 is concatenated to every
        step input.
        """
        if targets.dim() != 2 or targets.shape[1] < 2:
            raise ValueError("targets must be (B, >=2): BOS plus at least EOS")
        b, t_dec = targets.shape
        state = (torch.zeros(b, self.config.hidden, dtype=h0.dtype),
                 torch.zeros(b, self.config.hidden, dtype=h0.dtype))
        logits = []
        emb = self.encoder.embedding(targets[:, :-1])
        for step in range(t_dec - 1):
            step_logits, state = self._step(emb[:, step], h0, state)
            logits.append(step_logits)
        flat = torch.stack(logits, dim=1).reshape(b * (t_dec - 1), self.vocab_size)
        return nn.functional.cross_entropy(
            flat, targets[:, 1:].reshape(-1), ignore_index=PAD, reduction="mean"
        )

    def rollout_st(self, h0: Tensor, max_len: int, tau: float) -> "Rollout":
        """Greedy decode with a straight-through backward path.

        The emitted tokens are the exact per-step argmax for every tau; tau
        only scales the surrogate gradient.  Generation stops at EOS (the
        generated body excludes it); shorter samples are PAD-filled.
        """
        if max_len < 1:
            raise ValueError("max_len must be at least 1")
        b = h0.shape[0]
        state = (torch.zeros(b, self.config.hidden, dtype=h0.dtype),
                 torch.zeros(b, self.config.hidden, dtype=h0.dtype))
        token = torch.full((b,), BOS, dtype=torch.long)
        finished = torch.zeros(b, dtype=torch.bool)
        pad_row = torch.zeros(b, self.vocab_size, dtype=h0.dtype)
        pad_row[:, PAD] = 1.0

        rows, tokens = [], []
        for _ in range(max_len):
            emb = self.encoder.embedding(token)
            logits, state = self._step(emb, h0, state)
            p = torch.softmax(logits, dim=-1)
            y = st_select(p, tau)
            step_token = p.argmax(dim=-1)
            now_eos = (step_token == EOS) & ~finished
            keep = ~finished & ~now_eos
            # finished (and just-EOS'd) samples contribute constant PAD rows
            y = torch.where(keep.unsqueeze(-1), y, pad_row)
            step_token = torch.where(keep, step_token, torch.full_like(step_token, PAD))
            rows.append(y)
            tokens.append(step_token)
            finished = finished | now_eos
            token = step_token
            if bool(finished.all()):
                break

        onehot = torch.stack(rows, dim=1)  # (B, steps, V)
        token_mat = torch.stack(tokens, dim=1)
        out_tokens = []
        for row in token_mat.tolist():
            out_tokens.append([t for t in row if t != PAD])
        return Rollout(tokens=out_tokens, onehot=onehot)


@dataclass
class Rollout:
    tokens: list[list[int]]  # generated body per sample, EOS/PAD stripped
    onehot: Tensor  # (B, steps, V); differentiable rows until EOS, PAD after

    def padded_onehot(self, length: int) -> Tensor:
        """Fixed-length token-weight rows for feeding an extractor."""
        b, steps, v = self.onehot.shape
        if steps >= length:
            return self.onehot[:, :length, :]
        pad = torch.zeros(b, length - steps, v, dtype=self.onehot.dtype)
        pad[:, :, PAD] = 1.0
        return torch.cat([self.onehot, pad], dim=1)


def loss_cycle(f_in: Tensor, rollout: Rollout, extractors: list[ExtractorModel]) -> Tensor:
    """Squared Euclidean distance between the features the generator was
    conditioned on and the features re-extracted from its output (soft
    features, or pre-rounding probabilities for hard extractors)."""
    parts = [ex.cycle_features(rollout.padded_onehot(ex.encoder.max_len)) for ex in extractors]
    f_out = torch.cat(parts, dim=-1)
    if f_in.shape != f_out.shape:
        raise ValueError(f"feature shapes differ: {tuple(f_in.shape)} vs {tuple(f_out.shape)}")
    return ((f_in - f_out) ** 2).sum(dim=-1).mean()


def new_generator(vocab: Vocabulary, config: GeneratorConfig, seed: int = 0) -> GeneratorModel:
    seed_everything(seed)
    return GeneratorModel(len(vocab), vocab.max_len, config)


@dataclass
class Window:
    context: list[list[int]]  # K encoder-form utterances
    target_dec: list[int]  # decoder-form target (BOS ... EOS PAD*)
    target_enc: list[int]  # encoder-form target (for feature extraction)


def dialogue_windows(dialogues, k: int, vocab: Vocabulary) -> list[Window]:
    """All sliding (turns i..i+k-1 -> target i+k) windows, in corpus order."""
    windows = []
    for dialogue in dialogues:
        for start in range(len(dialogue) - k):
            ctx = [encode_utterance(t, vocab) for t in dialogue.turns[start : start + k]]
            target = dialogue.turns[start + k]
            windows.append(Window(
                context=ctx,
                target_dec=encode_target(target, vocab),
                target_enc=encode_utterance(target, vocab),
            ))
    return windows


def _window_tensors(windows: list[Window]):
    ctx = torch.tensor([w.context for w in windows], dtype=torch.long)
    tgt_dec = torch.tensor([w.target_dec for w in windows], dtype=torch.long)
    tgt_enc = torch.tensor([w.target_enc for w in windows], dtype=torch.long)
    return ctx, tgt_dec, tgt_enc


def target_features(extractors: list[ExtractorModel], target_enc: Tensor) -> Tensor | None:
    """Concatenated frozen-extractor features of the target utterances."""
    if not extractors:
        return None
    with torch.no_grad():
        return torch.cat([ex.extract(target_enc) for ex in extractors], dim=-1)


@dataclass
class GeneratorTrainConfig:
    eta: float = 0.1  # cycle-loss weight
    lr: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    rollout_len: int = 30
    st: StSchedule = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.st is None:
            self.st = StSchedule()


def train_generator(
    model: GeneratorModel,
    split: CorpusSplit,
    extractors: list[ExtractorModel],
    config: GeneratorTrainConfig,
    vocab: Vocabulary,
) -> list[dict]:
    """Teacher-forced MLE plus eta-weighted cycle loss over sliding windows.

    Extractors are frozen (eval mode, no grad); training-time features come
    from the gold target utterance.  Early stopping tracks the validation
    objective; the model ends at its best checkpoint.
    """
    kinds = VARIANT_KINDS[model.variant]
    if len(extractors) != len(kinds):
        raise ValueError(f"variant {model.variant} expects extractors for {kinds}")
    for ex, kind in zip(extractors, kinds):
        if ex.kind != kind or ex.mode != variant_mode(model.variant):
            raise ValueError(
                f"variant {model.variant} needs a {variant_mode(model.variant)} {kind} "
                f"extractor, got {ex.mode} {ex.kind}"
            )
        ex.eval()
        ex.requires_grad_(False)

    train_windows = dialogue_windows(split.train, model.config.k, vocab)
    valid_windows = dialogue_windows(split.valid, model.config.k, vocab)
    if not train_windows or not valid_windows:
        raise ValueError("not enough turns for any training/validation window")
    ctx_tr, dec_tr, enc_tr = _window_tensors(train_windows)
    ctx_va, dec_va, enc_va = _window_tensors(valid_windows)
    f_tr = target_features(extractors, enc_tr)
    f_va = target_features(extractors, enc_va)

    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    gen = torch.Generator().manual_seed(config.seed)
    history: list[dict] = []
    best_valid = math.inf
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    stale = 0

    for epoch in range(config.max_epochs):
        tau = config.st.tau(epoch, config.max_epochs)
        model.train()
        order = torch.randperm(len(train_windows), generator=gen)
        run_mle = run_cycle = 0.0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            h0 = model.init_hidden(
                model.encode_context(ctx_tr[idx]),
                f_tr[idx] if f_tr is not None else None,
            )
            l_mle = model.decode_teacher_forced(h0, dec_tr[idx])
            if extractors:
                if config.eta > 0.0:
                    rollout = model.rollout_st(h0, config.rollout_len, tau)
                    l_cycle = loss_cycle(f_tr[idx], rollout, extractors)
                    loss = l_mle + config.eta * l_cycle
                else:
                    with torch.no_grad():
                        rollout = model.rollout_st(h0, config.rollout_len, tau)
                        l_cycle = loss_cycle(f_tr[idx], rollout, extractors)
                    loss = l_mle
            else:
                l_cycle = torch.zeros(())
                loss = l_mle
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"generator ({model.variant}): non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            run_mle += float(l_mle.detach()) * len(idx)
            run_cycle += float(l_cycle.detach()) * len(idx)

        model.eval()
        with torch.no_grad():
            va_mle = va_cycle = 0.0
            for lo in range(0, len(valid_windows), 256):
                h0 = model.init_hidden(
                    model.encode_context(ctx_va[lo : lo + 256]),
                    f_va[lo : lo + 256] if f_va is not None else None,
                )
                n_b = len(ctx_va[lo : lo + 256])
                va_mle += float(model.decode_teacher_forced(h0, dec_va[lo : lo + 256])) * n_b
                if extractors:
                    rollout = model.rollout_st(h0, config.rollout_len, tau)
                    va_cycle += float(loss_cycle(f_va[lo : lo + 256], rollout, extractors)) * n_b
        va_mle /= len(valid_windows)
        va_cycle /= len(valid_windows)
        va_total = va_mle + config.eta * va_cycle
        history.append({
            "epoch": epoch,
            "tau": tau,
            "train_mle": run_mle / len(train_windows),
            "train_cycle": run_cycle / len(train_windows) if extractors else None,
            "valid_mle": va_mle,
            "valid_cycle": va_cycle if extractors else None,
            "valid_total": va_total,
        })
        if va_total < best_valid - 1e-12:
            best_valid = va_total
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break

    model.load_state_dict(best_state)
    model.eval()
    return history


@dataclass
class AggWeights:
    """Simplex-constrained feature aggregation weights over the K context
    positions.  Persona weights are pinned to zero at the positions spoken
    by the other speaker (k with k mod 2 == K mod 2, 1-based)."""

    kind: str
    k: int
    logits: list[float]
    mask: list[bool]  # True = position forced to zero weight

    @property
    def weights(self) -> list[float]:
        logit_t = torch.tensor(self.logits, dtype=torch.float64)
        mask_t = torch.tensor(self.mask)
        logit_t = logit_t.masked_fill(mask_t, float("-inf"))
        return torch.softmax(logit_t, dim=0).tolist()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "k": self.k, "logits": self.logits, "mask": self.mask}

    @staticmethod
    def from_dict(payload: dict) -> "AggWeights":
        return AggWeights(kind=payload["kind"], k=payload["k"],
                          logits=list(payload["logits"]), mask=list(payload["mask"]))


def persona_position_mask(k: int) -> list[bool]:
    """1-based positions j with j mod 2 == k mod 2 belong to the other
    speaker relative to the target turn k+1 and are masked out."""
    return [(j % 2) == (k % 2) for j in range(1, k + 1)]


def fit_agg_weights(
    context_feats: Tensor,
    target_feats: Tensor,
    kind: str,
    iters: int = 400,
    lr: float = 0.1,
) -> AggWeights:
    """Learn softmax weights minimizing the squared distance between the
    weighted feature sum over the K context turns and the target features."""
    if context_feats.dim() != 3:
        raise ValueError("expected (windows, K, L) context features")
    k = context_feats.shape[1]
    if k < 2:
        raise ValueError("need at least K=2 context positions")
    mask = persona_position_mask(k) if kind == "persona" else [False] * k
    mask_t = torch.tensor(mask)
    logits = torch.zeros(k, dtype=torch.float64, requires_grad=True)
    ctx = context_feats.to(torch.float64)
    tgt = target_feats.to(torch.float64)
    opt = torch.optim.Adam([logits], lr=lr)
    for _ in range(iters):
        w = torch.softmax(logits.masked_fill(mask_t, float("-inf")), dim=0)
        pred = (ctx * w.view(1, k, 1)).sum(dim=1)
        loss = ((pred - tgt) ** 2).sum(dim=-1).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    return AggWeights(kind=kind, k=k, logits=logits.detach().tolist(), mask=mask)


def window_context_features(extractor: ExtractorModel, windows: list[Window]) -> tuple[Tensor, Tensor]:
    """(windows, K, L) context features and (windows, L) target features."""
    ctx, _, enc = _window_tensors(windows)
    n, k, t = ctx.shape
    with torch.no_grad():
        flat = extractor.extract(ctx.reshape(n * k, t)).reshape(n, k, -1)
        tgt = extractor.extract(enc)
    return flat, tgt


def model_hash(model: nn.Module) -> str:
    buf = io.BytesIO()
    torch.save(model.state_dict(), buf)
    return sha256_bytes(buf.getvalue())


def save_generator(
    model: GeneratorModel,
    vocab: Vocabulary,
    agg: dict[str, AggWeights],
    extractors: dict[str, ExtractorModel],
    out_dir: str | Path,
    extra: dict | None = None,
) -> None:
    """Self-contained checkpoint: generator weights, aggregation weights and
    embedded copies of the frozen extractors (hashes recorded)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out / "generator.pt")
    from .extractor import vocab_hash  # local import to avoid cycle noise

    payload = {
        "variant": model.variant,
        "config": vars(model.config),
        "vocab_sha256": vocab_hash(vocab),
        "extractor_hashes": {kind: model_hash(ex) for kind, ex in extractors.items()},
        "agg": {kind: w.to_dict() for kind, w in agg.items()},
    }
    if extra:
        payload.update(extra)
    write_json(payload, out / "config.json")
    write_json(vocab.to_dict(), out / "vocab.json")
    for kind, ex in extractors.items():
        save_extractor(ex, vocab, out / "extractors" / kind)


def load_generator(in_dir: str | Path):
    """Returns (model, vocab, agg dict, extractors dict, payload)."""
    src = Path(in_dir)
    if not (src / "config.json").exists():
        raise FileNotFoundError(f"checkpoint not found: {src}")
    payload = read_json(src / "config.json")
    vocab = Vocabulary.from_dict(read_json(src / "vocab.json"))
    model = GeneratorModel(len(vocab), vocab.max_len, GeneratorConfig(**payload["config"]))
    model.load_state_dict(torch.load(src / "generator.pt", weights_only=True))
    model.eval()
    agg = {kind: AggWeights.from_dict(w) for kind, w in payload["agg"].items()}
    extractors = {}
    for kind, expected in payload["extractor_hashes"].items():
        ex, _, _ = load_extractor(src / "extractors" / kind)
        if model_hash(ex) != expected:
            raise ValueError(f"embedded {kind} extractor does not match its recorded hash")
        extractors[kind] = ex
    return model, vocab, agg, extractors, payload
