"""Self-supervised topic/persona feature extractors.

A CNN sentence encoder feeds a sigmoid feature head that is either
soft-binary (values in (0,1)) or hard-binary (rounded to {0,1} with a
straight-through gradient).  A matcher turns a feature pair into the
probability that the pair is positive; training minimizes cross-entropy
plus a decorrelation penalty on the batch feature correlation matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import Tensor, nn

from .corpus import PAD, Vocabulary
from .pairing import PairExample
from .utils import canonical_json, seed_everything, sha256_text, write_json, read_json

KINDS = ("topic", "persona")
MODES = ("soft", "hard")

PROB_EPS = 1e-7  # probability clip for log stability
ZERO_STD = 1e-8  # below this a feature column counts as constant


class TrainingDiverged(RuntimeError):
    """Raised when a training loss stops being finite."""


class RoundSTE(torch.autograd.Function):
    """Round to {0,1} (ties at 0.5 go up); backward passes the gradient
    through unchanged, treating d(round)/dp as 1."""

    @staticmethod
    def forward(ctx, p: Tensor) -> Tensor:
        return torch.floor(p + 0.5)

    @staticmethod
    def backward(ctx, grad_output: Tensor) -> Tensor:
        return grad_output


def round_ste(p: Tensor) -> Tensor:
    return RoundSTE.apply(p)


class CnnEncoder(nn.Module):
    """Embedding + 2 strided conv layers + fully-connected map to a fixed
    sentence vector.  PAD embeds to zero so all-PAD input stays finite."""

    def __init__(
        self,
        vocab_size: int,
        max_len: int = 30,
        embed_dim: int = 300,
        n_filters: int = 300,
        filter_width: int = 5,
        stride: int = 2,
        out_dim: int = 500,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.out_dim = out_dim
        l1 = (max_len - filter_width) // stride + 1
        l2 = (l1 - filter_width) // stride + 1
        if l2 < 1:
            raise ValueError(
                f"max_len={max_len} too short for width-{filter_width}/stride-{stride} convolutions"
            )
        self.embedding = nn.Embedding(vocab_size, embed_dim, padding_idx=PAD)
        self.conv1 = nn.Conv1d(embed_dim, n_filters, filter_width, stride=stride)
        self.conv2 = nn.Conv1d(n_filters, n_filters, filter_width, stride=stride)
        self.fc = nn.Linear(l2 * n_filters, out_dim)
        self.dropout = nn.Dropout(dropout)
        # variance-preserving init: the default conservative scaling shrinks
        # activation spread ~40x through relu-conv-relu-fc, leaving sentence
        # encodings nearly constant and the matching task untrainable
        for layer in (self.conv1, self.conv2, self.fc):
            nn.init.kaiming_normal_(layer.weight, nonlinearity="relu")
            nn.init.zeros_(layer.bias)

    def _convolve(self, embedded: Tensor) -> Tensor:
        x = embedded.transpose(1, 2)  # (B, E, T)
        x = self.dropout(torch.relu(self.conv1(x)))
        x = self.dropout(torch.relu(self.conv2(x)))
        return self.fc(x.flatten(1))

    def forward(self, ids: Tensor) -> Tensor:
        """(B, max_len) int ids -> (B, out_dim)."""
        if ids.dim() != 2 or ids.shape[1] != self.max_len:
            raise ValueError(f"expected (B, {self.max_len}) ids, got {tuple(ids.shape)}")
        if int(ids.max()) >= self.vocab_size or int(ids.min()) < 0:
            raise ValueError("token id out of vocabulary range")
        return self._convolve(self.embedding(ids))

    def forward_soft(self, onehot: Tensor) -> Tensor:
        """Differentiable variant for generated tokens: (B, max_len,
        vocab) rows (one-hot or relaxed) are embedded by matmul."""
        if onehot.dim() != 3 or onehot.shape[1] != self.max_len or onehot.shape[2] != self.vocab_size:
            raise ValueError(
                f"expected (B, {self.max_len}, {self.vocab_size}) token weights, got {tuple(onehot.shape)}"
            )
        return self._convolve(onehot @ self.embedding.weight)


class FeatureHead(nn.Module):
    """Affine map to L feature logits; sigmoid for soft-binary features,
    sigmoid + straight-through rounding for hard-binary ones."""

    def __init__(self, in_dim: int, n_features: int, mode: str):
        super().__init__()
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.mode = mode
        self.linear = nn.Linear(in_dim, n_features)

    def probs(self, encoded: Tensor) -> Tensor:
        return torch.sigmoid(self.linear(encoded))

    def forward(self, encoded: Tensor) -> Tensor:
        p = self.probs(encoded)
        return round_ste(p) if self.mode == "hard" else p


class HardMatcher(nn.Module):
    """MLP over concatenated feature pairs -> match probability.  Not
    symmetric in its arguments; training shows it both orders."""

    def __init__(self, n_features: int, hidden: int = 256):
        super().__init__()
        self.n_features = n_features
        self.net = nn.Sequential(
            nn.Linear(2 * n_features, hidden), nn.ReLU(), nn.Linear(hidden, 1)
        )

    def forward(self, f_s: Tensor, f_t: Tensor) -> Tensor:
        if f_s.shape != f_t.shape or f_s.shape[-1] != self.n_features:
            raise ValueError(
                f"feature shapes {tuple(f_s.shape)} / {tuple(f_t.shape)} do not fit "
                f"a {self.n_features}-feature matcher"
            )
        return torch.sigmoid(self.net(torch.cat([f_s, f_t], dim=-1))).squeeze(-1)


def match_soft(f_s: Tensor, f_t: Tensor, tau: float = 1.0) -> Tensor:
    """sigmoid(<f_s, f_t> / tau), symmetric in its arguments."""
    if tau <= 0:
        raise ValueError("match temperature must be positive")
    if f_s.shape != f_t.shape:
        raise ValueError(f"feature shapes differ: {tuple(f_s.shape)} vs {tuple(f_t.shape)}")
    return torch.sigmoid((f_s * f_t).sum(dim=-1) / tau)


def loss_xent(predictions: Tensor, labels: Tensor) -> Tensor:
    """Mean negative log-likelihood of binary labels under clipped
    probabilities."""
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels must align")
    p = predictions.clamp(PROB_EPS, 1.0 - PROB_EPS)
    y = labels.to(p.dtype)
    return -(y * p.log() + (1.0 - y) * (1.0 - p).log()).mean()


def loss_decorr(features: Tensor) -> Tensor:
    """Half the squared Frobenius mass of the off-diagonal batch feature
    correlations.  Columns with standard deviation below 1e-8 count as
    uncorrelated with everything."""
    if features.dim() != 2:
        raise ValueError("expected a (batch, features) matrix")
    n = features.shape[0]
    if n < 2:
        raise ValueError("decorrelation needs a batch of at least 2")
    centered = features - features.mean(dim=0, keepdim=True)
    sumsq = (centered * centered).sum(dim=0)
    live = ((sumsq / n).sqrt() >= ZERO_STD).detach()
    centered = centered * live
    denom = torch.where(live, sumsq.clamp_min(ZERO_STD**2).sqrt(), torch.ones_like(sumsq))
    unit = centered / denom
    corr = unit.T @ unit
    off_mass = (corr * corr).sum() - (corr.diagonal() ** 2).sum()
    return 0.5 * off_mass


def mean_abs_offdiag_correlation(features: Tensor) -> float:
    """Diagnostic companion to the decorrelation loss: mean |correlation|
    over off-diagonal pairs (zero-variance columns contribute zeros)."""
    n, l = features.shape
    if l < 2:
        return 0.0
    with torch.no_grad():
        centered = features - features.mean(dim=0, keepdim=True)
        sumsq = (centered * centered).sum(dim=0)
        live = (sumsq / n).sqrt() >= ZERO_STD
        centered = centered * live
        denom = torch.where(live, sumsq.clamp_min(ZERO_STD**2).sqrt(), torch.ones_like(sumsq))
        unit = centered / denom
        corr = unit.T @ unit
        off = corr.abs().sum() - corr.diagonal().abs().sum()
        return float(off / (l * (l - 1)))


@dataclass
class ExtractorConfig:
    kind: str = "topic"
    mode: str = "soft"
    n_features: int = 100
    embed_dim: int = 300
    n_filters: int = 300
    filter_width: int = 5
    stride: int = 2
    enc_dim: int = 500
    dropout: float = 0.0
    match_tau: float = 1.0
    matcher_hidden: int = 256
    # starting offset for feature pre-activations; negative values start the
    # features sparse, which avoids the all-features-co-fire saddle on small
    # corpora
    head_bias_init: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


class ExtractorModel(nn.Module):
    """One feature kind's encoder + head + matcher."""

    def __init__(self, vocab_size: int, max_len: int, config: ExtractorConfig):
        super().__init__()
        self.kind = config.kind
        self.mode = config.mode
        self.config = config
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
        self.head = FeatureHead(config.enc_dim, config.n_features, config.mode)
        if config.head_bias_init != 0.0:
            nn.init.constant_(self.head.linear.bias, config.head_bias_init)
        self.matcher = HardMatcher(config.n_features, config.matcher_hidden) if config.mode == "hard" else None

    @property
    def n_features(self) -> int:
        return self.config.n_features

    def extract(self, ids: Tensor) -> Tensor:
        """Feature vectors for an id batch: (0,1)^L soft or {0,1}^L hard."""
        return self.head(self.encoder(ids))

    def probs(self, ids: Tensor) -> Tensor:
        """Pre-rounding head probabilities (equals extract() in soft mode)."""
        return self.head.probs(self.encoder(ids))

    def cycle_features(self, onehot: Tensor) -> Tensor:
        """Feature target used by the generator's cycle loss, computed from
        relaxed one-hot token rows: soft features in soft mode, pre-rounding
        probabilities in hard mode."""
        return self.head.probs(self.encoder.forward_soft(onehot))

    def match(self, f_s: Tensor, f_t: Tensor) -> Tensor:
        if self.mode == "soft":
            return match_soft(f_s, f_t, self.config.match_tau)
        return self.matcher(f_s, f_t)

    def predict_pairs(self, s_ids: Tensor, t_ids: Tensor) -> Tensor:
        return self.match(self.extract(s_ids), self.extract(t_ids))


def new_extractor(
    vocab: Vocabulary, config: ExtractorConfig, seed: int = 0
) -> ExtractorModel:
    """Seeded construction so identical seeds give identical parameters."""
    seed_everything(seed)
    return ExtractorModel(len(vocab), vocab.max_len, config)


@dataclass
class ExtractorTrainConfig:
    lam: float = 0.01  # weight of the decorrelation term
    lr: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0


def _pairs_to_tensors(pairs: list[PairExample]):
    s = torch.tensor([p.s for p in pairs], dtype=torch.long)
    t = torch.tensor([p.t for p in pairs], dtype=torch.long)
    y = torch.tensor([p.y for p in pairs], dtype=torch.float32)
    return s, t, y


def _epoch_loss(model: ExtractorModel, s, t, y, lam: float, batch_size: int = 512):
    """Full-pass loss/accuracy without gradient tracking."""
    total_x, total_d, correct, n = 0.0, 0.0, 0, len(y)
    with torch.no_grad():
        for lo in range(0, n, batch_size):
            sb, tb, yb = s[lo : lo + batch_size], t[lo : lo + batch_size], y[lo : lo + batch_size]
            f_s, f_t = model.extract(sb), model.extract(tb)
            preds = model.match(f_s, f_t)
            total_x += float(loss_xent(preds, yb)) * len(yb)
            if lam != 0.0 and len(yb) >= 2:
                total_d += float(loss_decorr(f_s)) * len(yb)
            correct += int(((preds > 0.5).float() == yb).sum())
    return total_x / n, total_d / n, correct / n


def train_extractor(
    model: ExtractorModel,
    train_pairs: list[PairExample],
    valid_pairs: list[PairExample],
    config: ExtractorTrainConfig,
) -> list[dict]:
    """Adam on L_xent + lam * L_decorr with early stopping on the validation
    objective.  Returns the per-epoch history; the model ends at the best
    validation checkpoint."""
    if not train_pairs or not valid_pairs:
        raise ValueError("need non-empty train and valid pair sets")
    s_tr, t_tr, y_tr = _pairs_to_tensors(train_pairs)
    s_va, t_va, y_va = _pairs_to_tensors(valid_pairs)

    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    gen = torch.Generator().manual_seed(config.seed)
    history: list[dict] = []
    best_valid = math.inf
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    stale = 0

    for epoch in range(config.max_epochs):
        model.train()
        order = torch.randperm(len(y_tr), generator=gen)
        run_x = run_d = 0.0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            f_s = model.extract(s_tr[idx])
            f_t = model.extract(t_tr[idx])
            preds = model.match(f_s, f_t)
            l_x = loss_xent(preds, y_tr[idx])
            if config.lam != 0.0 and len(idx) >= 2:
                l_d = loss_decorr(f_s)
            else:
                l_d = torch.zeros((), dtype=f_s.dtype)
            loss = l_x + config.lam * l_d
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"{model.kind}/{model.mode} extractor: non-finite loss at epoch {epoch}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            run_x += float(l_x.detach()) * len(idx)
            run_d += float(l_d.detach()) * len(idx)

        model.eval()
        va_x, va_d, va_acc = _epoch_loss(model, s_va, t_va, y_va, config.lam)
        va_total = va_x + config.lam * va_d
        history.append({
            "epoch": epoch,
            "train_xent": run_x / len(y_tr),
            "train_decorr": run_d / len(y_tr),
            "train_total": (run_x + config.lam * run_d) / len(y_tr),
            "valid_xent": va_x,
            "valid_decorr": va_d,
            "valid_total": va_total,
            "valid_accuracy": va_acc,
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


def eval_matching_accuracy(model: ExtractorModel, pairs: list[PairExample]) -> float:
    """Fraction of pairs whose thresholded prediction (p > 0.5, ties count
    as negative) equals the label."""
    if not pairs:
        raise ValueError("cannot evaluate on an empty pair set")
    s, t, y = _pairs_to_tensors(pairs)
    model.eval()
    correct, n = 0, len(y)
    with torch.no_grad():
        for lo in range(0, n, 512):
            preds = model.predict_pairs(s[lo : lo + 512], t[lo : lo + 512])
            correct += int(((preds > 0.5).float() == y[lo : lo + 512]).sum())
    return correct / n


def extract_features(model: ExtractorModel, encoded: list[list[int]] | Tensor, batch_size: int = 512) -> Tensor:
    """Convenience batch extraction for analysis/inference code paths."""
    ids = encoded if isinstance(encoded, Tensor) else torch.tensor(encoded, dtype=torch.long)
    model.eval()
    out = []
    with torch.no_grad():
        for lo in range(0, len(ids), batch_size):
            out.append(model.extract(ids[lo : lo + batch_size]))
    return torch.cat(out) if out else torch.zeros((0, model.n_features))


def vocab_hash(vocab: Vocabulary) -> str:
    return sha256_text(canonical_json(vocab.to_dict()))


def save_extractor(model: ExtractorModel, vocab: Vocabulary, out_dir: str | Path,
                   extra: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out / "extractor.pt")
    payload = {
        "kind": model.kind,
        "mode": model.mode,
        "max_len": vocab.max_len,
        "vocab_size": len(vocab),
        "vocab_sha256": vocab_hash(vocab),
        "config": vars(model.config),
    }
    if extra:
        payload.update(extra)
    write_json(payload, out / "config.json")
    write_json(vocab.to_dict(), out / "vocab.json")


def load_extractor(in_dir: str | Path) -> tuple[ExtractorModel, Vocabulary, dict]:
    src = Path(in_dir)
    if not (src / "config.json").exists():
        raise FileNotFoundError(f"checkpoint not found: {src}")
    payload = read_json(src / "config.json")
    vocab = Vocabulary.from_dict(read_json(src / "vocab.json"))
    if vocab_hash(vocab) != payload["vocab_sha256"]:
        raise ValueError(f"vocabulary hash mismatch in {src}")
    model = ExtractorModel(len(vocab), vocab.max_len, ExtractorConfig(**payload["config"]))
    model.load_state_dict(torch.load(src / "extractor.pt", weights_only=True))
    model.eval()
    return model, vocab, payload
