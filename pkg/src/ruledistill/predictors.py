"""Small numpy predictors trainable against mixed hard/soft targets.

Two model families, both with hand-written backward passes so gradient
correctness can be established by finite differences rather than trust:

* TextClassifier: embeddings, multi-width convolution with tanh feature
  maps, max-over-time pooling, softmax output.
* SequenceTagger: embeddings, a tanh window MLP around each position,
  per-position softmax outputs (positions conditionally independent).

The mixed loss is (1 - pi) * CE(hard, pred) + pi * CE(soft, pred); its
logit gradient is softmax - ((1 - pi) * hard + pi * soft).  Log arguments
are floored at 1e-12; the analytic gradient treats the floor as inactive,
which only matters in saturated regions.

Forward passes strip trailing padding ids, so a padded and an unpadded
copy of the same sentence produce identical outputs.  Out-of-range window
positions contribute zero vectors, not embedding rows.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "PAD_TOKEN",
    "UNK_TOKEN",
    "Vocabulary",
    "MixedTarget",
    "mixed_loss",
    "mixed_target_gradient",
    "TextClassifier",
    "SequenceTagger",
    "Adadelta",
    "NonFiniteGradientError",
    "backward_and_step",
    "finite_difference_check",
    "num_params",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_VERSION",
]

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
LOG_FLOOR = 1e-12
CHECKPOINT_VERSION = 1


# --- vocabulary --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Vocabulary:
    """Dense token-to-index map with padding at 0 and unknown at 1."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        tokens = tuple(self.tokens)
        if len(tokens) < 2 or tokens[0] != PAD_TOKEN or tokens[1] != UNK_TOKEN:
            raise ValueError("vocabulary must start with the pad and unk tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be distinct")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(
            self, "_index", {tok: i for i, tok in enumerate(tokens)}
        )

    @classmethod
    def build(
        cls,
        corpus: Iterable[Sequence[str]],
        min_count: int = 1,
        max_size: Optional[int] = None,
    ) -> "Vocabulary":
        counts = Counter(tok for sent in corpus for tok in sent)
        kept = sorted(
            (tok for tok, c in counts.items() if c >= min_count),
            key=lambda tok: (-counts[tok], tok),
        )
        if max_size is not None:
            kept = kept[: max(0, max_size - 2)]
        return cls((PAD_TOKEN, UNK_TOKEN) + tuple(kept))

    @property
    def pad_index(self) -> int:
        return 0

    @property
    def unk_index(self) -> int:
        return 1

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        idx = self._index
        return np.array([idx.get(t, 1) for t in tokens], dtype=int)

    def to_list(self) -> list[str]:
        return list(self.tokens)


# --- targets and loss --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MixedTarget:
    """Hard one-hot target plus an optional soft target with weight pi.

    Shapes are (K,) for classification or (T, K) for tagging; hard and
    soft must match.  pi > 0 requires a soft target.
    """

    hard: np.ndarray
    soft: Optional[np.ndarray] = None
    pi: float = 0.0

    def __post_init__(self):
        hard = np.asarray(self.hard, dtype=float)
        if hard.ndim not in (1, 2):
            raise ValueError("targets must be (K,) or (T, K)")
        _check_simplex(hard, "hard")
        object.__setattr__(self, "hard", hard)
        if not 0.0 <= self.pi <= 1.0:
            raise ValueError(f"pi must lie in [0, 1], got {self.pi}")
        if self.soft is None:
            if self.pi > 0.0:
                raise ValueError("pi > 0 requires a soft target")
        else:
            soft = np.asarray(self.soft, dtype=float)
            if soft.shape != hard.shape:
                raise ValueError("hard and soft target shapes must match")
            _check_simplex(soft, "soft")
            object.__setattr__(self, "soft", soft)

    def combined(self) -> np.ndarray:
        """(1 - pi) * hard + pi * soft; the loss is CE against this blend."""
        if self.soft is None:
            return self.hard
        return (1.0 - self.pi) * self.hard + self.pi * self.soft


def _check_simplex(arr: np.ndarray, name: str) -> None:
    if (arr < 0).any() or np.isnan(arr).any():
        raise ValueError(f"{name} target entries must be nonnegative")
    sums = arr.sum(axis=-1)
    if np.max(np.abs(sums - 1.0)) > 1e-6:
        raise ValueError(f"{name} target rows must sum to 1")


def _cross_entropy(target, pred, diagnostics=None):
    pred = np.asarray(pred, dtype=float)
    clipped = np.maximum(pred, LOG_FLOOR)
    if diagnostics is not None:
        n_clamped = int(np.sum((pred < LOG_FLOOR) & (target > 0)))
        if n_clamped:
            diagnostics["clamped"] = diagnostics.get("clamped", 0) + n_clamped
    return float(-np.sum(target * np.log(clipped)))


def mixed_loss(pred, target: MixedTarget, diagnostics: Optional[dict] = None) -> float:
    """(1 - pi) * CE(hard, pred) + pi * CE(soft, pred), summed over positions.

    If the floor fires on an entry where the target is positive, the count
    is recorded under ``diagnostics["clamped"]`` when a dict is supplied.
    """
    pred = np.asarray(pred, dtype=float)
    if pred.shape != target.hard.shape:
        raise ValueError("prediction and target shapes must match")
    loss = (1.0 - target.pi) * _cross_entropy(target.hard, pred, diagnostics)
    if target.soft is not None and target.pi > 0.0:
        loss += target.pi * _cross_entropy(target.soft, pred, diagnostics)
    return loss


def mixed_target_gradient(pred, target: MixedTarget) -> np.ndarray:
    """Gradient of the mixed loss with respect to the logits: pred - blend."""
    return np.asarray(pred, dtype=float) - target.combined()


# --- model base --------------------------------------------------------------


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _clean_ids(ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=int)
    if ids.ndim != 1:
        raise ValueError("token ids must be a 1-d array")
    end = len(ids)
    while end > 0 and ids[end - 1] == 0:
        end -= 1
    if end == 0:
        raise ValueError("empty input (no non-padding tokens)")
    return ids[:end]


class _Model:
    kind: str = ""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def forward(self, ids) -> np.ndarray:
        return self._forward_cache(ids)[0]

    def _forward_cache(self, ids):
        raise NotImplementedError

    def backward(self, cache, dlogits) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def config_dict(self) -> dict:
        raise NotImplementedError


class TextClassifier(_Model):
    """Convolutional sentence classifier with max-over-time pooling."""

    kind = "text_classifier"

    def __init__(
        self,
        vocab_size: int,
        n_classes: int,
        emb_dim: int = 32,
        window_sizes: tuple[int, ...] = (2, 3),
        n_filters: int = 16,
        seed: int = 0,
    ):
        super().__init__()
        if n_classes < 2:
            raise ValueError("need at least two classes")
        if not window_sizes or any(w < 1 for w in window_sizes):
            raise ValueError("window sizes must be positive")
        self.vocab_size = int(vocab_size)
        self.n_classes = int(n_classes)
        self.emb_dim = int(emb_dim)
        self.window_sizes = tuple(int(w) for w in window_sizes)
        self.n_filters = int(n_filters)
        rng = np.random.default_rng(seed)
        u = lambda shape: rng.uniform(-0.05, 0.05, size=shape)
        self.params["emb"] = u((self.vocab_size, self.emb_dim))
        for w in self.window_sizes:
            self.params[f"conv{w}_w"] = u((w * self.emb_dim, self.n_filters))
            self.params[f"conv{w}_b"] = np.zeros(self.n_filters)
        feat_dim = len(self.window_sizes) * self.n_filters
        self.params["out_w"] = u((feat_dim, self.n_classes))
        self.params["out_b"] = np.zeros(self.n_classes)

    def config_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "n_classes": self.n_classes,
            "emb_dim": self.emb_dim,
            "window_sizes": list(self.window_sizes),
            "n_filters": self.n_filters,
        }

    def _forward_cache(self, ids):
        ids = _clean_ids(ids)
        t0 = len(ids)
        t_pad = max(t0, max(self.window_sizes))
        x = np.zeros((t_pad, self.emb_dim))
        x[:t0] = self.params["emb"][ids]
        segments = []
        pooled = []
        for w in self.window_sizes:
            n_win = t_pad - w + 1
            m = np.stack([x[i : i + w].ravel() for i in range(n_win)])
            a = np.tanh(m @ self.params[f"conv{w}_w"] + self.params[f"conv{w}_b"])
            arg = np.argmax(a, axis=0)
            segments.append((w, m, a, arg))
            pooled.append(a[arg, np.arange(self.n_filters)])
        feat = np.concatenate(pooled)
        logits = feat @ self.params["out_w"] + self.params["out_b"]
        probs = _softmax_rows(logits)
        cache = (ids, t0, t_pad, segments, feat)
        return probs, cache

    def backward(self, cache, dlogits) -> dict[str, np.ndarray]:
        ids, t0, t_pad, segments, feat = cache
        g = self.zero_grads()
        dlogits = np.asarray(dlogits, dtype=float)
        g["out_w"] += np.outer(feat, dlogits)
        g["out_b"] += dlogits
        dfeat = self.params["out_w"] @ dlogits
        dx = np.zeros((t_pad, self.emb_dim))
        for s, (w, m, a, arg) in enumerate(segments):
            dpool = dfeat[s * self.n_filters : (s + 1) * self.n_filters]
            da = np.zeros_like(a)
            da[arg, np.arange(self.n_filters)] = dpool
            dz = da * (1.0 - a * a)
            g[f"conv{w}_w"] += m.T @ dz
            g[f"conv{w}_b"] += dz.sum(axis=0)
            dm = dz @ self.params[f"conv{w}_w"].T
            for i in range(m.shape[0]):
                dx[i : i + w] += dm[i].reshape(w, self.emb_dim)
        np.add.at(g["emb"], ids, dx[:t0])
        return g


class SequenceTagger(_Model):
    """Window MLP tagger: independent per-position softmax outputs."""

    kind = "sequence_tagger"

    def __init__(
        self,
        vocab_size: int,
        n_tags: int,
        emb_dim: int = 32,
        hidden: int = 32,
        radius: int = 2,
        seed: int = 0,
    ):
        super().__init__()
        if n_tags < 2:
            raise ValueError("need at least two tags")
        if radius < 0:
            raise ValueError("radius must be nonnegative")
        self.vocab_size = int(vocab_size)
        self.n_tags = int(n_tags)
        self.emb_dim = int(emb_dim)
        self.hidden = int(hidden)
        self.radius = int(radius)
        rng = np.random.default_rng(seed)
        u = lambda shape: rng.uniform(-0.05, 0.05, size=shape)
        win = 2 * self.radius + 1
        self.params["emb"] = u((self.vocab_size, self.emb_dim))
        self.params["hidden_w"] = u((win * self.emb_dim, self.hidden))
        self.params["hidden_b"] = np.zeros(self.hidden)
        self.params["out_w"] = u((self.hidden, self.n_tags))
        self.params["out_b"] = np.zeros(self.n_tags)

    def config_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "n_tags": self.n_tags,
            "emb_dim": self.emb_dim,
            "hidden": self.hidden,
            "radius": self.radius,
        }

    def _forward_cache(self, ids):
        ids = _clean_ids(ids)
        t = len(ids)
        r = self.radius
        xpad = np.zeros((t + 2 * r, self.emb_dim))
        xpad[r : r + t] = self.params["emb"][ids]
        win = 2 * r + 1
        m = np.stack([xpad[i : i + win].ravel() for i in range(t)])
        h = np.tanh(m @ self.params["hidden_w"] + self.params["hidden_b"])
        logits = h @ self.params["out_w"] + self.params["out_b"]
        probs = _softmax_rows(logits)
        cache = (ids, t, m, h)
        return probs, cache

    def backward(self, cache, dlogits) -> dict[str, np.ndarray]:
        ids, t, m, h = cache
        g = self.zero_grads()
        dlogits = np.asarray(dlogits, dtype=float)
        g["out_w"] += h.T @ dlogits
        g["out_b"] += dlogits.sum(axis=0)
        dh = dlogits @ self.params["out_w"].T
        dz = dh * (1.0 - h * h)
        g["hidden_w"] += m.T @ dz
        g["hidden_b"] += dz.sum(axis=0)
        dm = dz @ self.params["hidden_w"].T
        r = self.radius
        win = 2 * r + 1
        dxpad = np.zeros((t + 2 * r, self.emb_dim))
        for i in range(t):
            dxpad[i : i + win] += dm[i].reshape(win, self.emb_dim)
        np.add.at(g["emb"], ids, dxpad[r : r + t])
        return g


# --- optimization ------------------------------------------------------------


class NonFiniteGradientError(RuntimeError):
    """A gradient block became NaN or infinite."""

    def __init__(self, block: str):
        super().__init__(f"non-finite gradient in parameter block {block!r}")
        self.block = block


class Adadelta:
    """Adaptive per-parameter steps; no global learning rate."""

    def __init__(self, rho: float = 0.95, eps: float = 1e-6):
        if not 0.0 <= rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        self.rho = rho
        self.eps = eps
        self._state: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        for name, g in grads.items():
            if name not in self._state:
                self._state[name] = (np.zeros_like(g), np.zeros_like(g))
            eg2, edx2 = self._state[name]
            eg2 *= self.rho
            eg2 += (1.0 - self.rho) * g * g
            dx = -np.sqrt(edx2 + self.eps) / np.sqrt(eg2 + self.eps) * g
            edx2 *= self.rho
            edx2 += (1.0 - self.rho) * dx * dx
            params[name] += dx


def _batch_gradients(model, batch):
    """Mean mixed loss and mean gradients over a batch, fixed order."""
    grads = model.zero_grads()
    total = 0.0
    scale = 1.0 / len(batch)
    for ids, target in batch:
        probs, cache = model._forward_cache(ids)
        total += mixed_loss(probs, target)
        g = model.backward(cache, mixed_target_gradient(probs, target) * scale)
        for name, arr in g.items():
            grads[name] += arr
    return total * scale, grads


def backward_and_step(
    model, batch, optimizer: Adadelta, loss_scale: float = 1.0
) -> float:
    """One optimizer step on the batch-mean mixed loss; returns that loss.

    ``loss_scale`` multiplies the whole batch objective, for terms that
    enter the total loss with their own weight (imitation-only batches).
    """
    if not batch:
        raise ValueError("empty batch")
    if not 0.0 <= loss_scale or not np.isfinite(loss_scale):
        raise ValueError("loss_scale must be finite and nonnegative")
    loss, grads = _batch_gradients(model, batch)
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(name)
    if loss_scale != 1.0:
        loss = loss * loss_scale
        grads = {name: g * loss_scale for name, g in grads.items()}
    optimizer.step(model.params, grads)
    return loss


def finite_difference_check(model, batch, epsilon: float = 1e-4) -> dict[str, float]:
    """Per-block relative error between analytic and central-difference
    gradients of the batch-mean mixed loss.  Exhaustive over coordinates,
    so use a tiny model."""

    def batch_loss():
        return sum(mixed_loss(model.forward(ids), tgt) for ids, tgt in batch) / len(
            batch
        )

    _, analytic = _batch_gradients(model, batch)
    report = {}
    for name, arr in model.params.items():
        fd = np.zeros_like(arr)
        flat = arr.ravel()
        fd_flat = fd.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = batch_loss()
            flat[i] = orig - epsilon
            down = batch_loss()
            flat[i] = orig
            fd_flat[i] = (up - down) / (2.0 * epsilon)
        ga = analytic[name]
        denom = np.linalg.norm(ga) + np.linalg.norm(fd) + 1e-12
        report[name] = float(np.linalg.norm(ga - fd) / denom)
    return report


def num_params(model) -> int:
    return int(sum(v.size for v in model.params.values()))


# --- checkpoints -------------------------------------------------------------

_MODEL_KINDS = {"text_classifier": TextClassifier, "sequence_tagger": SequenceTagger}


def save_checkpoint(path, model, vocab: Vocabulary, extra: Optional[dict] = None) -> None:
    """Versioned npz container: metadata JSON plus one array per block.
    `extra` is an optional JSON-serializable dict for caller metadata such
    as the task name or tag categories."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "config": model.config_dict(),
        "vocab": vocab.to_list(),
        "extra": dict(extra) if extra else {},
    }
    arrays = {f"param_{k}": v for k, v in model.params.items()}
    # Write through a handle: np.savez would append ".npz" to a bare path.
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (model, vocabulary, extra)."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {meta.get('format_version')!r}"
            )
        kind = meta["kind"]
        if kind not in _MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        model = _MODEL_KINDS[kind](**meta["config"])
        for name in model.params:
            model.params[name] = np.array(data[f"param_{name}"])
    vocab = Vocabulary(tuple(meta["vocab"]))
    return model, vocab, meta.get("extra", {})
