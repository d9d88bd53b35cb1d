"""Linear heads on frozen descriptors.

* ``SoftmaxHead``: one K-way softmax classifier per tap.
* ``PhraseModel``: one-vs-rest logistic scorers over the concatenated descriptor.

Both train with shuffled minibatch SGD; the l2 penalty (lam/2)||W||^2 is applied
as a proximal step, ``W <- (W - lr * grad) / (1 + lr * lam)``, which stays
stable for any decay strength. By default the step decays linearly over the
epochs, which removes most of the minibatch noise from the final weights.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, FormatError, NumericError

MAGIC = b"TXHD"
VERSION = 1
DIVERGENCE_LOSS = 1e6
SCHEDULES = ("linear", "constant")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2.0
    epochs: int = 200
    batch_size: int = 32
    weight_decay: float = 1e-4
    seed: int = 0
    schedule: str = "linear"

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown learning-rate schedule {self.schedule!r}; choose from {SCHEDULES}")
        if not (self.lr > 0 and self.epochs > 0 and self.batch_size > 0 and self.weight_decay > 0):
            raise ConfigError(f"training hyper-parameters must be positive: {self}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass
class SoftmaxHead:
    weights: list  # per tap, (K, dim)
    biases: list  # per tap, (K,)
    class_names: tuple

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        k = len(self.class_names)
        if k < 2:
            raise ConfigError("a softmax head needs at least two classes")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigError("need one weight matrix and one bias per tap")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or w.shape[0] != k or b.shape != (k,):
                raise ConfigError(f"head shapes {w.shape}/{b.shape} do not match K={k}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ConfigError("head weights must be finite")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def dims(self) -> tuple:
        return tuple(w.shape[1] for w in self.weights)

    @classmethod
    def zeros(cls, dims: Sequence[int], class_names) -> "SoftmaxHead":
        k = len(class_names)
        return cls([np.zeros((k, d)) for d in dims], [np.zeros(k) for _ in dims], class_names)


@dataclass
class PhraseModel:
    lexicon: tuple
    weights: np.ndarray  # (P, sum(dims))
    bias: np.ndarray  # (P,)
    dims: tuple = field(default=())

    def __post_init__(self):
        self.lexicon = tuple(self.lexicon)
        if len(set(self.lexicon)) != len(self.lexicon):
            raise ConfigError("phrase lexicon has duplicate entries")
        if any(not p.strip() for p in self.lexicon):
            raise ConfigError("phrase lexicon has an empty entry")
        self.dims = tuple(self.dims) or (self.weights.shape[1],)
        if self.weights.shape != (len(self.lexicon), sum(self.dims)) or self.bias.shape != (
            len(self.lexicon),
        ):
            raise ConfigError("phrase model shapes do not match its lexicon and dims")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ConfigError("phrase weights must be finite")


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z) -> np.ndarray:
    return np.exp(_log_softmax(np.asarray(z, dtype=np.float64)))


def sigmoid(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def _tap_vectors(desc) -> list:
    return list(getattr(desc, "vectors", desc))


def head_logits(desc, head: SoftmaxHead) -> list:
    vecs = _tap_vectors(desc)
    if len(vecs) != len(head.weights):
        raise ConfigError(f"descriptor has {len(vecs)} taps, head has {len(head.weights)}")
    out = []
    for v, w, b in zip(vecs, head.weights, head.biases):
        if v.shape[-1] != w.shape[1]:
            raise ConfigError(f"descriptor length {v.shape[-1]} != head input {w.shape[1]}")
        out.append(v @ w.T + b)
    return out


def predict_proba(desc, head: SoftmaxHead) -> list:
    """Per-tap class probabilities softmax(W_i d_i + b_i)."""
    return [softmax(z) for z in head_logits(desc, head)]


def ensemble_proba(desc, head: SoftmaxHead) -> np.ndarray:
    """Mean of the per-tap probability vectors."""
    return np.mean(predict_proba(desc, head), axis=0)


def cross_entropy(logits, target: int) -> tuple[float, np.ndarray]:
    """Softmax loss ``-log p[target]`` and its gradient ``p - onehot`` w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= target < logits.shape[-1]:
        raise ConfigError(f"target {target} out of range for {logits.shape[-1]} classes")
    logp = _log_softmax(logits)
    grad = np.exp(logp)
    grad[target] -= 1.0
    return float(-logp[target]), grad


def epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    """Step size for ``epoch``; the linear schedule decays to ``lr / epochs`` in the last epoch."""
    if cfg.schedule == "constant":
        return cfg.lr
    return cfg.lr * (1.0 - epoch / cfg.epochs)


def _batches(rng, n: int, batch_size: int):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def _check_loss(loss: float, epoch: int, what: str) -> None:
    if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
        raise NumericError(f"{what} diverged at epoch {epoch} (loss={loss})")


def softmax_objective(x, y, w, b, lam) -> float:
    logp = _log_softmax(x @ w.T + b)
    return float(-logp[np.arange(len(y)), y].mean() + 0.5 * lam * np.sum(w * w))


def _fit_softmax(x: np.ndarray, y: np.ndarray, k: int, cfg: TrainConfig):
    n, d = x.shape
    w, b = np.zeros((k, d)), np.zeros(k)
    onehot = np.eye(k)[y]
    rng = np.random.default_rng(cfg.seed)
    trace = []
    for epoch in range(cfg.epochs):
        lr = epoch_lr(cfg, epoch)
        shrink = 1.0 / (1.0 + lr * cfg.weight_decay)
        for idx in _batches(rng, n, cfg.batch_size):
            xb = x[idx]
            g = (softmax(xb @ w.T + b) - onehot[idx]) / len(idx)
            w = (w - lr * (g.T @ xb)) * shrink
            b = b - lr * g.sum(axis=0)
        loss = softmax_objective(x, y, w, b, cfg.weight_decay)
        _check_loss(loss, epoch, "softmax training")
        trace.append(loss)
    return w, b, trace


def lipschitz_bound(x, lam: float) -> float:
    """Trace upper bound on the smoothness constant of the mean softmax/logistic loss.

    The loss Hessian w.r.t. logits is bounded by I/2; with the bias folded in as
    a constant feature, lambda_max(X~^T X~ / n) <= mean ||x~||^2.
    """
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * float(np.mean(np.sum(x * x, axis=1) + 1.0)) + lam


def _stack_taps(descriptors) -> list:
    per_image = [_tap_vectors(d) for d in descriptors]
    if not per_image:
        raise DataError("no training descriptors")
    m = len(per_image[0])
    if any(len(v) != m for v in per_image):
        raise DataError("descriptors disagree on the number of taps")
    return [np.stack([v[i] for v in per_image]) for i in range(m)]


def train_softmax(descriptors, labels, cfg: TrainConfig, class_names=None):
    """Fit one softmax head per tap. Returns ``(head, trace)``.

    ``trace[i][e]`` is tap ``i``'s full-data objective after epoch ``e``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    taps = _stack_taps(descriptors)
    if len(labels) != taps[0].shape[0]:
        raise DataError(f"{len(labels)} labels for {taps[0].shape[0]} descriptors")
    k = int(labels.max()) + 1 if class_names is None else len(class_names)
    if class_names is None:
        class_names = tuple(str(i) for i in range(k))
    if k < 2:
        raise DataError("training needs at least two classes")
    if labels.min() < 0 or labels.max() >= k:
        raise DataError("label index out of range")
    counts = np.bincount(labels, minlength=k)
    if np.any(counts == 0):
        empty = [class_names[i] for i in np.flatnonzero(counts == 0)]
        raise DataError(f"classes without training examples: {', '.join(empty)}")
    weights, biases, trace = [], [], []
    for x in taps:
        w, b, t = _fit_softmax(x, labels, k, cfg)
        weights.append(w)
        biases.append(b)
        trace.append(t)
    return SoftmaxHead(weights, biases, class_names), trace


def build_lexicon(phrase_sets) -> tuple:
    return tuple(sorted({p for s in phrase_sets for p in s}))


def train_phrases(descriptors, phrase_sets, cfg: TrainConfig, lexicon=None) -> PhraseModel:
    """Independent one-vs-rest logistic regressions, one per phrase."""
    taps = _stack_taps(descriptors)
    x = np.concatenate(taps, axis=1)
    phrase_sets = [set(s) for s in phrase_sets]
    if len(phrase_sets) != x.shape[0]:
        raise DataError(f"{len(phrase_sets)} phrase sets for {x.shape[0]} descriptors")
    lexicon = build_lexicon(phrase_sets) if lexicon is None else tuple(lexicon)
    if not lexicon:
        raise DataError("no phrases to train")
    y = np.array([[p in s for p in lexicon] for s in phrase_sets], dtype=np.float64)
    for j, p in enumerate(lexicon):
        if y[:, j].sum() == 0:
            raise DataError(f"phrase {p!r} has no positive examples")
    n, d = x.shape
    w, b = np.zeros((len(lexicon), d)), np.zeros(len(lexicon))
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        lr = epoch_lr(cfg, epoch)
        shrink = 1.0 / (1.0 + lr * cfg.weight_decay)
        for idx in _batches(rng, n, cfg.batch_size):
            xb = x[idx]
            g = (sigmoid(xb @ w.T + b) - y[idx]) / len(idx)
            w = (w - lr * (g.T @ xb)) * shrink
            b = b - lr * g.sum(axis=0)
        z = x @ w.T + b
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        _check_loss(loss, epoch, "phrase training")
    return PhraseModel(lexicon, w, b, tuple(t.shape[1] for t in taps))


def phrase_proba(desc, model: PhraseModel) -> np.ndarray:
    v = desc.concat() if hasattr(desc, "concat") else np.asarray(desc, dtype=np.float64)
    if v.shape[-1] != model.weights.shape[1]:
        raise ConfigError(f"descriptor length {v.shape[-1]} != phrase model input {model.weights.shape[1]}")
    return sigmoid(v @ model.weights.T + model.bias)


def score_phrases(desc, model: PhraseModel, k: int | None = 20) -> list:
    """Top-``k`` ``(phrase, probability)`` pairs, most likely first; ties keep lexicon order.

    ``k=None`` returns the whole lexicon.
    """
    p = phrase_proba(desc, model)
    ranked = sorted(zip(model.lexicon, p.tolist()), key=lambda t: -t[1])
    return ranked if k is None else ranked[:k]


def average_precision(scores, relevant) -> float:
    """Non-interpolated AP: mean precision at the rank of each relevant item."""
    scores = np.asarray(scores, dtype=np.float64)
    relevant = np.asarray(relevant, dtype=bool)
    if not relevant.any():
        return float("nan")
    order = np.argsort(-scores, kind="stable")
    hits = relevant[order]
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision[hits].mean())


# -- TXHD files ---------------------------------------------------------------


def _pack_table(names) -> bytes:
    out = []
    for name in names:
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
    return b"".join(out)


def encode_head(model) -> bytes:
    if isinstance(model, SoftmaxHead):
        kind, names, dims = 0, model.class_names, model.dims
        payload = [w.astype("<f4").tobytes() for w in model.weights]
        payload += [b.astype("<f4").tobytes() for b in model.biases]
    elif isinstance(model, PhraseModel):
        kind, names, dims = 1, model.lexicon, model.dims
        payload = [model.weights.astype("<f4").tobytes(), model.bias.astype("<f4").tobytes()]
    else:
        raise ConfigError(f"cannot serialize {type(model).__name__}")
    parts = [MAGIC, struct.pack("<IBI", VERSION, kind, len(names)), _pack_table(names)]
    parts.append(struct.pack(f"<I{len(dims)}I", len(dims), *dims))
    return b"".join(parts + payload)


def decode_head(data: bytes):
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"file truncated while reading {what}", pos)
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not a TXHD head file", 0)
    version, kind, count = struct.unpack("<IBI", take(9, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported TXHD version {version}", 4)
    if kind not in (0, 1):
        raise FormatError(f"unknown head type {kind}", 8)
    names = []
    for i in range(count):
        (length,) = struct.unpack("<I", take(4, f"name {i} length"))
        at = pos
        try:
            names.append(take(length, f"name {i}").decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"name {i} is not valid UTF-8", at) from exc
    (n_dims,) = struct.unpack("<I", take(4, "dims count"))
    dims = struct.unpack(f"<{n_dims}I", take(4 * n_dims, "dims"))

    def floats(count, what):
        return np.frombuffer(take(4 * count, what), dtype="<f4").astype(np.float64)

    try:
        if kind == 0:
            k = count
            weights = [floats(k * d, f"tap {i} weights").reshape(k, d) for i, d in enumerate(dims)]
            biases = [floats(k, f"tap {i} bias") for i in range(len(dims))]
            model = SoftmaxHead(weights, biases, names)
        else:
            total = sum(dims)
            w = floats(count * total, "phrase weights").reshape(count, total)
            b = floats(count, "phrase biases")
            model = PhraseModel(tuple(names), w, b, dims)
    except ConfigError as exc:
        raise FormatError(f"invalid head contents: {exc}", pos) from exc
    if pos != len(data):
        raise FormatError("trailing bytes after head", pos)
    return model


def save_head(model, path) -> None:
    from .ppm import atomic_write

    atomic_write(Path(path), encode_head(model))


def load_head(path):
    return decode_head(Path(path).read_bytes())
