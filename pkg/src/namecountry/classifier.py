"""Character-level name-to-nationality classifier.

Architecture: character embedding (64) -> width-3 convolution (128) with
ReLU -> masked mean pooling over non-pad positions -> linear head over the
taxonomy, trained with AdamW under linear warmup then linear decay, early
stopping on validation macro-F1, and best-epoch checkpointing.

Inference deliberately avoids batch-shaped matrix products: the convolution
is evaluated through per-character lookup tables (embedding @ tap weight,
a batch-independent product) followed by gathers, adds, and fixed-axis
reductions. BLAS products over a batch dimension change low-order bits as
the batch shape changes; this path keeps predict(name) bit-identical to any
batched evaluation containing the same name. Training gradients are free to
use ordinary matmuls.
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import NameRecord, Taxonomy, normalize_name
from .evaluation import evaluate

PAD = 0
UNK = 1
DEFAULT_MAX_LEN = 40

CHECKPOINT_MAGIC = b"NCCLF001"

PARAM_ORDER = ("embedding", "conv_w", "conv_b", "head_w", "head_b")


class TrainingError(RuntimeError):
    pass


class NonFiniteLossError(TrainingError):
    def __init__(self, epoch: int, step: int, value: float):
        self.epoch = epoch
        self.step = step
        super().__init__(
            f"non-finite training loss ({value!r}) at epoch {epoch}, step {step}")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class Tokenizer:
    """Character vocabulary with reserved PAD=0 and UNK=1 indices.

    encode() always yields exactly max_len indices (truncate or pad).
    """

    chars: tuple[str, ...]
    max_len: int = DEFAULT_MAX_LEN
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.max_len <= 0:
            raise ValueError("max_len must be positive")
        index = {c: i + 2 for i, c in enumerate(self.chars)}
        if len(index) != len(self.chars):
            raise ValueError("tokenizer characters must be unique")
        object.__setattr__(self, "_index", index)

    @property
    def vocab_size(self) -> int:
        return len(self.chars) + 2

    def encode(self, name: str) -> np.ndarray:
        return self.encode_batch([name])[0]

    def encode_batch(self, names: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(names), self.max_len), dtype=np.int32)
        index = self._index
        for row, name in enumerate(names):
            text = normalize_name(name)[: self.max_len]
            for col, char in enumerate(text):
                out[row, col] = index.get(char, UNK)
        return out


def fit_tokenizer(corpus: Sequence[NameRecord],
                  max_len: int = DEFAULT_MAX_LEN) -> Tokenizer:
    """Character vocabulary of the corpus, ordered by codepoint."""
    if not corpus:
        raise ValueError("cannot fit a tokenizer on an empty corpus")
    chars = sorted({c for record in corpus for c in record.full_name})
    return Tokenizer(tuple(chars), max_len)


@dataclass(frozen=True)
class ModelConfig:
    embedding_dim: int = 64
    hidden_dim: int = 128

    def __post_init__(self) -> None:
        if self.embedding_dim <= 0 or self.hidden_dim <= 0:
            raise ValueError("model dimensions must be positive")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-5
    batch_size: int = 64
    max_epochs: int = 10
    warmup_fraction: float = 0.10
    patience: int = 5
    seed: int = 0
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size <= 0 or self.max_epochs <= 0 or self.patience <= 0:
            raise ValueError("batch_size, max_epochs, patience must be positive")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


def init_params(vocab_size: int, n_classes: int,
                model_config: ModelConfig = ModelConfig(),
                seed: int = 0,
                dtype: np.dtype = np.float32) -> dict[str, np.ndarray]:
    e, h = model_config.embedding_dim, model_config.hidden_dim
    rng = np.random.default_rng([seed, 0])
    params = {
        "embedding": rng.normal(0.0, 0.1, (vocab_size, e)),
        "conv_w": rng.normal(0.0, math.sqrt(2.0 / (3 * e)), (3, e, h)),
        "conv_b": np.zeros(h),
        "head_w": rng.normal(0.0, math.sqrt(1.0 / h), (h, n_classes)),
        "head_b": np.zeros(n_classes),
    }
    return {k: v.astype(dtype) for k, v in params.items()}


def _shifted_indices(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pad_col = np.full((x.shape[0], 1), PAD, dtype=x.dtype)
    prev = np.concatenate([pad_col, x[:, :-1]], axis=1)
    nxt = np.concatenate([x[:, 1:], pad_col], axis=1)
    return prev, x, nxt


def score_batch(params: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    """Probability rows for encoded names; bit-identical across batch shapes.

    Only gathers, elementwise ops, and fixed-axis reductions touch the batch
    dimension (see module docstring). An all-pad row (empty name) pools to
    zeros and scores as softmax of the head bias.
    """
    dtype = params["embedding"].dtype
    taps = [params["embedding"] @ params["conv_w"][t] for t in range(3)]
    prev, cur, nxt = _shifted_indices(x)
    hidden = taps[0][prev] + taps[1][cur] + taps[2][nxt] + params["conv_b"]
    np.maximum(hidden, 0, out=hidden)
    mask = (x != PAD)
    counts = np.maximum(mask.sum(axis=1), 1).astype(dtype)
    pooled = (hidden * mask[:, :, None]).sum(axis=1) / counts[:, None]
    logits = ((pooled[:, :, None] * params["head_w"][None, :, :]).sum(axis=1)
              + params["head_b"])
    peak = logits.max(axis=1, keepdims=True)
    exps = np.exp(logits - peak)
    return exps / exps.sum(axis=1, keepdims=True)


def loss_and_grads(params: dict[str, np.ndarray], x: np.ndarray,
                   y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and its analytic gradients."""
    dtype = params["embedding"].dtype
    n = x.shape[0]
    shifts = _shifted_indices(x)
    embedded = [params["embedding"][s] for s in shifts]
    pre = (embedded[0] @ params["conv_w"][0]
           + embedded[1] @ params["conv_w"][1]
           + embedded[2] @ params["conv_w"][2]
           + params["conv_b"])
    hidden = np.maximum(pre, 0)
    mask = (x != PAD).astype(dtype)
    counts = np.maximum(mask.sum(axis=1), 1)
    pooled = (hidden * mask[:, :, None]).sum(axis=1) / counts[:, None]
    logits = pooled @ params["head_w"] + params["head_b"]

    peak = logits.max(axis=1, keepdims=True)
    shifted = logits - peak
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = float(-log_probs[rows, y].mean())

    d_logits = np.exp(log_probs)
    d_logits[rows, y] -= 1
    d_logits /= n

    grads: dict[str, np.ndarray] = {
        "head_w": pooled.T @ d_logits,
        "head_b": d_logits.sum(axis=0),
    }
    d_pooled = d_logits @ params["head_w"].T
    d_hidden = (d_pooled / counts[:, None])[:, None, :] * mask[:, :, None]
    d_hidden *= pre > 0
    grads["conv_b"] = d_hidden.sum(axis=(0, 1))

    e = params["embedding"].shape[1]
    h = params["conv_b"].shape[0]
    flat_hidden = d_hidden.reshape(-1, h)
    conv_w_grad = np.empty_like(params["conv_w"])
    embedding_grad = np.zeros_like(params["embedding"])
    for t in range(3):
        conv_w_grad[t] = embedded[t].reshape(-1, e).T @ flat_hidden
        d_embedded = d_hidden @ params["conv_w"][t].transpose()
        np.add.at(embedding_grad, shifts[t], d_embedded)
    grads["conv_w"] = conv_w_grad
    grads["embedding"] = embedding_grad
    return loss, grads


class AdamW:
    """Adam with decoupled weight decay; state arrays follow the param dtype."""

    def __init__(self, params: dict[str, np.ndarray], weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {k: np.zeros_like(v) for k, v in params.items()}
        self._v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray], lr: float) -> None:
        self.step_count += 1
        bias1 = 1.0 - self.beta1 ** self.step_count
        bias2 = 1.0 - self.beta2 ** self.step_count
        for key, param in params.items():
            grad = grads[key]
            m = self._m[key]
            v = self._v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * param
            param -= lr * update


def lr_at_step(step: int, total_steps: int, warmup_steps: int,
               base_lr: float) -> float:
    """Linear warmup to base_lr, then linear decay to zero. `step` is 1-based."""
    if warmup_steps > 0 and step <= warmup_steps:
        return base_lr * step / warmup_steps
    remaining = max(1, total_steps - warmup_steps)
    return base_lr * max(0, total_steps - step) / remaining


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_accuracy: float
    val_macro_f1: float
    lr: float

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss,
                "val_accuracy": self.val_accuracy,
                "val_macro_f1": self.val_macro_f1, "lr": self.lr}


@dataclass
class TrainLog:
    epochs: list[EpochStats] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_dict()) + "\n" for e in self.epochs)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "TrainLog":
        log = TrainLog()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                log.epochs.append(EpochStats(**json.loads(line)))
        return log


@dataclass
class ClassifierModel:
    tokenizer: Tokenizer
    taxonomy: Taxonomy
    params: dict[str, np.ndarray]

    def predict(self, name: str) -> np.ndarray:
        return self.predict_batch([name])[0]

    def predict_batch(self, names: Sequence[str]) -> np.ndarray:
        if not names:
            return np.zeros((0, len(self.taxonomy)),
                            dtype=self.params["embedding"].dtype)
        return score_batch(self.params, self.tokenizer.encode_batch(names))

    def predict_label(self, name: str) -> str:
        return self.predict_labels([name])[0]

    def predict_labels(self, names: Sequence[str],
                       chunk_size: int = 1024) -> list[str]:
        labels = []
        for start in range(0, len(names), chunk_size):
            probs = self.predict_batch(names[start:start + chunk_size])
            # np.argmax returns the first maximum: lowest index wins ties
            for row in probs.argmax(axis=1):
                labels.append(self.taxonomy.labels[int(row)])
        return labels


ValScorer = Callable[[ClassifierModel], tuple[float, float]]


def _default_val_scorer(val_set: Sequence[NameRecord]) -> ValScorer:
    names = [r.full_name for r in val_set]
    gold = [r.label for r in val_set]

    def scorer(model: ClassifierModel) -> tuple[float, float]:
        predicted = model.predict_labels(names)
        report = evaluate(list(zip(gold, predicted)), model.taxonomy)
        return report.accuracy, report.macro_f1

    return scorer


def train(
    train_set: Sequence[NameRecord],
    val_set: Sequence[NameRecord],
    taxonomy: Taxonomy,
    config: TrainConfig = TrainConfig(),
    model_config: ModelConfig = ModelConfig(),
    tokenizer: Tokenizer | None = None,
    val_scorer: ValScorer | None = None,
) -> tuple[ClassifierModel, TrainLog]:
    """Train a classifier, returning the best-validation-epoch model and log.

    Early stopping: after each epoch the validation macro-F1 is compared to
    the best so far (strict improvement); `patience` consecutive epochs
    without improvement stop training, and the checkpoint from the best epoch
    is returned. `val_scorer` overrides validation scoring; it receives the
    live model and returns (accuracy, macro_f1).
    """
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be non-empty")
    for record in (*train_set, *val_set):
        taxonomy.index_of(record.label)  # raises UnknownLabelError

    if tokenizer is None:
        tokenizer = fit_tokenizer(train_set)
    x_train = tokenizer.encode_batch([r.full_name for r in train_set])
    y_train = np.array([taxonomy.index_of(r.label) for r in train_set],
                       dtype=np.int64)
    params = init_params(tokenizer.vocab_size, len(taxonomy), model_config,
                         seed=config.seed)
    optimizer = AdamW(params, weight_decay=config.weight_decay)
    if val_scorer is None:
        val_scorer = _default_val_scorer(val_set)

    n = len(train_set)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = steps_per_epoch * config.max_epochs
    warmup_steps = int(config.warmup_fraction * total_steps)
    shuffle_rng = np.random.default_rng([config.seed, 1])

    log = TrainLog()
    best_macro = -math.inf
    best_params: dict[str, np.ndarray] | None = None
    epochs_without_improvement = 0
    global_step = 0
    lr = config.learning_rate

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        for step, start in enumerate(range(0, n, config.batch_size), start=1):
            batch = order[start:start + config.batch_size]
            global_step += 1
            lr = lr_at_step(global_step, total_steps, warmup_steps,
                            config.learning_rate)
            loss, grads = loss_and_grads(params, x_train[batch], y_train[batch])
            if not math.isfinite(loss):
                raise NonFiniteLossError(epoch, step, loss)
            optimizer.step(params, grads, lr)
            total_loss += loss * len(batch)

        model = ClassifierModel(tokenizer, taxonomy, params)
        val_accuracy, val_macro = val_scorer(model)
        log.epochs.append(EpochStats(epoch, total_loss / n,
                                     val_accuracy, val_macro, lr))
        if val_macro > best_macro:
            best_macro = val_macro
            best_params = {k: v.copy() for k, v in params.items()}
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= config.patience:
                break

    assert best_params is not None
    return ClassifierModel(tokenizer, taxonomy, best_params), log


# --- checkpoint format ----------------------------------------------------
# magic (8 bytes) | uint32 LE header length | JSON header | raw little-endian
# arrays, C order, in PARAM_ORDER.

def save_model(model: ClassifierModel, path: str | Path) -> None:
    dtype = np.dtype(model.params["embedding"].dtype)
    header = {
        "dtype": dtype.name,
        "max_len": model.tokenizer.max_len,
        "chars": list(model.tokenizer.chars),
        "taxonomy": {"name": model.taxonomy.name,
                     "labels": list(model.taxonomy.labels)},
        "params": [{"name": name, "shape": list(model.params[name].shape)}
                   for name in PARAM_ORDER],
    }
    header_bytes = json.dumps(header, ensure_ascii=False,
                              sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with tmp.open("wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", len(header_bytes)))
            fh.write(header_bytes)
            little = dtype.newbyteorder("<")
            for name in PARAM_ORDER:
                fh.write(np.ascontiguousarray(model.params[name],
                                              dtype=little).tobytes())
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def load_model(path: str | Path) -> ClassifierModel:
    blob = Path(path).read_bytes()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(
            f"{path}: bad magic {blob[:8]!r}, expected {CHECKPOINT_MAGIC!r}")
    (header_len,) = struct.unpack("<I", blob[8:12])
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    dtype = np.dtype(header["dtype"])
    little = dtype.newbyteorder("<")
    params: dict[str, np.ndarray] = {}
    offset = 12 + header_len
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * dtype.itemsize
        if offset + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated parameter data")
        raw = np.frombuffer(blob, dtype=little, count=int(np.prod(shape)),
                            offset=offset)
        params[entry["name"]] = raw.astype(dtype).reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after parameter data")
    if set(params) != set(PARAM_ORDER):
        raise CheckpointError(f"{path}: unexpected parameter set {sorted(params)}")
    tokenizer = Tokenizer(tuple(header["chars"]), header["max_len"])
    taxonomy = Taxonomy(header["taxonomy"]["name"],
                        tuple(header["taxonomy"]["labels"]))
    return ClassifierModel(tokenizer, taxonomy, params)
