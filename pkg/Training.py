"""
Training.py - mini-batch Adam training, evaluation and the training log.

Each example in a batch gets its own tape and private gradient buffers,
seeded with 1/B so the reduced gradient is that of the batch-mean loss.
Buffers are reduced in example order, so the update does not depend on how
many worker threads computed them.
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from Embeddings import PAD, RESERVED, EmbeddingTable, Vocabulary
from MatchErrors import EmptyInputError, NumericError
from Matcher import NUM_CLASSES, MatchModel, ModelConfig, forward
from Numerics import GradientReport, ParameterStore, Tape, Tensor, gradient_check, neg_log
from SnliData import LABELS, LabeledPair

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
# Rows and columns of a printed confusion table: neutral, entailment, contradiction
DISPLAY_ORDER = ("neutral", "entailment", "contradiction")
DISPLAY_SHORT = {"neutral": "N", "entailment": "E", "contradiction": "C"}


@dataclass
class TrainConfig:
    epochs: int
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    decay: float = 0.95
    batch_size: int = 30
    d: int = 150
    variant: str = "mlstm"
    seed: int = 0
    shuffle: bool = True
    workers: int = 1
    clip_norm: Optional[float] = None
    shared_encoder: bool = True

    def __post_init__(self):
        if not 0.0 < self.decay <= 1.0:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")

    def lr_at(self, epoch: int) -> float:
        """Per-epoch decay: lr0 * decay^epoch."""
        return self.lr * self.decay ** epoch

    @classmethod
    def from_settings(cls, section: Dict, epochs: int, **overrides) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        values = {k: v for k, v in section.items() if k in known}
        values.update({k: v for k, v in overrides.items() if v is not None})
        values["epochs"] = epochs
        return cls(**values)


@dataclass
class AdamState:
    beta1: float
    beta2: float
    epsilon: float
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_store(cls, store: ParameterStore, beta1: float = 0.9, beta2: float = 0.999,
                  epsilon: float = 1e-8) -> "AdamState":
        return cls(beta1=beta1, beta2=beta2, epsilon=epsilon,
                   m={p.name: np.zeros_like(p.grad) for p in store},
                   v={p.name: np.zeros_like(p.grad) for p in store})


def adam_step(store: ParameterStore, state: AdamState, lr: float):
    """
    Bias-corrected Adam with epsilon outside the square root. Every update is
    computed and checked before any parameter moves; gradients are zeroed after.
    """
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    pending = []
    for p in store:
        g = p.grad
        m = b1 * state.m[p.name] + (1.0 - b1) * g
        v = b2 * state.v[p.name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        update = lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        if not np.all(np.isfinite(update)):
            raise NumericError(f"non-finite Adam update for {p.name}")
        pending.append((p, m, v, update))

    for p, m, v, update in pending:
        state.m[p.name] = m
        state.v[p.name] = v
        p.value.data[...] -= update
    state.t = t
    store.zero_grad()


def gradient_norm(store: ParameterStore) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in store)))


def clip_gradients(store: ParameterStore, max_norm: float) -> float:
    """Rescales all gradients to global norm max_norm when they exceed it. Returns the pre-clip norm."""
    norm = gradient_norm(store)
    if norm > max_norm:
        scale = max_norm / norm
        for p in store:
            p.grad *= scale
        logger.warning(f"Gradient norm {norm:.4g} clipped to {max_norm}")
    return norm


def cross_entropy(probs: Tensor, label: int) -> Tensor:
    """-log(max(p[label], 1e-12))."""
    if not 0 <= label < NUM_CLASSES:
        raise IndexError(f"label {label} out of range for {NUM_CLASSES} classes")
    return neg_log(probs, label, floor=PROB_FLOOR)


@dataclass
class Batch:
    premise_ids: np.ndarray
    hypothesis_ids: np.ndarray
    premise_lengths: np.ndarray
    hypothesis_lengths: np.ndarray
    labels: np.ndarray
    index: int = 0

    def __len__(self):
        return len(self.labels)


def _pad(rows: List[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(r) for r in rows], dtype=np.int64)
    out = np.full((len(rows), int(lengths.max())), PAD, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out, lengths


def make_batches(corpus: Sequence[LabeledPair], vocab: Vocabulary, batch_size: int,
                 seed: int = 0, shuffle: bool = True, unknown_to_null: bool = False) -> List[Batch]:
    """PAD fills each batch to its own longest premise and hypothesis; the last batch may be short."""
    n = len(corpus)
    if n == 0:
        raise EmptyInputError("make_batches: corpus is empty")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(seed).permutation(n) if shuffle else np.arange(n)

    batches = []
    for start in range(0, n, batch_size):
        pairs = [corpus[int(i)] for i in order[start:start + batch_size]]
        premise, premise_lengths = _pad([vocab.encode(p.premise_tokens, unknown_to_null) for p in pairs])
        hypothesis, hypothesis_lengths = _pad([vocab.encode(p.hypothesis_tokens, unknown_to_null) for p in pairs])
        batches.append(Batch(premise_ids=premise, hypothesis_ids=hypothesis,
                             premise_lengths=premise_lengths, hypothesis_lengths=hypothesis_lengths,
                             labels=np.array([p.label_id for p in pairs], dtype=np.int64),
                             index=len(batches)))
    return batches


class ConfusionMatrix:
    """counts[pred][gold] in class order (entailment, contradiction, neutral)."""

    def __init__(self, counts: Optional[np.ndarray] = None):
        self.counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64) if counts is None \
            else np.array(counts, dtype=np.int64)

    def add(self, predicted: int, gold: int):
        self.counts[predicted, gold] += 1

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts))

    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    @classmethod
    def from_display(cls, rows: Sequence[Sequence[int]]) -> "ConfusionMatrix":
        """Builds from a prediction x gold table laid out in N/E/C order."""
        matrix = cls()
        for r, pred in enumerate(DISPLAY_ORDER):
            for c, gold in enumerate(DISPLAY_ORDER):
                matrix.counts[LABELS.index(pred), LABELS.index(gold)] = rows[r][c]
        return matrix

    def display_rows(self) -> List[List[int]]:
        idx = [LABELS.index(label) for label in DISPLAY_ORDER]
        return [[int(self.counts[p, g]) for g in idx] for p in idx]

    def format_table(self) -> str:
        short = [DISPLAY_SHORT[label] for label in DISPLAY_ORDER]
        lines = ["pred\\gold " + " ".join(f"{s:>7}" for s in short)]
        for s, values in zip(short, self.display_rows()):
            lines.append(f"{s:<9} " + " ".join(f"{v:>7}" for v in values))
        return "\n".join(lines)


@dataclass
class EvalReport:
    accuracy: float
    confusion: ConfusionMatrix
    loss: float = 0.0

    def to_dict(self) -> Dict:
        return {"accuracy": self.accuracy, "total": self.confusion.total,
                "correct": self.confusion.correct, "loss": self.loss,
                "confusion_nec": self.confusion.display_rows()}


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    dev_acc: Optional[float]


@dataclass
class TrainResult:
    records: List[EpochRecord]
    best_epoch: int
    best_dev_acc: Optional[float]
    best_snapshot: Dict[str, np.ndarray]


class Trainer:
    """
    Owns the optimizer state for one model. The model's store is updated in
    place; after train() it holds the best-dev parameters.
    """

    def __init__(self, model: MatchModel, table: EmbeddingTable, vocab: Vocabulary,
                 config: TrainConfig, log_path: Optional[str] = None):
        self.model = model
        self.table = table
        self.vocab = vocab
        self.config = config
        self.log_path = log_path
        self.adam = AdamState.for_store(model.store, config.beta1, config.beta2, config.adam_epsilon)

    def _example(self, batch: Batch, i: int, weight: float) -> Tuple[float, bool, Dict[str, np.ndarray]]:
        buffers = self.model.store.new_grad_buffers()
        tape = Tape()
        probs, _ = forward(self.model, batch.premise_ids[i], batch.hypothesis_ids[i], self.table,
                           tape=tape, grads=buffers,
                           premise_length=batch.premise_lengths[i],
                           hypothesis_length=batch.hypothesis_lengths[i])
        label = int(batch.labels[i])
        loss = cross_entropy(probs, label)
        tape.backward(loss, seed=weight)
        return loss.item(), int(np.argmax(probs.data)) == label, buffers

    def batch_gradients(self, batch: Batch) -> Tuple[float, int]:
        """Fills the store's gradients with those of the batch-mean loss. Returns (loss sum, correct)."""
        weight = 1.0 / len(batch)
        if self.config.workers > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                results = list(pool.map(lambda i: self._example(batch, i, weight), range(len(batch))))
        else:
            results = [self._example(batch, i, weight) for i in range(len(batch))]

        store = self.model.store
        store.zero_grad()
        for _, _, buffers in results:
            store.accumulate(buffers)
        return sum(r[0] for r in results), sum(1 for r in results if r[1])

    def train_batch(self, batch: Batch, lr: float) -> Tuple[float, int]:
        loss_sum, correct = self.batch_gradients(batch)
        if self.config.clip_norm is not None:
            clip_gradients(self.model.store, self.config.clip_norm)
        adam_step(self.model.store, self.adam, lr)
        return loss_sum, correct

    def train_epoch(self, corpus: Sequence[LabeledPair], epoch: int) -> Tuple[float, float]:
        lr = self.config.lr_at(epoch)
        batches = make_batches(corpus, self.vocab, self.config.batch_size,
                               seed=self.config.seed + epoch, shuffle=self.config.shuffle)
        loss_total, correct = 0.0, 0
        for batch in batches:
            try:
                loss_sum, batch_correct = self.train_batch(batch, lr)
            except NumericError as e:
                raise NumericError(str(e), batch_index=batch.index)
            loss_total += loss_sum
            correct += batch_correct
        return loss_total / len(corpus), correct / len(corpus)

    def _log_header(self):
        header = {"record": "header", "started": time.strftime("%Y-%m-%d %H:%M:%S")}
        header.update(asdict(self.config))
        header["parameters"] = self.model.store.num_scalars()
        header["embedding_checksum"] = self.table.checksum()
        self._append(header)

    def _append(self, record: Dict):
        if self.log_path:
            with open(self.log_path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record) + "\n")

    def train(self, corpus: Sequence[LabeledPair], dev_corpus: Optional[Sequence[LabeledPair]] = None,
              stop_at_train_acc: Optional[float] = None) -> TrainResult:
        """
        Runs config.epochs epochs (or stops once train accuracy reaches
        stop_at_train_acc). The best-dev snapshot, or the last epoch without a
        dev corpus, is restored into the store before returning.
        """
        if len(corpus) == 0:
            raise EmptyInputError("train: corpus is empty")
        self._log_header()
        checksum = self.table.checksum()
        store = self.model.store
        records: List[EpochRecord] = []
        best_epoch, best_dev, best_snapshot = -1, None, store.snapshot()

        for epoch in range(self.config.epochs):
            train_loss, train_acc = self.train_epoch(corpus, epoch)
            dev_acc = None
            if dev_corpus is not None and len(dev_corpus) > 0:
                dev_acc = evaluate(self.model, self.table, self.vocab, dev_corpus,
                                   workers=self.config.workers).accuracy
            record = EpochRecord(epoch=epoch, lr=self.config.lr_at(epoch), train_loss=train_loss,
                                 train_acc=train_acc, dev_acc=dev_acc)
            records.append(record)
            self._append(asdict(record))
            logger.info(f"Epoch {epoch}: lr={record.lr:.6g} loss={train_loss:.6f} "
                        f"train_acc={train_acc:.4f} dev_acc={dev_acc}")

            if dev_acc is None or best_dev is None or dev_acc > best_dev:
                best_epoch, best_dev, best_snapshot = epoch, dev_acc, store.snapshot()
            if stop_at_train_acc is not None and train_acc >= stop_at_train_acc:
                logger.info(f"Train accuracy {train_acc:.4f} reached at epoch {epoch}, stopping")
                break

        if self.table.checksum() != checksum:
            raise NumericError("embedding table changed during training")
        store.restore(best_snapshot)
        return TrainResult(records=records, best_epoch=best_epoch, best_dev_acc=best_dev,
                           best_snapshot=best_snapshot)


def evaluate(model: MatchModel, table: EmbeddingTable, vocab: Vocabulary,
             corpus: Sequence[LabeledPair], workers: int = 1, unknown_to_null: bool = False) -> EvalReport:
    def score(pair: LabeledPair) -> Tuple[int, float]:
        probs, _ = forward(model, vocab.encode(pair.premise_tokens, unknown_to_null),
                           vocab.encode(pair.hypothesis_tokens, unknown_to_null), table)
        return int(np.argmax(probs.data)), cross_entropy(probs, pair.label_id).item()

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(score, corpus))
    else:
        results = [score(pair) for pair in corpus]

    confusion = ConfusionMatrix()
    loss = 0.0
    for pair, (predicted, pair_loss) in zip(corpus, results):
        confusion.add(predicted, pair.label_id)
        loss += pair_loss
    if confusion.total == 0:
        logger.warning("evaluate: empty corpus")
    mean_loss = loss / confusion.total if confusion.total else 0.0
    return EvalReport(accuracy=confusion.accuracy(), confusion=confusion, loss=mean_loss)


def model_gradient_check(variant: str, d: int, l: int = 5, premise_len: int = 4, hypothesis_len: int = 3,
                         seed: int = 0, epsilon: float = 1e-5) -> GradientReport:
    """
    Finite-difference check of the full cross-entropy loss for one random
    pair. Embeddings are standard normal with PAD and NULL rows zero.

    Every parameter, biases included, is redrawn from the unit-variance
    uniform U(-sqrt(3), sqrt(3)) so that attention pre-activations leave the
    linear part of tanh and no gradient entry sits at roundoff level.
    """
    rng = np.random.default_rng(seed)
    matrix = rng.normal(0.0, 1.0, size=(RESERVED + premise_len + hypothesis_len, l))
    matrix[:RESERVED] = 0.0
    table = EmbeddingTable(matrix)
    premise = np.arange(RESERVED, RESERVED + premise_len)
    hypothesis = np.arange(RESERVED + premise_len, RESERVED + premise_len + hypothesis_len)
    label = int(rng.integers(NUM_CLASSES))
    model = MatchModel(ModelConfig(variant=variant, d=d, l=l, seed=seed))
    bound = np.sqrt(3.0)
    for p in model.store:
        p.value.data[...] = rng.uniform(-bound, bound, size=p.value.shape)

    def loss_fn(store, tape):
        probs, _ = forward(model, premise, hypothesis, table, tape=tape)
        return cross_entropy(probs, label)

    return gradient_check(loss_fn, model.store, epsilon=epsilon)
