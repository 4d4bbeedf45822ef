"""
Numerics.py - dense float64 tensors with a reverse-mode tape.

Every differentiable operation computes its forward value with numpy and,
when any operand is being tracked, records a backward closure on the tape of
that operand. Tape.backward() replays the closures in reverse order and then
frees them. Parameters live in a ParameterStore; bind() hands out leaf
tensors whose gradients accumulate straight into a caller-chosen buffer.

Non-finite values are never tolerated: a NaN/Inf in any forward result or
any incoming gradient raises NumericError.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence

import numpy as np

from MatchErrors import DimensionError, InvalidMaskError, NumericError

logger = logging.getLogger(__name__)

DTYPE = np.float64


class Tensor:
    """1-D or 2-D float64 array plus the bookkeeping needed for backward."""

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data):
        # Caller-built tensors are constants; tracked leaves come from ParameterStore.bind
        arr = np.array(data, dtype=DTYPE)
        self._setup(arr, requires_grad=False, tape=None, grad=None, frozen=True)

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool, tape: Optional["Tape"],
              grad: Optional[np.ndarray] = None, frozen: bool = True, what: str = "tensor") -> "Tensor":
        t = cls.__new__(cls)
        t._setup(arr, requires_grad=requires_grad, tape=tape, grad=grad, frozen=frozen, what=what)
        return t

    def _setup(self, arr, requires_grad, tape, grad, frozen, what="tensor"):
        if arr.ndim not in (1, 2):
            raise DimensionError(f"{what}: tensors are 1-D or 2-D, got shape {arr.shape}")
        if arr.size == 0:
            raise DimensionError(f"{what}: zero-length dimension in shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite value produced by {what}")
        if frozen:
            arr.flags.writeable = False
        self.data = arr
        self.grad = grad
        self.requires_grad = requires_grad
        self.tape = tape

    @property
    def shape(self):
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    """Untracked tensor (embeddings, zero initial states, NULL rows)."""
    return Tensor(data)


def zeros(n: int) -> Tensor:
    return Tensor(np.zeros(n, dtype=DTYPE))


class Tape:
    """
    Ordered record of backward closures for one evaluation context.
    A tape is not shared between threads; each example gets its own.
    """

    def __init__(self):
        self._closures: List[Callable[[], None]] = []
        self._nodes: List[Tensor] = []

    def __len__(self):
        return len(self._closures)

    def record(self, out: Tensor, backward: Callable[[], None]):
        self._nodes.append(out)
        self._closures.append(backward)

    def backward(self, loss: Tensor, seed: float = 1.0):
        """Propagates d(seed * loss) to every tracked leaf, then frees the tape."""
        if loss.data.size != 1:
            raise DimensionError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if not np.isfinite(loss.data).all():
            raise NumericError("non-finite loss")
        if loss.requires_grad and loss.tape is self:
            loss.grad = np.full(loss.shape, seed, dtype=DTYPE)
            for closure in reversed(self._closures):
                closure()
        self.clear()

    def clear(self):
        for node in self._nodes:
            node.grad = None
            node.tape = None
        self._nodes = []
        self._closures = []


def _accumulate(t: Tensor, g: np.ndarray, what: str):
    if not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite gradient in backward of {what}")
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE)
    else:
        t.grad += g


def _tape_of(operands: Sequence[Tensor]) -> Optional[Tape]:
    for t in operands:
        if t.requires_grad and t.tape is not None:
            return t.tape
    return None


def _emit(value: np.ndarray, operands: Sequence[Tensor], make_backward, what: str) -> Tensor:
    tape = _tape_of(operands)
    out = Tensor._wrap(value, requires_grad=tape is not None, tape=tape, what=what)
    if tape is not None:
        tape.record(out, make_backward(out))
    return out


def _require_vector(t: Tensor, what: str):
    if len(t.shape) != 1:
        raise DimensionError(f"{what} must be a vector, got shape {t.shape}")


def _require_matrix(t: Tensor, what: str):
    if len(t.shape) != 2:
        raise DimensionError(f"{what} must be a matrix, got shape {t.shape}")


# --- Elementary operations ---

def affine(x: Tensor, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """W·x (+ b). The shared kernel behind every gate pre-activation."""
    _require_vector(x, "affine operand x")
    _require_matrix(W, "affine operand W")
    if W.shape[1] != x.shape[0]:
        raise DimensionError(f"affine: W has shape {W.shape} but x has length {x.shape[0]}")
    if b is not None and b.shape != (W.shape[0],):
        raise DimensionError(f"affine: b has shape {b.shape}, expected ({W.shape[0]},)")

    value = W.data @ x.data
    if b is not None:
        value = value + b.data
    operands = (x, W) if b is None else (x, W, b)

    def make_backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            if x.requires_grad:
                _accumulate(x, W.data.T @ g, "affine")
            if W.requires_grad:
                _accumulate(W, np.outer(g, x.data), "affine")
            if b is not None and b.requires_grad:
                _accumulate(b, g, "affine")
        return run

    return _emit(value, operands, make_backward, "affine")


def masked_softmax(scores: Tensor, mask) -> Tensor:
    """
    Softmax over the positions where mask is true; masked positions are exactly 0.
    Stabilised by subtracting the maximum over the unmasked scores.
    """
    _require_vector(scores, "masked_softmax scores")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != scores.shape:
        raise DimensionError(f"masked_softmax: mask shape {mask.shape} != scores shape {scores.shape}")
    if not mask.any():
        raise InvalidMaskError("masked_softmax: mask selects no position")

    s = scores.data
    top = s[mask].max()
    shifted = np.where(mask, s - top, 0.0)
    e = np.where(mask, np.exp(shifted), 0.0)
    p = e / e.sum()

    def make_backward(out):
        def run():
            g = out.grad
            if g is None or not scores.requires_grad:
                return
            _accumulate(scores, p * (g - np.dot(g, p)), "masked_softmax")
        return run

    return _emit(p, (scores,), make_backward, "masked_softmax")


def softmax(z: Tensor) -> Tensor:
    return masked_softmax(z, np.ones(z.shape, dtype=bool))


def logistic(x: np.ndarray) -> np.ndarray:
    """Overflow-free 1 / (1 + exp(-x)) on a raw array."""
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, e) / (1.0 + e)


def sigmoid(x: Tensor) -> Tensor:
    y = logistic(x.data)

    def make_backward(out):
        def run():
            if out.grad is not None and x.requires_grad:
                _accumulate(x, out.grad * y * (1.0 - y), "sigmoid")
        return run

    return _emit(y, (x,), make_backward, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def make_backward(out):
        def run():
            if out.grad is not None and x.requires_grad:
                _accumulate(x, out.grad * (1.0 - y * y), "tanh")
        return run

    return _emit(y, (x,), make_backward, "tanh")


def _same_shape(a: Tensor, b: Tensor, what: str):
    if a.shape != b.shape:
        raise DimensionError(f"{what}: operand shapes differ ({a.shape} vs {b.shape})")


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "multiply")

    def make_backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accumulate(a, g * b.data, "multiply")
            if b.requires_grad:
                _accumulate(b, g * a.data, "multiply")
        return run

    return _emit(a.data * b.data, (a, b), make_backward, "multiply")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def make_backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accumulate(a, g, "add")
            if b.requires_grad:
                _accumulate(b, g, "add")
        return run

    return _emit(a.data + b.data, (a, b), make_backward, "add")


_POINTWISE = {
    "sigmoid": (1, sigmoid),
    "tanh": (1, tanh),
    "multiply": (2, multiply),
    "add": (2, add),
}


def pointwise(kind: str, *operands: Tensor) -> Tensor:
    """Dispatches sigmoid / tanh / multiply / add by name."""
    if kind not in _POINTWISE:
        raise ValueError(f"Unknown pointwise kind: {kind}")
    arity, fn = _POINTWISE[kind]
    if len(operands) != arity:
        raise ValueError(f"{kind} takes {arity} operand(s), got {len(operands)}")
    return fn(*operands)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """a followed by b; the backward pass splits the gradient at len(a)."""
    _require_vector(a, "concat operand a")
    _require_vector(b, "concat operand b")
    p = a.shape[0]

    def make_backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accumulate(a, g[:p], "concat")
            if b.requires_grad:
                _accumulate(b, g[p:], "concat")
        return run

    return _emit(np.concatenate([a.data, b.data]), (a, b), make_backward, "concat")


# --- Row/matrix plumbing used by the sequence models ---

def stack(rows: Sequence[Tensor]) -> Tensor:
    """Stacks equal-length vectors into an n x d matrix."""
    if not rows:
        raise DimensionError("stack: no rows")
    for r in rows:
        _require_vector(r, "stack row")
        if r.shape != rows[0].shape:
            raise DimensionError(f"stack: row shapes differ ({r.shape} vs {rows[0].shape})")

    def make_backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            for i, r in enumerate(rows):
                if r.requires_grad:
                    _accumulate(r, g[i], "stack")
        return run

    return _emit(np.stack([r.data for r in rows]), rows, make_backward, "stack")


def row(X: Tensor, k: int) -> Tensor:
    _require_matrix(X, "row source")
    if not 0 <= k < X.shape[0]:
        raise IndexError(f"row {k} out of range for {X.shape[0]} rows")

    def make_backward(out):
        def run():
            if out.grad is None or not X.requires_grad:
                return
            g = np.zeros_like(X.data)
            g[k] = out.grad
            _accumulate(X, g, "row")
        return run

    return _emit(X.data[k].copy(), (X,), make_backward, "row")


def segment(x: Tensor, start: int, stop: int) -> Tensor:
    """Entries start..stop-1 of a vector."""
    _require_vector(x, "segment source")
    if not 0 <= start < stop <= x.shape[0]:
        raise IndexError(f"segment [{start}, {stop}) out of range for length {x.shape[0]}")

    def make_backward(out):
        def run():
            if out.grad is None or not x.requires_grad:
                return
            g = np.zeros_like(x.data)
            g[start:stop] = out.grad
            _accumulate(x, g, "segment")
        return run

    return _emit(x.data[start:stop].copy(), (x,), make_backward, "segment")


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor,
              W: Sequence[Tensor], V: Sequence[Tensor], b: Sequence[Tensor]):
    """
    One fused LSTM position. W, V and b hold the input matrices, recurrent
    matrices and biases of the i, f, o and candidate gates, in that order.

    Returns ([h; c] as a single tracked vector, (i, f, o) as raw arrays).
    """
    d = h_prev.shape[0]
    xs, hs, cs = x.data, h_prev.data, c_prev.data
    W_all = np.concatenate([Wg.data for Wg in W])
    V_all = np.concatenate([Vg.data for Vg in V])
    z = (W_all @ xs + np.concatenate([bg.data for bg in b])) + V_all @ hs
    if not np.isfinite(z).all():
        raise NumericError("non-finite gate pre-activation in lstm_cell")
    ifo = logistic(z[:3 * d])
    ifo.flags.writeable = False
    i, f, o = ifo[:d], ifo[d:2 * d], ifo[2 * d:]
    g = np.tanh(z[3 * d:])
    c = f * cs + i * g
    tc = np.tanh(c)
    h = o * tc
    operands = (x, h_prev, c_prev) + tuple(W) + tuple(V) + tuple(b)

    def make_backward(out):
        def run():
            if out.grad is None:
                return
            gh, gc = out.grad[:d], out.grad[d:]
            dc = gc + gh * o * (1.0 - tc * tc)
            dz = np.concatenate([dc * g * i * (1.0 - i),
                                 dc * cs * f * (1.0 - f),
                                 gh * tc * o * (1.0 - o),
                                 dc * i * (1.0 - g * g)])
            if c_prev.requires_grad:
                _accumulate(c_prev, dc * f, "lstm_cell")
            if x.requires_grad:
                _accumulate(x, W_all.T @ dz, "lstm_cell")
            if h_prev.requires_grad:
                _accumulate(h_prev, V_all.T @ dz, "lstm_cell")
            dW, dV = np.outer(dz, xs), np.outer(dz, hs)
            for k in range(4):
                rows = slice(k * d, (k + 1) * d)
                if W[k].requires_grad:
                    _accumulate(W[k], dW[rows], "lstm_cell")
                if V[k].requires_grad:
                    _accumulate(V[k], dV[rows], "lstm_cell")
                if b[k].requires_grad:
                    _accumulate(b[k], dz[rows], "lstm_cell")
        return run

    return _emit(np.concatenate([h, c]), operands, make_backward, "lstm_cell"), (i, f, o)


def prepend_zero_row(X: Tensor) -> Tensor:
    """Adds an all-zero row 0 (the NULL slot); it never receives gradient."""
    _require_matrix(X, "prepend_zero_row operand")
    value = np.vstack([np.zeros((1, X.shape[1]), dtype=DTYPE), X.data])

    def make_backward(out):
        def run():
            if out.grad is not None and X.requires_grad:
                _accumulate(X, out.grad[1:], "prepend_zero_row")
        return run

    return _emit(value, (X,), make_backward, "prepend_zero_row")


def affine_rows(X: Tensor, W: Tensor) -> Tensor:
    """Applies W to every row of X: returns X·Wᵀ."""
    _require_matrix(X, "affine_rows operand X")
    _require_matrix(W, "affine_rows operand W")
    if W.shape[1] != X.shape[1]:
        raise DimensionError(f"affine_rows: W has shape {W.shape} but rows have length {X.shape[1]}")

    def make_backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            if X.requires_grad:
                _accumulate(X, g @ W.data, "affine_rows")
            if W.requires_grad:
                _accumulate(W, g.T @ X.data, "affine_rows")
        return run

    return _emit(X.data @ W.data.T, (X, W), make_backward, "affine_rows")


def add_rows(A: Tensor, v: Tensor) -> Tensor:
    """Adds vector v to every row of A."""
    _require_matrix(A, "add_rows operand A")
    _require_vector(v, "add_rows operand v")
    if A.shape[1] != v.shape[0]:
        raise DimensionError(f"add_rows: rows have length {A.shape[1]}, v has length {v.shape[0]}")

    def make_backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            if A.requires_grad:
                _accumulate(A, g, "add_rows")
            if v.requires_grad:
                _accumulate(v, g.sum(axis=0), "add_rows")
        return run

    return _emit(A.data + v.data[None, :], (A, v), make_backward, "add_rows")


def row_dot(A: Tensor, w: Tensor) -> Tensor:
    """Dot product of every row of A with w."""
    _require_matrix(A, "row_dot operand A")
    _require_vector(w, "row_dot operand w")
    if A.shape[1] != w.shape[0]:
        raise DimensionError(f"row_dot: rows have length {A.shape[1]}, w has length {w.shape[0]}")

    def make_backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            if A.requires_grad:
                _accumulate(A, np.outer(g, w.data), "row_dot")
            if w.requires_grad:
                _accumulate(w, A.data.T @ g, "row_dot")
        return run

    return _emit(A.data @ w.data, (A, w), make_backward, "row_dot")


def weighted_sum(alpha: Tensor, H: Tensor) -> Tensor:
    """Σ_j alpha_j H_j."""
    _require_vector(alpha, "weighted_sum weights")
    _require_matrix(H, "weighted_sum rows")
    if alpha.shape[0] != H.shape[0]:
        raise DimensionError(f"weighted_sum: {alpha.shape[0]} weights for {H.shape[0]} rows")

    def make_backward(out):
        def run():
            g = out.grad
            if g is None:
                return
            if alpha.requires_grad:
                _accumulate(alpha, H.data @ g, "weighted_sum")
            if H.requires_grad:
                _accumulate(H, np.outer(alpha.data, g), "weighted_sum")
        return run

    return _emit(alpha.data @ H.data, (alpha, H), make_backward, "weighted_sum")


def total(x: Tensor) -> Tensor:
    """Sum of all entries, as a 1-element tensor."""

    def make_backward(out):
        def run():
            if out.grad is not None and x.requires_grad:
                _accumulate(x, np.full(x.shape, out.grad[0], dtype=DTYPE), "total")
        return run

    return _emit(np.array([x.data.sum()], dtype=DTYPE), (x,), make_backward, "total")


def neg_log(probs: Tensor, index: int, floor: float = 1e-12) -> Tensor:
    """-log(max(probs[index], floor)); flat (zero gradient) below the floor."""
    _require_vector(probs, "neg_log probabilities")
    if not 0 <= index < probs.shape[0]:
        raise IndexError(f"class index {index} out of range for {probs.shape[0]} classes")
    p = probs.data[index]

    def make_backward(out):
        def run():
            if out.grad is None or not probs.requires_grad:
                return
            g = np.zeros_like(probs.data)
            if p > floor:
                g[index] = -out.grad[0] / p
            _accumulate(probs, g, "neg_log")
        return run

    return _emit(np.array([-np.log(max(p, floor))], dtype=DTYPE), (probs,), make_backward, "neg_log")


# --- Parameters ---

@dataclass
class Parameter:
    name: str
    value: Tensor
    grad: np.ndarray


class ParameterStore:
    """
    Named trainable tensors with paired gradient accumulators.
    Iteration follows insertion order. Values are only mutated in place by
    the optimizer (and by gradient checking, which restores them).
    """

    def __init__(self):
        self._entries: Dict[str, Parameter] = {}

    def add(self, name: str, value) -> Parameter:
        if name in self._entries:
            raise ValueError(f"Duplicate parameter name: {name}")
        arr = np.ascontiguousarray(np.array(value, dtype=DTYPE))
        tensor = Tensor._wrap(arr, requires_grad=False, tape=None, frozen=False, what=name)
        param = Parameter(name=name, value=tensor, grad=np.zeros_like(arr))
        self._entries[name] = param
        return param

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> Parameter:
        return self._entries[name]

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._entries.values())

    def __len__(self):
        return len(self._entries)

    def names(self) -> List[str]:
        return list(self._entries.keys())

    def value(self, name: str) -> np.ndarray:
        return self._entries[name].value.data

    def num_scalars(self) -> int:
        return int(sum(p.value.data.size for p in self))

    def bind(self, tape: Optional[Tape] = None,
             grads: Optional[Dict[str, np.ndarray]] = None) -> Dict[str, Tensor]:
        """
        Leaf tensors for one forward pass. With a tape, gradients accumulate into
        `grads` (default: the store's own accumulators); without one, the store's
        own untracked value tensors are handed out.
        """
        if tape is None:
            return {p.name: p.value for p in self}
        bound = {}
        for p in self:
            buffer = p.grad if grads is None else grads[p.name]
            bound[p.name] = Tensor._wrap(p.value.data, requires_grad=True, tape=tape,
                                         grad=buffer, frozen=False, what=p.name)
        return bound

    def new_grad_buffers(self) -> Dict[str, np.ndarray]:
        return {p.name: np.zeros_like(p.grad) for p in self}

    def accumulate(self, buffers: Dict[str, np.ndarray]):
        for p in self:
            p.grad += buffers[p.name]

    def zero_grad(self):
        for p in self:
            p.grad.fill(0.0)

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {p.name: p.value.data.copy() for p in self}

    def restore(self, values: Dict[str, np.ndarray]):
        for p in self:
            if values[p.name].shape != p.value.shape:
                raise DimensionError(f"restore: {p.name} has shape {values[p.name].shape}, "
                                     f"expected {p.value.shape}")
            p.value.data[...] = values[p.name]


# --- Gradient checking ---

def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)


@dataclass
class GradientReport:
    errors: Dict[str, float]
    epsilon: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def worst(self) -> Optional[str]:
        if not self.errors:
            return None
        return max(self.errors, key=self.errors.get)

    def passed(self, tolerance: float) -> bool:
        return self.max_error <= tolerance


def _loss_value(loss_fn, store: ParameterStore) -> float:
    loss = loss_fn(store, None)
    value = loss.item()
    if not np.isfinite(value):
        raise NumericError("non-finite loss during gradient check")
    return value


def gradient_check(loss_fn: Callable[[ParameterStore, Optional[Tape]], Tensor],
                   store: ParameterStore, epsilon: float = 1e-5) -> GradientReport:
    """
    Compares tape gradients with central differences (L(θ+ε) - L(θ-ε)) / 2ε for
    every scalar parameter. loss_fn(store, tape) must return a 1-element tensor
    and be deterministic. Parameter values are restored bit for bit.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")

    store.zero_grad()
    tape = Tape()
    loss = loss_fn(store, tape)
    tape.backward(loss)

    errors = {}
    for p in store:
        analytic = p.grad.copy()
        numeric = np.zeros_like(analytic)
        flat = p.value.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + epsilon
            up = _loss_value(loss_fn, store)
            flat[i] = original - epsilon
            down = _loss_value(loss_fn, store)
            flat[i] = original
            num_flat[i] = (up - down) / (2.0 * epsilon)
        errors[p.name] = float(relative_error(analytic, numeric).max())
        logger.debug(f"gradient check {p.name}: max relative error {errors[p.name]:.3e}")

    store.zero_grad()
    return GradientReport(errors=errors, epsilon=epsilon)


def glorot_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniform in ±sqrt(6 / (fan_in + fan_out)); a vector counts as a 1 x d row."""
    if len(shape) == 1:
        fan_out, fan_in = 1, shape[0]
    else:
        fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
