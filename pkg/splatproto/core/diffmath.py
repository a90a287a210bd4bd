"""
Dense-tensor numerics with reverse-mode gradients.

A Tape records every primitive executed on tensors bound to it; `backward`
walks the record in reverse and accumulates gradients into the leaves. Tensors
not bound to any tape are plain constants, so the same network code runs with
or without gradient tracking.

Train runs use single precision tapes; gradient checks use double precision.
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, GroupIndexError, UsageError

ArrayLike = Union["Tensor", np.ndarray, float, int]

TAYLOR_TERMS = 18
SQUARING_THRESHOLD = 0.5


class Tensor:
    """A dense array, optionally bound to a tape for gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "tape", "name")

    def __init__(
        self,
        data,
        tape: Optional["Tape"] = None,
        requires_grad: bool = False,
        name: Optional[str] = None
    ):
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the values."""
        return self.data.reshape(-1)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tracked = ", tracked" if self.requires_grad else ""
        label = f"{self.name}, " if self.name else ""
        return f"Tensor({label}shape={self.shape}{tracked})"


class _Node:
    __slots__ = ("output", "inputs", "vjp")

    def __init__(self, output: Tensor, inputs: Sequence[Tensor], vjp: Callable):
        self.output = output
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of executed primitives.

    Nodes are appended in execution order, which is a topological order of the
    graph. A tape is owned by one thread at a time.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._nodes: List[_Node] = []
        self._leaves: List[Tensor] = []
        self._consumed = False

    def watch(self, array, name: Optional[str] = None) -> Tensor:
        """Register a leaf whose gradient should be computed."""
        data = np.array(array, dtype=self.dtype, copy=True)
        leaf = Tensor(data, tape=self, requires_grad=True, name=name or f"leaf{len(self._leaves)}")
        self._leaves.append(leaf)
        return leaf

    def record(self, output: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> None:
        if self._consumed:
            raise UsageError("cannot record on a tape after backward(); call reset() first")
        self._nodes.append(_Node(output, inputs, vjp))

    @property
    def leaves(self) -> List[Tensor]:
        return list(self._leaves)

    def reset(self) -> None:
        """Clear accumulated gradients so backward may run again."""
        for node in self._nodes:
            node.output.grad = None
        for leaf in self._leaves:
            leaf.grad = None
        self._consumed = False

    def __len__(self):
        return len(self._nodes)


def backward(tape: Tape, loss: Tensor) -> Dict[str, np.ndarray]:
    """Accumulate d(loss)/d(leaf) for every leaf on the tape.

    Returns a mapping from leaf name to gradient; leaves the loss does not
    depend on get zero gradients.
    """
    if loss.tape is not tape:
        raise UsageError("loss was not computed on this tape")
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar root, got shape {loss.shape}")
    if tape._consumed:
        raise UsageError("backward() already ran on this tape; call reset() first")
    tape._consumed = True

    loss.grad = np.ones_like(loss.data, dtype=tape.dtype)
    for node in reversed(tape._nodes):
        g = node.output.grad
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            gi = np.asarray(gi, dtype=tape.dtype).reshape(inp.shape)
            inp.grad = gi.copy() if inp.grad is None else inp.grad + gi

    grads = {}
    for leaf in tape._leaves:
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
        grads[leaf.name] = leaf.grad
    return grads


# ---------------------------------------------------------------------------
# plumbing


def as_tensor(x: ArrayLike) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x))


def _common_tape(inputs: Sequence[Tensor]) -> Optional[Tape]:
    tape = None
    for t in inputs:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif t.tape is not tape:
            raise UsageError("operands are bound to different tapes")
    return tape


def _emit(data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    tape = _common_tape(inputs)
    if tape is None:
        return Tensor(data)
    out = Tensor(np.asarray(data, dtype=tape.dtype), tape=tape)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, vjp)
    return out


def _is_scalar_shape(shape) -> bool:
    return int(np.prod(shape, dtype=np.int64)) == 1


def _check_elementwise(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and not (_is_scalar_shape(a.shape) or _is_scalar_shape(b.shape)):
        raise DimensionError(op, a.shape, b.shape)


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    return np.asarray(g.sum()).reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and structural primitives


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("add", a, b)
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("sub", a, b)
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("mul", a, b)
    return _emit(a.data * b.data, (a, b),
                 lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("div", a, b)
    out = a.data / b.data
    return _emit(out, (a, b),
                 lambda g: (_reduce_to(g / b.data, a.shape),
                            _reduce_to(-g * a.data / (b.data * b.data), b.shape)))


def scale(x: ArrayLike, factor: float) -> Tensor:
    x = as_tensor(x)
    return _emit(x.data * factor, (x,), lambda g: (g * factor,))


def add_n(tensors: Sequence[ArrayLike]) -> Tensor:
    """Sum of same-shape tensors, accumulated left to right."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise UsageError("add_n needs at least one operand")
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise DimensionError("add_n", ts[0].shape, t.shape)
    total = ts[0].data.copy()
    for t in ts[1:]:
        total = total + t.data
    return _emit(total, ts, lambda g: tuple(g for _ in ts))


def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _emit(np.where(mask, x.data, 0), (x,), lambda g: (g * mask,))


def transpose(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError("transpose", x.shape)
    return _emit(x.data.T, (x,), lambda g: (g.T,))


def reshape(x: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    if int(np.prod(shape)) != x.data.size:
        raise DimensionError("reshape", x.shape, shape)
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat_rows(tensors: Sequence[ArrayLike]) -> Tensor:
    """Stack 2-D tensors with equal column counts on top of each other."""
    ts = [as_tensor(t) for t in tensors]
    cols = ts[0].shape[1:]
    for t in ts:
        if t.data.ndim != 2 or t.shape[1:] != cols:
            raise DimensionError("concat_rows", ts[0].shape, t.shape)
    bounds = np.cumsum([t.shape[0] for t in ts])[:-1]
    return _emit(np.concatenate([t.data for t in ts], axis=0), ts,
                 lambda g: tuple(np.split(g, bounds, axis=0)))


def take(x: ArrayLike, index: int) -> Tensor:
    """Scalar element of a vector."""
    x = as_tensor(x)
    if x.data.ndim != 1:
        raise DimensionError("take", x.shape)

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return _emit(x.data[index], (x,), vjp)


def take_column(x: ArrayLike, j: int) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError("take_column", x.shape)

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[:, j] = g
        return (gx,)

    return _emit(x.data[:, j].copy(), (x,), vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product of a 2-D `a` with a 2-D or 1-D `b`."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul", a.shape, b.shape)

    def vjp(g):
        if b.data.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g @ b.data.T, a.data.T @ g

    return _emit(a.data @ b.data, (a, b), vjp)


def linear(x: ArrayLike, W: ArrayLike, b: Optional[ArrayLike] = None) -> Tensor:
    """Per-point affine map y = W x + b.

    `x` is either a vector of width `in` or a channel-major `in x N` matrix of
    point vectors; `W` is `out x in`; `b` is a length-`out` vector, a scalar,
    or None.
    """
    x, W = as_tensor(x), as_tensor(W)
    if W.data.ndim != 2 or x.data.ndim not in (1, 2) or W.shape[1] != x.shape[0]:
        raise DimensionError("linear", x.shape, W.shape)
    y = W.data @ x.data
    inputs = [x, W]
    if b is not None:
        b = as_tensor(b)
        if b.data.ndim == 0:
            y = y + b.data
        elif b.shape == (W.shape[0],):
            y = y + (b.data[:, None] if x.data.ndim == 2 else b.data)
        else:
            raise DimensionError("linear bias", b.shape, (W.shape[0],))
        inputs.append(b)

    def vjp(g):
        if x.data.ndim == 2:
            grads = [W.data.T @ g, g @ x.data.T]
            gb = g.sum(axis=1)
        else:
            grads = [W.data.T @ g, np.outer(g, x.data)]
            gb = g
        if b is not None:
            grads.append(np.asarray(gb.sum()) if b.data.ndim == 0 else gb)
        return tuple(grads)

    return _emit(y, inputs, vjp)


# ---------------------------------------------------------------------------
# reductions


def mean_pool(x: ArrayLike, axis: int) -> Tensor:
    x = as_tensor(x)
    if not -x.data.ndim <= axis < x.data.ndim:
        raise DimensionError("mean_pool", x.shape)
    n = x.shape[axis]

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, x.shape),)

    return _emit(x.data.mean(axis=axis), (x,), vjp)


def l2_norm(x: ArrayLike) -> Tensor:
    """Euclidean norm of all entries; the gradient at 0 is taken as 0."""
    x = as_tensor(x)
    norm = np.sqrt(np.sum(x.data * x.data))

    def vjp(g):
        if norm == 0:
            return (np.zeros_like(x.data),)
        return (g * x.data / norm,)

    return _emit(norm, (x,), vjp)


def column_norms(x: ArrayLike) -> Tensor:
    """Euclidean norm of every column of a 2-D tensor."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError("column_norms", x.shape)
    norms = np.sqrt(np.sum(x.data * x.data, axis=0))

    def vjp(g):
        safe = np.where(norms > 0, norms, 1)
        return (np.where(norms > 0, g / safe, 0)[None, :] * x.data,)

    return _emit(norms, (x,), vjp)


def masked_max_pool(features: ArrayLike, group_id, n_groups: int) -> Tensor:
    """Per-channel max over the members of each group.

    `features` is C x N, `group_id` assigns each of the N columns to a group.
    Empty groups produce zero columns. The gradient of each (channel, group)
    output goes to its winning member; ties go to the lowest member index.
    """
    features = as_tensor(features)
    group_id = np.asarray(group_id, dtype=np.int64)
    if features.data.ndim != 2 or group_id.shape != (features.shape[1],):
        raise DimensionError("masked_max_pool", features.shape, group_id.shape)
    if group_id.size and (group_id.min() < 0 or group_id.max() >= n_groups):
        bad = int(group_id[(group_id < 0) | (group_id >= n_groups)][0])
        raise GroupIndexError(f"group id {bad} outside [0, {n_groups})")

    C, N = features.shape
    out = np.zeros((C, n_groups), dtype=features.data.dtype)
    if N == 0:
        return _emit(out, (features,), lambda g: (np.zeros((C, 0)),))

    perm = np.argsort(group_id, kind="stable")
    sorted_ids = group_id[perm]
    sorted_vals = features.data[:, perm]
    starts = np.flatnonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])
    occupied = sorted_ids[starts]

    maxima = np.maximum.reduceat(sorted_vals, starts, axis=1)
    out[:, occupied] = maxima

    # first sorted position reaching the max inside each segment
    segment_of = np.cumsum(np.r_[False, sorted_ids[1:] != sorted_ids[:-1]])
    positions = np.broadcast_to(np.arange(N), (C, N))
    hits = np.where(sorted_vals == maxima[:, segment_of], positions, N)
    winners = perm[np.minimum(np.minimum.reduceat(hits, starts, axis=1), N - 1)]

    def vjp(g):
        gx = np.zeros((C, N), dtype=g.dtype)
        rows = np.repeat(np.arange(C)[:, None], len(occupied), axis=1)
        gx[rows, winners] = g[:, occupied]
        return (gx,)

    return _emit(out, (features,), vjp)


# ---------------------------------------------------------------------------
# losses and distributions


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max()
    e = np.exp(shifted)
    return e / e.sum()


def softmax_cross_entropy(logits: ArrayLike, label: int) -> Tensor:
    """-log softmax(logits)[label], stabilized by max subtraction."""
    logits = as_tensor(logits)
    if logits.data.ndim != 1:
        raise DimensionError("softmax_cross_entropy", logits.shape)
    if not 0 <= label < logits.shape[0]:
        raise DomainError(f"label {label} outside [0, {logits.shape[0]})")
    shifted = logits.data - logits.data.max()
    lse = np.log(np.exp(shifted).sum())
    loss = lse - shifted[label]

    def vjp(g):
        probs = np.exp(shifted - lse)
        probs[label] -= 1.0
        return (g * probs,)

    return _emit(loss, (logits,), vjp)


def temp_softmax(a: ArrayLike, tau: float) -> Tensor:
    """Softmax of relu(a) / tau."""
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    a = as_tensor(a)
    active = a.data > 0
    p = _softmax(np.where(active, a.data, 0) / tau)

    def vjp(g):
        gr = p * (g - np.dot(g, p))
        return (gr * active / tau,)

    return _emit(p, (a,), vjp)


def kl_divergence(p: ArrayLike, q: ArrayLike) -> Tensor:
    """sum_v p_v log(p_v / q_v) with 0 log 0 = 0."""
    p, q = as_tensor(p), as_tensor(q)
    if p.shape != q.shape:
        raise DimensionError("kl_divergence", p.shape, q.shape)
    if (p.data < 0).any() or (q.data < 0).any():
        raise DomainError("kl_divergence needs non-negative distributions")
    support = p.data > 0
    safe_p = np.where(support, p.data, 1)
    safe_q = np.where(q.data > 0, q.data, 1)
    log_ratio = np.where(support, np.log(safe_p) - np.log(safe_q), 0)
    value = np.sum(p.data * log_ratio)

    def vjp(g):
        gp = np.where(support, g * (log_ratio + 1), 0)
        gq = np.where(support, -g * p.data / safe_q, 0)
        return gp, gq

    return _emit(value, (p, q), vjp)


# ---------------------------------------------------------------------------
# matrix exponential


def matrix_exp_skew(P: ArrayLike, terms: int = TAYLOR_TERMS) -> Tensor:
    """U = exp(P - P^T) by scaling and squaring.

    A is scaled by 2^-s until its 1-norm is at most 0.5, an 18-term Taylor
    series is applied, and the result is squared s times. Every step is a
    recorded primitive, so gradients reach P by composition.
    """
    P = as_tensor(P)
    if P.data.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionError("matrix_exp_skew", P.shape)
    n = P.shape[0]
    A = sub(P, transpose(P))

    norm1 = float(np.abs(A.data).sum(axis=0).max()) if n else 0.0
    s = 0
    while norm1 / (2 ** s) > SQUARING_THRESHOLD:
        s += 1
    A_s = scale(A, 2.0 ** -s) if s else A

    eye = np.eye(n, dtype=P.data.dtype)
    term: ArrayLike = eye
    series: ArrayLike = eye
    for k in range(1, terms + 1):
        term = scale(matmul(term, A_s), 1.0 / k)
        series = add(series, term)
    U = as_tensor(series)
    for _ in range(s):
        U = matmul(U, U)
    return U


def orthogonality_error(U: np.ndarray) -> float:
    """max |U^T U - I| entry."""
    U = np.asarray(U, dtype=np.float64)
    return float(np.abs(U.T @ U - np.eye(U.shape[0])).max())
