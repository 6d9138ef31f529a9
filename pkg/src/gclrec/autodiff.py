"""Reverse-mode automatic differentiation over dense 2-D float64 tensors.

Primitive applications are recorded on an explicit tape; `backward` replays
the tape once, in reverse, accumulating vector-Jacobian products into the
`grad` buffers of parameter leaves. Tensors are immutable after construction
except for their grad buffer (the optimizer rebinds `data` wholesale), so a
tape is safe to replay while other code reads the same tensors. One tape
belongs to one training thread; independent engine instances share nothing.

Numeric-stability rules baked into the primitives: `row_softmax` subtracts
the row max, `log` clamps its input at 1e-30 (and rejects negatives). Any
non-finite value, on construction or as an op output, is a hard error.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError, TapeReuseError

LOG_FLOOR = 1e-30

PRIMITIVES = (
    "matmul",
    "transpose",
    "add",
    "subtract",
    "elementwise_multiply",
    "scalar_multiply",
    "tanh",
    "relu",
    "row_softmax",
    "log",
    "exp",
    "concat_columns",
    "row_select_by_mask",
    "mean_rows",
    "squared_l2",
    "cosine_similarity_rows",
)


class Tensor:
    """Dense 2-D float64 value with optional gradient tracking.

    `gather_rows`, when set, marks the tensor as a one-hot row-gather matrix
    (each row has a single 1.0); `matmul` uses it as a sparse-aware fast path.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "gather_rows")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"tensor must be 2-D, got shape {arr.shape}")
        if arr.size and not np.isfinite(arr).all():
            raise NumericError(f"non-finite values in tensor {name or '<anonymous>'}")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self.gather_rows: np.ndarray | None = None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"


def constant(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def scalar(value: float, name: str = "") -> Tensor:
    return Tensor([[float(value)]], name=name)


def zeros(rows: int, cols: int, name: str = "") -> Tensor:
    return Tensor(np.zeros((rows, cols)), name=name)


def ones(rows: int, cols: int, name: str = "") -> Tensor:
    return Tensor(np.ones((rows, cols)), name=name)


def eye(n: int, name: str = "") -> Tensor:
    return Tensor(np.eye(n), name=name)


def xavier_uniform(rows: int, cols: int, rng: np.random.Generator, name: str = "") -> Tensor:
    limit = math.sqrt(6.0 / (rows + cols))
    return parameter(rng.uniform(-limit, limit, size=(rows, cols)), name=name)


def gather_matrix(indices: Sequence[int], width: int, name: str = "") -> Tensor:
    """One-hot row-selection matrix: matmul(gather, X) == X[indices]."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= width):
        raise ContractError(f"gather index out of range [0, {width}) in {name or 'gather'}")
    data = np.zeros((len(idx), width))
    data[np.arange(len(idx)), idx] = 1.0
    t = Tensor(data, name=name)
    t.gather_rows = idx
    return t


class Record:
    """One recorded primitive application."""

    __slots__ = ("op", "inputs", "output", "ctx")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, ctx: dict):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.ctx = ctx


class Tape:
    """Ordered computation record for one forward pass / one backward replay."""

    def __init__(self):
        self.records: list[Record] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise ContractError("tape context exited out of order")


_TAPE_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _require_arity(op: str, inputs: tuple[Tensor, ...], n: int) -> None:
    if len(inputs) != n:
        raise ContractError(f"{op} takes {n} input(s), got {len(inputs)}")


def _broadcast_out_shape(op: str, a: np.ndarray, b: np.ndarray) -> tuple[int, int]:
    rows = max(a.shape[0], b.shape[0])
    cols = max(a.shape[1], b.shape[1])
    for shp in (a.shape, b.shape):
        if (shp[0] not in (rows, 1)) or (shp[1] not in (cols, 1)):
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable")
    return rows, cols


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _forward(op: str, inputs: tuple[Tensor, ...], ctx: dict) -> np.ndarray:
    if op == "matmul":
        _require_arity(op, inputs, 2)
        a, b = inputs
        if a.cols != b.rows:
            raise ShapeError(f"matmul: {a.shape} x {b.shape}")
        if a.gather_rows is not None and not a.requires_grad:
            ctx["gather"] = a.gather_rows
            return b.data[a.gather_rows]
        return a.data @ b.data
    if op == "transpose":
        _require_arity(op, inputs, 1)
        return inputs[0].data.T.copy()
    if op in ("add", "subtract", "elementwise_multiply"):
        _require_arity(op, inputs, 2)
        a, b = inputs
        _broadcast_out_shape(op, a.data, b.data)
        if op == "add":
            return a.data + b.data
        if op == "subtract":
            return a.data - b.data
        return a.data * b.data
    if op == "scalar_multiply":
        _require_arity(op, inputs, 1)
        return ctx["scalar"] * inputs[0].data
    if op == "tanh":
        _require_arity(op, inputs, 1)
        out = np.tanh(inputs[0].data)
        ctx["out"] = out
        return out
    if op == "relu":
        _require_arity(op, inputs, 1)
        return np.maximum(inputs[0].data, 0.0)
    if op == "row_softmax":
        _require_arity(op, inputs, 1)
        x = inputs[0].data
        if x.shape[1] == 0:
            raise ShapeError("row_softmax: zero-width input")
        shifted = x - x.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=1, keepdims=True)
        ctx["out"] = out
        return out
    if op == "log":
        _require_arity(op, inputs, 1)
        x = inputs[0].data
        if x.size and x.min() < 0.0:
            raise NumericError("log: negative input")
        clamped = np.maximum(x, LOG_FLOOR)
        ctx["clamped"] = clamped
        ctx["mask"] = x >= LOG_FLOOR
        return np.log(clamped)
    if op == "exp":
        _require_arity(op, inputs, 1)
        with np.errstate(over="ignore"):
            out = np.exp(inputs[0].data)
        ctx["out"] = out
        return out
    if op == "concat_columns":
        _require_arity(op, inputs, 2)
        a, b = inputs
        if a.rows != b.rows:
            raise ShapeError(f"concat_columns: {a.shape} vs {b.shape}")
        ctx["split"] = a.cols
        return np.hstack([a.data, b.data])
    if op == "row_select_by_mask":
        _require_arity(op, inputs, 1)
        mask = np.asarray(ctx["mask"])
        if mask.ndim != 1 or mask.shape[0] != inputs[0].rows:
            raise ShapeError(
                f"row_select_by_mask: mask length {mask.shape} vs {inputs[0].shape}"
            )
        idx = np.flatnonzero(mask)
        ctx["idx"] = idx
        return inputs[0].data[idx].copy()
    if op == "mean_rows":
        _require_arity(op, inputs, 1)
        if inputs[0].rows == 0:
            raise ShapeError("mean_rows: empty input")
        return inputs[0].data.mean(axis=0, keepdims=True)
    if op == "squared_l2":
        _require_arity(op, inputs, 1)
        x = inputs[0].data
        return np.array([[float((x * x).sum())]])
    if op == "cosine_similarity_rows":
        _require_arity(op, inputs, 2)
        a, b = inputs
        if a.shape != b.shape:
            raise ShapeError(f"cosine_similarity_rows: {a.shape} vs {b.shape}")
        na = np.maximum(np.linalg.norm(a.data, axis=1, keepdims=True), LOG_FLOOR)
        nb = np.maximum(np.linalg.norm(b.data, axis=1, keepdims=True), LOG_FLOOR)
        ctx["na"], ctx["nb"] = na, nb
        out = (a.data * b.data).sum(axis=1, keepdims=True) / (na * nb)
        ctx["out"] = out
        return out
    raise ContractError(f"unknown primitive {op!r}")


def _vjp(rec: Record, g: np.ndarray) -> tuple[np.ndarray | None, ...]:
    op, inputs, ctx = rec.op, rec.inputs, rec.ctx
    if op == "matmul":
        a, b = inputs
        if "gather" in ctx:
            gb = np.zeros_like(b.data)
            np.add.at(gb, ctx["gather"], g)
            return None, gb
        return g @ b.data.T, a.data.T @ g
    if op == "transpose":
        return (g.T.copy(),)
    if op == "add":
        a, b = inputs
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    if op == "subtract":
        a, b = inputs
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    if op == "elementwise_multiply":
        a, b = inputs
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    if op == "scalar_multiply":
        return (ctx["scalar"] * g,)
    if op == "tanh":
        y = ctx["out"]
        return (g * (1.0 - y * y),)
    if op == "relu":
        return (g * (inputs[0].data > 0.0),)
    if op == "row_softmax":
        y = ctx["out"]
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)
    if op == "log":
        return (g / ctx["clamped"] * ctx["mask"],)
    if op == "exp":
        return (g * ctx["out"],)
    if op == "concat_columns":
        k = ctx["split"]
        return g[:, :k].copy(), g[:, k:].copy()
    if op == "row_select_by_mask":
        gx = np.zeros_like(inputs[0].data)
        gx[ctx["idx"]] = g
        return (gx,)
    if op == "mean_rows":
        m = inputs[0].rows
        return (np.broadcast_to(g / m, inputs[0].shape).copy(),)
    if op == "squared_l2":
        return (2.0 * inputs[0].data * g[0, 0],)
    if op == "cosine_similarity_rows":
        a, b = inputs
        na, nb, cos = ctx["na"], ctx["nb"], ctx["out"]
        ga = g * (b.data / (na * nb) - cos * a.data / (na * na))
        gb = g * (a.data / (na * nb) - cos * b.data / (nb * nb))
        return ga, gb
    raise ContractError(f"unknown primitive {op!r}")  # pragma: no cover


def apply_primitive(op_id: str, inputs: Iterable[Tensor], **attrs) -> Tensor:
    """Apply a primitive; record it on the active tape when grads are needed."""
    if op_id not in PRIMITIVES:
        raise ContractError(f"unknown primitive {op_id!r}")
    inputs = tuple(inputs)
    for t in inputs:
        if not isinstance(t, Tensor):
            raise ContractError(f"{op_id}: inputs must be Tensors, got {type(t).__name__}")
    ctx = dict(attrs)
    out_data = _forward(op_id, inputs, ctx)
    if out_data.size and not np.isfinite(out_data).all():
        raise NumericError(f"non-finite output of {op_id}")
    out = Tensor.__new__(Tensor)
    out_data = np.ascontiguousarray(out_data, dtype=np.float64)
    out_data.setflags(write=False)
    out.data = out_data
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = None
    out.name = ""
    out.gather_rows = None
    if out.requires_grad:
        tape = active_tape()
        if tape is not None:
            tape.records.append(Record(op_id, inputs, out, ctx))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate grad buffers of every requires_grad leaf reachable from `loss`.

    Leaves that took part in the tape but do not influence the loss get a zero
    grad buffer. The tape is consumed; replaying it raises TapeReuseError.
    """
    if loss.data.shape != (1, 1):
        raise ContractError(f"backward: loss must be 1x1, got {loss.data.shape}")
    if tape.consumed:
        raise TapeReuseError("computation record already consumed")
    tape.consumed = True

    produced = {id(r.output) for r in tape.records}
    for rec in tape.records:
        for t in rec.inputs:
            if t.requires_grad and id(t) not in produced and t.grad is None:
                t.grad = np.zeros_like(t.data)

    pending: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for rec in reversed(tape.records):
        g = pending.pop(id(rec.output), None)
        if g is None:
            continue
        for t, gi in zip(rec.inputs, _vjp(rec, g)):
            if gi is None or not t.requires_grad:
                continue
            if id(t) in produced:
                acc = pending.get(id(t))
                pending[id(t)] = gi if acc is None else acc + gi
            else:
                t.grad = t.grad + gi


# -- convenience wrappers -------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("matmul", (a, b))


def transpose(a: Tensor) -> Tensor:
    return apply_primitive("transpose", (a,))


def add(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("add", (a, b))


def subtract(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("subtract", (a, b))


def multiply(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("elementwise_multiply", (a, b))


def scale(a: Tensor, c: float) -> Tensor:
    return apply_primitive("scalar_multiply", (a,), scalar=float(c))


def tanh(a: Tensor) -> Tensor:
    return apply_primitive("tanh", (a,))


def relu(a: Tensor) -> Tensor:
    return apply_primitive("relu", (a,))


def row_softmax(a: Tensor) -> Tensor:
    return apply_primitive("row_softmax", (a,))


def log(a: Tensor) -> Tensor:
    return apply_primitive("log", (a,))


def exp(a: Tensor) -> Tensor:
    return apply_primitive("exp", (a,))


def concat_columns(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("concat_columns", (a, b))


def row_select(a: Tensor, mask) -> Tensor:
    return apply_primitive("row_select_by_mask", (a,), mask=np.asarray(mask))


def mean_rows(a: Tensor) -> Tensor:
    return apply_primitive("mean_rows", (a,))


def squared_l2(a: Tensor) -> Tensor:
    return apply_primitive("squared_l2", (a,))


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("cosine_similarity_rows", (a, b))


# -- composites built from primitives -------------------------------------

def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    return transpose(concat_columns(transpose(a), transpose(b)))


def row_sums(a: Tensor) -> Tensor:
    return matmul(a, ones(a.cols, 1))


def sum_all(a: Tensor) -> Tensor:
    return matmul(ones(1, a.rows), row_sums(a))


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def normalize_rows(a: Tensor) -> Tensor:
    """Scale each row to unit L2 norm (rsqrt via exp(-0.5 log))."""
    sq = row_sums(multiply(a, a))
    inv = exp(scale(log(sq), -0.5))
    return multiply(a, inv)


def column(a: Tensor, j: int) -> Tensor:
    basis = np.zeros((a.cols, 1))
    basis[j, 0] = 1.0
    return matmul(a, constant(basis))
