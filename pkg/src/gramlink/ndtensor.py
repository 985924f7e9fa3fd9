"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their inputs requires a gradient. Outside a tape nothing is recorded,
which is how inference runs.

>>> x = Tensor([[3.0]], requires_grad=True)
>>> with Tape() as tape:
...     y = sum_all(mul(x, x))
...     tape.backward(y)
>>> float(x.grad[0, 0])
6.0
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .errors import IndexOutOfRange, InvalidRate, MaskShapeMismatch, ShapeMismatch

CHECKPOINT_FORMAT = "gramlink.tensors"
CHECKPOINT_VERSION = 1

_GELU_C = math.sqrt(2.0 / math.pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "aux")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        # op-specific side outputs, e.g. attention weights
        self.aux: dict | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}{label}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _raise_item(t):
    raise ShapeMismatch(f"item() needs a single element, got shape {list(t.shape)}")


class Tape:
    """Ordered record of primitive operations.

    ``backward`` walks the record in reverse exactly once, accumulating into
    ``.grad`` of every input that requires it.
    """

    _local = threading.local()

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._consumed = False

    @classmethod
    def current(cls) -> "Tape | None":
        stack = getattr(cls._local, "stack", None)
        return stack[-1] if stack else None

    def __enter__(self) -> "Tape":
        if not hasattr(Tape._local, "stack"):
            Tape._local.stack = []
        Tape._local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._local.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self.records.append((out, inputs, backward))

    def backward(self, loss: Tensor, grad: np.ndarray | None = None) -> None:
        if self._consumed:
            raise RuntimeError("tape already consumed by a backward pass")
        self._consumed = True
        loss.grad = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=np.float64)
        for out, inputs, fn in reversed(self.records):
            if out.grad is None:
                continue
            for inp, g in zip(inputs, fn(out.grad)):
                if g is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    inp.grad = np.array(g, dtype=np.float64, copy=True).reshape(inp.shape)
                else:
                    inp.grad += g


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    tape = Tape.current()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward)
    return out


def _check_2d(t: Tensor, what: str) -> None:
    if t.data.ndim != 2:
        raise ShapeMismatch(f"{what} expects a matrix, got shape {list(t.shape)}")


# ---------------------------------------------------------------- primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_2d(a, "matmul")
    _check_2d(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner dimensions differ: {list(a.shape)} @ {list(b.shape)}")
    out = Tensor(a.data @ b.data)
    return _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a vector added to every row of ``a``."""
    if a.shape == b.shape:
        return _record(Tensor(a.data + b.data), (a, b), lambda g: (g, g))
    if b.data.ndim == 1 and a.data.ndim == 2 and a.shape[1] == b.shape[0]:
        return _record(Tensor(a.data + b.data), (a, b), lambda g: (g, g.sum(axis=0)))
    raise ShapeMismatch(f"add shapes {list(a.shape)} and {list(b.shape)}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul shapes {list(a.shape)} and {list(b.shape)}")
    out = Tensor(a.data * b.data)
    return _record(out, (a, b), lambda g: (g * b.data, g * a.data))


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(Tensor(a.data * c), (a,), lambda g: (g * c,))


def transpose(a: Tensor) -> Tensor:
    _check_2d(a, "transpose")
    return _record(Tensor(a.data.T), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.data.size:
        raise ShapeMismatch(f"cannot reshape {list(a.shape)} to {list(shape)}")
    return _record(Tensor(a.data.reshape(shape)), (a,), lambda g: (g.reshape(a.shape),))


def softmax_rows(a: Tensor) -> Tensor:
    _check_2d(a, "softmax_rows")
    s = a.data - a.data.max(axis=1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _record(Tensor(p), (a,), backward)


def mean_rows(a: Tensor) -> Tensor:
    """Average of the rows of a ``p x q`` matrix, giving a length-``q`` vector."""
    _check_2d(a, "mean_rows")
    p = a.shape[0]
    return _record(
        Tensor(a.data.mean(axis=0)),
        (a,),
        lambda g: (np.broadcast_to(g / p, a.shape),),
    )


def sum_all(a: Tensor) -> Tensor:
    return _record(Tensor(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape),))


def gelu(a: Tensor) -> Tensor:
    x = a.data
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _record(Tensor(out), (a,), backward)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    _check_2d(a, "layer_norm")
    if gain.shape != (a.shape[1],) or bias.shape != (a.shape[1],):
        raise ShapeMismatch("layer_norm gain/bias must match the row width")
    x = a.data
    mu = x.mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(x.var(axis=1, keepdims=True) + eps)
    xhat = (x - mu) * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _record(Tensor(out), (a, gain, bias), backward)


def dropout(a: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-rate)`` at train time."""
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _record(Tensor(a.data * keep), (a,), lambda g: (g * keep,))


def gather_rows(table: Tensor, index: Sequence[int] | np.ndarray) -> Tensor:
    _check_2d(table, "gather_rows")
    idx = np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexOutOfRange(f"row index outside [0, {table.shape[0]})")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _record(Tensor(table.data[idx]), (table,), backward)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    rows = tuple(rows)
    if not rows or any(r.data.ndim != 1 or r.shape != rows[0].shape for r in rows):
        raise ShapeMismatch("stack_rows needs equal-length vectors")
    return _record(
        Tensor(np.stack([r.data for r in rows])),
        rows,
        lambda g: tuple(g[i] for i in range(len(rows))),
    )


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(parts)
    for p in parts:
        _check_2d(p, "concat_cols")
    if len({p.shape[0] for p in parts}) != 1:
        raise ShapeMismatch("concat_cols needs equal row counts")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    return _record(
        out,
        parts,
        lambda g: tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts))),
    )


def slice_vec(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 1 or not 0 <= start <= stop <= a.shape[0]:
        raise ShapeMismatch(f"cannot slice [{start}:{stop}] from shape {list(a.shape)}")

    def backward(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _record(Tensor(a.data[start:stop]), (a,), backward)


def cross_entropy_label_smoothed(logits: Tensor, targets, epsilon: float = 0.0) -> Tensor:
    """Mean over the batch of ``-sum_c q_c log softmax(logits)_c``.

    ``q`` puts ``1 - epsilon`` on the target class and spreads ``epsilon``
    uniformly over all ``C`` classes.
    """
    _check_2d(logits, "cross_entropy_label_smoothed")
    if not 0.0 <= epsilon < 1.0:
        raise InvalidRate(f"label smoothing must be in [0, 1), got {epsilon}")
    b, c = logits.shape
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.shape[0] != b:
        raise ShapeMismatch(f"{t.shape[0]} targets for {b} rows")
    if t.size and (t.min() < 0 or t.max() >= c):
        raise IndexOutOfRange(f"target outside [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    q = np.full((b, c), epsilon / c)
    q[np.arange(b), t] += 1.0 - epsilon
    loss = -(q * logp).sum() / b
    p = np.exp(logp)
    return _record(Tensor(loss), (logits,), lambda g: (g * (p - q) / b,))


def relation_masked_attention(
    q: Tensor,
    v: Tensor,
    r_a: Tensor,
    r_c: Tensor,
    mask_a: np.ndarray,
    mask_c: np.ndarray,
    mode: int,
    scale_factor: float,
) -> Tensor:
    """Fused attention head over the adjoin and compositional views.

    Both views share queries and keys (``q + r``); their masked weight
    matrices are summed and applied to ``v``.
    """
    _check_2d(q, "relation_masked_attention")
    _check_2d(v, "relation_masked_attention")
    m = q.shape[0]
    if v.shape[0] != m or r_a.shape != (q.shape[1],) or r_c.shape != (q.shape[1],):
        raise ShapeMismatch("attention inputs disagree on node count or head width")
    ma = np.ascontiguousarray(mask_a, dtype=np.float64)
    mc = np.ascontiguousarray(mask_c, dtype=np.float64)
    if ma.shape != (m, m) or mc.shape != (m, m):
        raise MaskShapeMismatch(f"masks must be {m}x{m}, got {ma.shape} and {mc.shape}")
    if not (np.all(np.diagonal(ma) != 0) and np.all(np.diagonal(mc) != 0)):
        raise MaskShapeMismatch("mask diagonals must be nonzero")
    impl = kernels.get()
    out, w, pa, pc = impl.masked_attention_forward(
        q.data, v.data, r_a.data, r_c.data, ma, mc, int(mode), float(scale_factor)
    )

    def backward(g):
        return impl.masked_attention_backward(
            q.data, v.data, r_a.data, r_c.data, ma, mc, int(mode), float(scale_factor),
            w, pa, pc, np.ascontiguousarray(g),
        )

    result = Tensor(out)
    result.aux = {"weights": w}
    return _record(result, (q, v, r_a, r_c), backward)


def tail_scores(q: Tensor, table: Tensor, fn: int) -> Tensor:
    """Score every query row against every table row (``kernels.TRANSE``/``DISTMULT``)."""
    _check_2d(q, "tail_scores")
    _check_2d(table, "tail_scores")
    if q.shape[1] != table.shape[1]:
        raise ShapeMismatch(f"query width {q.shape[1]} vs table width {table.shape[1]}")
    impl = kernels.get()
    out = impl.tail_scores_forward(q.data, table.data, int(fn))

    def backward(g):
        return impl.tail_scores_backward(q.data, table.data, out, np.ascontiguousarray(g), int(fn))

    return _record(Tensor(out), (q, table), backward)


# ---------------------------------------------------------- gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Iterable[Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients against central differences.

    The relative error of one entry is ``|ad - fd| / max(|ad|, |fd|, floor)``;
    the floor keeps entries whose true gradient is ~0 from dividing rounding
    noise (about ``eps * |f| / h``, 1e-10 for a loss near 10) by noise. ``max_entries`` samples that many coordinates per parameter.
    """
    if not isinstance(params, Mapping):
        params = {f"p{i}": p for i, p in enumerate(params)}
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    analytic = {
        k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in params.items()
    }
    rng = np.random.default_rng(seed)
    report = GradCheckReport(max_rel_error=0.0, tol=tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            coords = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            ad = analytic[name].reshape(-1)[i]
            err = abs(ad - fd) / max(abs(ad), abs(fd), floor)
            worst = max(worst, err)
        report.per_param[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    for p in params.values():
        p.zero_grad()
    return report


# ----------------------------------------------------------------- checkpoints


def tensors_to_json(tensors: Mapping[str, Tensor | np.ndarray], meta: Mapping | None = None) -> str:
    """Serialize named tensors; float repr round-trips every value bit-exactly."""
    body = {}
    for name in sorted(tensors):
        arr = tensors[name].data if isinstance(tensors[name], Tensor) else np.asarray(tensors[name])
        body[name] = {"shape": list(arr.shape), "data": [float(x) for x in arr.reshape(-1)]}
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "meta": dict(meta or {}), "tensors": body}
    return json.dumps(doc, separators=(",", ":")) + "\n"


def tensors_from_json(text: str) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(text)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a tensor checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    out = {}
    for name, entry in doc["tensors"].items():
        shape = tuple(entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != int(np.prod(shape, dtype=np.int64)):
            raise ShapeMismatch(f"tensor {name!r}: {data.size} values for shape {list(shape)}")
        out[name] = data.reshape(shape)
    return out, doc.get("meta", {})


def save_tensors(path, tensors, meta=None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(tensors_to_json(tensors, meta))


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, encoding="utf-8") as fh:
        return tensors_from_json(fh.read())
