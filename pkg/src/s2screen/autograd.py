"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy array together with an optional gradient slot.
Primitives record an implicit computation graph as they run; calling
:func:`backward` on a scalar result walks the graph once, in reverse
topological order, and accumulates exact analytic gradients into every
``requires_grad`` leaf.  Everything is float64 and single-threaded, which
keeps finite-difference checks sharp and runs bit-reproducible.

The module also provides the Adam optimizer used by both training stages,
a finite-difference gradient checker, and the binary checkpoint format for
named parameter collections.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "constant",
    "parameter",
    "matmul",
    "transpose",
    "add",
    "sub",
    "add_scalar",
    "elementwise_mul",
    "scalar_scale",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "clip",
    "softmax_rows",
    "layer_norm_rows",
    "mean_rows",
    "masked_mean_rows",
    "concat_cols",
    "concat_rows",
    "row_l2_normalize",
    "gather_rows",
    "sum_all",
    "mean_all",
    "backward",
    "zero_grads",
    "AdamState",
    "adam_step",
    "GradientCheckReport",
    "gradient_check",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]

LAYER_NORM_EPS = 1e-5
L2_NORM_EPS = 1e-12


class Tensor:
    """Dense real array with an optional gradient slot.

    ``values`` is always a float64 numpy array (0-d scalars allowed).
    ``grad`` stays ``None`` until a backward pass writes into it.  Interior
    nodes carry a backward rule that maps the output gradient to per-parent
    gradients; leaves have none.
    """

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False,
                 parents: tuple = (), backward_fn=None):
        arr = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite")
        self.values = arr
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in parents)
        self.grad = None
        # Only grad-requiring subgraphs keep their history alive.
        self._parents = parents if self.requires_grad else ()
        self._backward = backward_fn if self.requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(values, requires_grad: bool = False) -> Tensor:
    return Tensor(values, requires_grad=requires_grad)


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


def _node(values, parents, backward_fn) -> Tensor:
    return Tensor(values, parents=tuple(parents), backward_fn=backward_fn)


# ---------------------------------------------------------------------------
# primitives
#
# Each backward rule receives the gradient at the output plus the output
# node, and returns one gradient array (or None) per parent.
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ValueError("matmul expects 2-d operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bwd(g, out):
        ga = g @ b.values.T if a.requires_grad else None
        gb = a.values.T @ g if b.requires_grad else None
        return ga, gb

    return _node(a.values @ b.values, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ValueError("transpose expects a 2-d operand")
    return _node(a.values.T, (a,), lambda g, out: (g.T,))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a 1-d row bias against 2-d ``a``."""
    if a.shape == b.shape:
        return _node(a.values + b.values, (a, b), lambda g, out: (g, g))
    if a.values.ndim == 2 and b.values.ndim == 1 and a.shape[1] == b.shape[0]:
        return _node(a.values + b.values, (a, b),
                     lambda g, out: (g, g.sum(axis=0)))
    raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scalar_scale(b, -1.0))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _node(a.values + float(c), (a,), lambda g, out: (g,))


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product.  Besides same-shape operands, ``b`` may broadcast
    against 2-d ``a`` as a column (R, 1), a row (1, d), or a 1-d row (d,)."""
    if a.shape == b.shape:
        def bwd(g, out):
            ga = g * b.values if a.requires_grad else None
            gb = g * a.values if b.requires_grad else None
            return ga, gb
        return _node(a.values * b.values, (a, b), bwd)
    if a.values.ndim == 2:
        r, d = a.shape
        if b.shape == (r, 1):
            def bwd(g, out):
                ga = g * b.values if a.requires_grad else None
                gb = ((g * a.values).sum(axis=1, keepdims=True)
                      if b.requires_grad else None)
                return ga, gb
            return _node(a.values * b.values, (a, b), bwd)
        if b.shape == (1, d) or b.shape == (d,):
            def bwd(g, out):
                ga = g * b.values if a.requires_grad else None
                gb = None
                if b.requires_grad:
                    gb = (g * a.values).sum(axis=0)
                    if b.values.ndim == 2:
                        gb = gb.reshape(1, d)
                return ga, gb
            return _node(a.values * b.values, (a, b), bwd)
    raise ValueError(f"elementwise_mul shape mismatch: {a.shape} * {b.shape}")


def scalar_scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(a.values * c, (a,), lambda g, out: (g * c,))


def relu(a: Tensor) -> Tensor:
    return _node(np.maximum(a.values, 0.0), (a,),
                 lambda g, out: (g * (a.values > 0.0),))


def sigmoid(a: Tensor) -> Tensor:
    # Evaluate via |x| so exp never overflows.
    e = np.exp(-np.abs(a.values))
    out_values = np.where(a.values >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bwd(g, out):
        y = out.values
        return (g * y * (1.0 - y),)

    return _node(out_values, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    return _node(np.exp(a.values), (a,),
                 lambda g, out: (g * out.values,))


def log(a: Tensor) -> Tensor:
    if np.any(a.values <= 0.0):
        raise ValueError("log requires strictly positive values")
    return _node(np.log(a.values), (a,), lambda g, out: (g / a.values,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; gradient is identity strictly inside, 0 outside."""
    def bwd(g, out):
        inside = (a.values > lo) & (a.values < hi)
        return (g * inside,)

    return _node(np.clip(a.values, lo, hi), (a,), bwd)


def softmax_rows(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ValueError("softmax_rows expects a 2-d operand")
    shifted = a.values - a.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_values = e / e.sum(axis=1, keepdims=True)

    def bwd(g, out):
        y = out.values
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _node(out_values, (a,), bwd)


def layer_norm_rows(a: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Per-row standardization: (x - mean) / sqrt(var + eps), no affine."""
    if a.values.ndim != 2:
        raise ValueError("layer_norm_rows expects a 2-d operand")
    mu = a.values.mean(axis=1, keepdims=True)
    var = a.values.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.values - mu) * inv

    def bwd(g, out):
        mean_g = g.mean(axis=1, keepdims=True)
        mean_gy = (g * y).mean(axis=1, keepdims=True)
        return (inv * (g - mean_g - y * mean_gy),)

    return _node(y, (a,), bwd)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over all rows of a 2-d tensor, returned as a 1 x d row."""
    if a.values.ndim != 2:
        raise ValueError("mean_rows expects a 2-d operand")
    n = a.shape[0]
    return _node(a.values.mean(axis=0, keepdims=True), (a,),
                 lambda g, out: (np.repeat(g / n, n, axis=0),))


def masked_mean_rows(a: Tensor, mask: np.ndarray) -> Tensor:
    """Group means of rows: ``mask`` is (G, R) 0/1 and output row g averages
    the rows of ``a`` selected by mask row g.  Every mask row needs at least
    one set element.  The mask is a constant, not differentiated."""
    if a.values.ndim != 2:
        raise ValueError("masked_mean_rows expects a 2-d operand")
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != a.shape[0]:
        raise ValueError(
            f"mask shape {m.shape} incompatible with input {a.shape}")
    counts = m.sum(axis=1, keepdims=True)
    if np.any(counts == 0):
        raise ValueError("masked_mean_rows: empty mask row")
    w = m / counts
    return _node(w @ a.values, (a,), lambda g, out: (w.T @ g,))


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError(f"concat_cols shape mismatch: {a.shape}, {b.shape}")
    da = a.shape[1]

    def bwd(g, out):
        ga = g[:, :da] if a.requires_grad else None
        gb = g[:, da:] if b.requires_grad else None
        return ga, gb

    return _node(np.concatenate([a.values, b.values], axis=1), (a, b), bwd)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ValueError("concat_rows needs at least one tensor")
    width = parts[0].shape[1] if parts[0].values.ndim == 2 else None
    for p in parts:
        if p.values.ndim != 2 or p.shape[1] != width:
            raise ValueError("concat_rows expects 2-d tensors of equal width")
    sizes = [p.shape[0] for p in parts]

    def bwd(g, out):
        grads = []
        offset = 0
        for p, n in zip(parts, sizes):
            grads.append(g[offset:offset + n] if p.requires_grad else None)
            offset += n
        return tuple(grads)

    return _node(np.concatenate([p.values for p in parts], axis=0),
                 tuple(parts), bwd)


def row_l2_normalize(a: Tensor, eps: float = L2_NORM_EPS) -> Tensor:
    """Scale each row to unit L2 norm; eps guards the zero-vector row."""
    if a.values.ndim != 2:
        raise ValueError("row_l2_normalize expects a 2-d operand")
    norms = np.sqrt((a.values ** 2).sum(axis=1, keepdims=True) + eps * eps)
    y = a.values / norms

    def bwd(g, out):
        dot = (g * a.values).sum(axis=1, keepdims=True)
        return (g / norms - a.values * dot / norms ** 3,)

    return _node(y, (a,), bwd)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows by integer index; backward scatter-adds into the source."""
    if a.values.ndim != 2:
        raise ValueError("gather_rows expects a 2-d operand")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("gather_rows expects a 1-d index list")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ValueError("gather_rows index out of range")

    def bwd(g, out):
        acc = np.zeros_like(a.values)
        np.add.at(acc, idx, g)
        return (acc,)

    return _node(a.values[idx], (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    return _node(a.values.sum(), (a,),
                 lambda g, out: (np.full_like(a.values, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    n = a.values.size
    return _node(a.values.mean(), (a,),
                 lambda g, out: (np.full_like(a.values, float(g) / n),))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf.

    ``loss`` must be scalar.  Repeated calls without clearing leaf gradients
    accumulate, matching the usual micro-batch idiom.  Each interior node is
    visited exactly once per call.
    """
    if loss.values.ndim != 0:
        raise ValueError("backward requires a scalar loss")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    flowing: dict[int, np.ndarray] = {id(loss): np.asarray(1.0)}
    for node in reversed(order):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.values)
            node.grad += g
            continue
        parent_grads = node._backward(g, node)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in flowing:
                flowing[id(p)] = flowing[id(p)] + pg
            else:
                flowing[id(p)] = pg


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Optimizer state for one parameter collection.

    beta1/beta2/eps are the standard defaults; learning rate 1e-3 matches
    both training stages.
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def ensure(self, params: Sequence[Tensor]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p.values) for p in params]
            self.v = [np.zeros_like(p.values) for p in params]
        if len(self.m) != len(params):
            raise ValueError("AdamState does not match parameter list")


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update; clears gradients afterwards."""
    params = list(params)
    state.ensure(params)
    for p in params:
        if p.grad is None:
            raise ValueError("adam_step: parameter missing gradient")
        if p.grad.shape != p.values.shape:
            raise ValueError("adam_step: gradient shape mismatch")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for i, p in enumerate(params):
        g = p.grad
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / (1.0 - b1 ** t)
        v_hat = state.v[i] / (1.0 - b2 ** t)
        p.values = p.values - state.learning_rate * m_hat / (
            np.sqrt(v_hat) + state.eps)
        p.grad = None


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradientCheckReport:
    passed: bool
    worst_rel_error: float
    worst_input: int
    worst_coord: tuple
    analytic: float
    numeric: float

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"gradient check {status}: worst rel err "
                f"{self.worst_rel_error:.3e} at input {self.worst_input} "
                f"coord {self.worst_coord} "
                f"(analytic {self.analytic:.6e}, numeric {self.numeric:.6e})")


def _nudged(values: np.ndarray, margin: float) -> np.ndarray:
    """Push coordinates away from 0 so relu kinks cannot sit inside the
    central-difference stencil."""
    out = values.copy()
    near = np.abs(out) < margin
    out[near] = np.where(out[near] >= 0, margin, -margin)
    return out


def gradient_check(f: Callable[[list[Tensor]], Tensor],
                   points: Sequence[np.ndarray],
                   h: float = 1e-5,
                   tol_rel: float = 1e-4,
                   nudge: float = 1e-3) -> GradientCheckReport:
    """Compare analytic gradients of scalar-valued ``f`` against central
    finite differences, coordinate by coordinate.

    ``points`` is the list of input arrays; every input is treated as
    differentiable.  Inputs are first nudged away from zero by ``nudge`` so
    the check stays off relu kinks; both sides of the comparison use the
    nudged point.
    """
    base = [_nudged(np.asarray(p, dtype=np.float64), nudge) for p in points]

    leaves = [parameter(b.copy()) for b in base]
    out = f(leaves)
    if out.values.ndim != 0:
        raise ValueError("gradient_check requires a scalar-valued function")
    backward(out)
    analytic = [np.zeros_like(b) if leaf.grad is None else leaf.grad
                for b, leaf in zip(base, leaves)]

    worst = GradientCheckReport(True, -1.0, -1, (), 0.0, 0.0)
    for i, b in enumerate(base):
        flat = b.reshape(-1)
        ana_flat = analytic[i].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            hi = float(f([constant(x) for x in base]).values)
            flat[j] = orig - h
            lo = float(f([constant(x) for x in base]).values)
            flat[j] = orig
            numeric = (hi - lo) / (2.0 * h)
            ana = float(ana_flat[j])
            # The 1e-6 floor absorbs central-difference noise (~eps / h)
            # on coordinates whose true gradient is effectively zero.
            denom = max(abs(ana), abs(numeric), 1e-6)
            rel = abs(ana - numeric) / denom
            if rel > worst.worst_rel_error:
                coord = np.unravel_index(j, b.shape) if b.ndim else ()
                worst = GradientCheckReport(
                    True, rel, i, tuple(int(c) for c in coord),
                    ana, numeric)
    if worst.worst_input == -1:
        return GradientCheckReport(True, 0.0, 0, (), 0.0, 0.0)
    worst.passed = worst.worst_rel_error <= tol_rel
    return worst


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"S2CKPT1"


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed or truncated."""


def save_checkpoint(entries: dict[str, np.ndarray], path) -> None:
    """Write named float64 arrays: magic, entry count, then per entry a
    length-prefixed UTF-8 name, rank, extents, and row-major payload.
    All integers little-endian; entries ordered by name."""
    names = sorted(entries)
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<Q", len(names)))
    for name in names:
        arr = np.ascontiguousarray(entries[name], dtype=np.float64)
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", arr.ndim))
        for extent in arr.shape:
            buf.write(struct.pack("<Q", extent))
        buf.write(arr.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("bad checkpoint magic")
    offset = len(CHECKPOINT_MAGIC)

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(data):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, data, offset)
        offset += size
        return vals

    (count,) = take("<Q")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        if offset + name_len > len(data):
            raise CheckpointError("truncated checkpoint")
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = take("<I")
        shape = tuple(take("<Q")[0] for _ in range(ndim))
        n_items = int(np.prod(shape)) if shape else 1
        nbytes = 8 * n_items
        if offset + nbytes > len(data):
            raise CheckpointError("truncated checkpoint")
        arr = np.frombuffer(data, dtype="<f8", count=n_items,
                            offset=offset).reshape(shape).copy()
        offset += nbytes
        out[name] = arr
    if offset != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return out
