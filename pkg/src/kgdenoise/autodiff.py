"""Dense float64 tensors with recorded reverse-mode differentiation.

Every primitive builds a node in an implicit tape (the expression graph);
`backward` replays the tape in exact reverse topological order, accumulating
gradients additively. Broadcasting is restricted to row-vector bias addition;
anything fancier must be spelled out, which keeps shape bugs loud.

Subgradient convention: clamp_min/clamp_max pass zero gradient in the clamped
region, and |x| inside the concave penalty uses subgradient 0 at x = 0.
"""
from __future__ import annotations

import json
import struct
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_check_finite = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle the per-op NaN/Inf guard (slow; meant for tests and triage)."""
    global _check_finite
    _check_finite = enabled


class Tensor:
    """A dense float64 array plus the tape edge that produced it."""

    __slots__ = ("values", "grad", "_parents", "_backward", "op")

    def __init__(
        self,
        values,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[np.ndarray], None] | None = None,
        op: str = "leaf",
    ):
        self.values = np.asarray(values, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward
        self.op = op
        if _check_finite and not np.all(np.isfinite(self.values)):
            raise FloatingPointError(f"non-finite values produced by op '{op}'")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values.reshape(()))

    def _accumulate(self, g: np.ndarray, owned: bool = False) -> None:
        # `owned` marks freshly allocated arrays that may be adopted without a
        # defensive copy; views and shared buffers must not set it
        if self.grad is None:
            self.grad = g if owned else np.array(g, dtype=DTYPE)
        else:
            self.grad += g

    # scalar-aware operator sugar; tensors must match shapes exactly
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return affine(self, 1.0, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return affine(self, float(other), 0.0)

    __rmul__ = __mul__

    def __neg__(self):
        return affine(self, -1.0, 0.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, -other)
        return affine(self, 1.0, -float(other))

    def __rsub__(self, other):
        return affine(self, -1.0, float(other))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return affine(self, 1.0 / float(other), 0.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.values.shape})"


class Parameter(Tensor):
    """A named leaf tensor with a persistent gradient accumulator."""

    __slots__ = ("name",)

    def __init__(self, values, name: str):
        super().__init__(values, op="parameter")
        self.name = name
        self.grad = np.zeros_like(self.values)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.values.shape})"


def _node(values, parents, backward, op) -> Tensor:
    return Tensor(values, parents=parents, backward=backward, op=op)


def constant(values) -> Tensor:
    """A leaf tensor that never receives gradient updates."""
    return Tensor(values, op="constant")


# -- primitives -----------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out_values = a.values @ b.values

    def backward(g: np.ndarray) -> None:
        a._accumulate(g @ b.values.T, owned=True)
        b._accumulate(a.values.T @ g, owned=True)

    return _node(out_values, (a, b), backward, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a row-vector bias b of shape (n,) or (1, n)."""
    bias = a.values.ndim == 2 and b.values.ndim in (1, 2) and b.values.shape[-1] == a.shape[1] \
        and b.values.size == a.shape[1] and a.shape != b.shape
    if not bias and a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} + {b.shape}")
    out_values = a.values + b.values

    def backward(g: np.ndarray) -> None:
        a._accumulate(g, owned=True)
        if bias:
            b._accumulate(g.sum(axis=0).reshape(b.values.shape), owned=True)
        else:
            b._accumulate(g)

    return _node(out_values, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} * {b.shape}")
    out_values = a.values * b.values

    def backward(g: np.ndarray) -> None:
        a._accumulate(g * b.values, owned=True)
        b._accumulate(g * a.values, owned=True)

    return _node(out_values, (a, b), backward, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"div: shape mismatch {a.shape} / {b.shape}")
    out_values = a.values / b.values

    def backward(g: np.ndarray) -> None:
        a._accumulate(g / b.values, owned=True)
        b._accumulate(-g * out_values / b.values, owned=True)

    return _node(out_values, (a, b), backward, "div")


def affine(x: Tensor, scale: float, shift: float) -> Tensor:
    """scale * x + shift with python-float constants."""
    out_values = scale * x.values + shift

    def backward(g: np.ndarray) -> None:
        x._accumulate(scale * g, owned=True)

    return _node(out_values, (x,), backward, "affine")


def sigmoid(x: Tensor) -> Tensor:
    t = np.exp(-np.abs(x.values))
    out_values = np.where(x.values >= 0, 1.0 / (1.0 + t), t / (1.0 + t))

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * out_values * (1.0 - out_values), owned=True)

    return _node(out_values, (x,), backward, "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    out_values = np.where(mask, x.values, 0.0)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * mask, owned=True)

    return _node(out_values, (x,), backward, "relu")


def log(x: Tensor) -> Tensor:
    out_values = np.log(x.values)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g / x.values, owned=True)

    return _node(out_values, (x,), backward, "log")


def exp(x: Tensor) -> Tensor:
    out_values = np.exp(x.values)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * out_values, owned=True)

    return _node(out_values, (x,), backward, "exp")


def clamp_min(x: Tensor, lo: float) -> Tensor:
    # ~(x <= lo) rather than (x > lo): NaN must poison the output, not be
    # silently legalized to the clamp floor
    keep = ~(x.values <= lo)
    out_values = np.where(keep, x.values, lo)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * keep, owned=True)

    return _node(out_values, (x,), backward, "clamp_min")


def clamp_max(x: Tensor, hi: float) -> Tensor:
    keep = ~(x.values >= hi)
    out_values = np.where(keep, x.values, hi)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * keep, owned=True)

    return _node(out_values, (x,), backward, "clamp_max")


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    if axis not in (0, 1):
        raise ValueError(f"concat: axis must be 0 or 1, got {axis}")
    out_values = np.concatenate([p.values for p in parts], axis=axis)
    widths = [p.values.shape[axis] for p in parts]
    splits = np.cumsum(widths)[:-1]

    def backward(g: np.ndarray) -> None:
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            p._accumulate(piece)

    return _node(out_values, tuple(parts), backward, "concat")


def dropout(x: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a pre-sampled constant mask (entries 0 or 1/keep_prob)."""
    if mask.shape != x.shape:
        raise ValueError(f"dropout: mask shape {mask.shape} != input {x.shape}")
    out_values = x.values * mask

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * mask, owned=True)

    return _node(out_values, (x,), backward, "dropout")


def sample_dropout_mask(shape: tuple[int, ...], rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability `rate`, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=DTYPE)
    keep = rng.random(shape) >= rate
    return keep.astype(DTYPE) / (1.0 - rate)


class IndexPlan:
    """Precomputed scatter operator for a fixed (index, num_rows) pair.

    Repeated gathers/scatters over the same index (one per relation per layer
    per step) amortize the sparse matrix build; the matrix applies the
    row-wise scatter-add as a single csr @ dense product.
    """

    __slots__ = ("index", "num_rows", "_matrix")

    def __init__(self, index: np.ndarray, num_rows: int):
        from scipy import sparse

        self.index = np.asarray(index, dtype=np.int64)
        self.num_rows = num_rows
        n = len(self.index)
        self._matrix = sparse.csr_matrix(
            (np.ones(n, dtype=DTYPE), (self.index, np.arange(n, dtype=np.int64))),
            shape=(num_rows, n),
        )

    def apply(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(self._matrix @ values)


def _segment_sum(
    values: np.ndarray, index: np.ndarray, num_rows: int, plan: IndexPlan | None
) -> np.ndarray:
    """Row-wise scatter-add; bincount fallback when no plan is precomputed."""
    if plan is not None:
        return plan.apply(values)
    if values.ndim == 2:
        d = values.shape[1]
        flat = (index[:, None] * d + np.arange(d, dtype=np.int64)).ravel()
        return np.bincount(flat, weights=values.ravel(), minlength=num_rows * d).reshape(
            num_rows, d
        )
    return np.bincount(index, weights=values, minlength=num_rows)


def gather_rows(x: Tensor, index: np.ndarray, plan: IndexPlan | None = None) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    out_values = x.values[index]

    def backward(g: np.ndarray) -> None:
        x._accumulate(_segment_sum(g, index, x.values.shape[0], plan), owned=True)

    return _node(out_values, (x,), backward, "gather_rows")


def scatter_add_rows(
    x: Tensor, index: np.ndarray, num_rows: int, plan: IndexPlan | None = None
) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    out_values = _segment_sum(x.values, index, num_rows, plan)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g[index], owned=True)

    return _node(out_values, (x,), backward, "scatter_add_rows")


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    out_values = x.values.sum(axis=axis)

    def backward(g: np.ndarray) -> None:
        if axis is None:
            x._accumulate(np.full_like(x.values, g))
        elif axis == 0:
            x._accumulate(np.broadcast_to(g, x.values.shape).copy())
        else:
            x._accumulate(np.broadcast_to(g[:, None], x.values.shape).copy())

    return _node(out_values, (x,), backward, "reduce_sum")


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.values.size if axis is None else x.values.shape[axis]
    out_values = x.values.mean(axis=axis)

    def backward(g: np.ndarray) -> None:
        if axis is None:
            x._accumulate(np.full_like(x.values, g / n))
        elif axis == 0:
            x._accumulate(np.broadcast_to(g / n, x.values.shape).copy())
        else:
            x._accumulate(np.broadcast_to(g[:, None] / n, x.values.shape).copy())

    return _node(out_values, (x,), backward, "reduce_mean")


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Scale row i of x by s[i]; gradients flow to both operands."""
    if x.values.ndim != 2 or s.values.shape != (x.shape[0],):
        raise ValueError(f"scale_rows: x {x.shape} needs s of shape ({x.shape[0]},), got {s.shape}")
    out_values = x.values * s.values[:, None]

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * s.values[:, None], owned=True)
        s._accumulate((g * x.values).sum(axis=1), owned=True)

    return _node(out_values, (x, s), backward, "scale_rows")


def block_diag(blocks: Sequence[Tensor]) -> Tensor:
    """Assemble square blocks into a block-diagonal matrix; off-blocks stay zero."""
    sizes = []
    for b in blocks:
        if b.values.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError(f"block_diag: blocks must be square, got {b.shape}")
        sizes.append(b.shape[0])
    total = sum(sizes)
    out_values = np.zeros((total, total), dtype=DTYPE)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for b, o, sz in zip(blocks, offsets, sizes):
        out_values[o : o + sz, o : o + sz] = b.values

    def backward(g: np.ndarray) -> None:
        for b, o, sz in zip(blocks, offsets, sizes):
            b._accumulate(g[o : o + sz, o : o + sz])

    return _node(out_values, tuple(blocks), backward, "block_diag")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out_values = x.values.reshape(shape)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g.reshape(x.values.shape))

    return _node(out_values, (x,), backward, "reshape")


def concave_penalty(x: Tensor, alpha: float, lam: float) -> Tensor:
    """Elementwise minimax concave penalty; see training.mcp_penalty for the values."""
    if alpha <= 0 or lam <= 0:
        raise ValueError("alpha and lam must be positive")
    absx = np.abs(x.values)
    inner = absx <= alpha * lam
    out_values = np.where(inner, lam * absx - x.values**2 / (2.0 * alpha), alpha * lam**2 / 2.0)

    def backward(g: np.ndarray) -> None:
        slope = np.where(inner, np.sign(x.values) * lam - x.values / alpha, 0.0)
        x._accumulate(g * slope, owned=True)

    return _node(out_values, (x,), backward, "concave_penalty")


# -- backward pass ---------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into .grad for every node reachable from loss.

    Parameters keep their persistent accumulator (zero it between optimizer
    steps); intermediate tensors get a fresh gradient per call.
    """
    if loss.values.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    for node in order:
        if not isinstance(node, Parameter):
            node.grad = None
    loss.grad = np.ones_like(loss.values)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)


# -- gradient checking -------------------------------------------------------------


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| / (|a| + |b| + 1e-6), robust near zero."""
    return float(np.max(np.abs(a - b) / (np.abs(a) + np.abs(b) + 1e-6))) if a.size else 0.0


def grad_check(
    fn: Callable[[], Tensor],
    params: Iterable[Parameter],
    step: float = 1e-5,
) -> dict[str, float]:
    """Compare backward against central finite differences, per parameter.

    `fn` must rebuild the (deterministic) forward graph on every call and
    return a scalar tensor. Returns max relative error per parameter name.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    backward(fn())
    analytic = {p.name: p.grad.copy() for p in params}

    report: dict[str, float] = {}
    for p in params:
        numeric = np.zeros_like(p.values)
        flat = p.values.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = fn().item()
            flat[i] = orig - step
            f_minus = fn().item()
            flat[i] = orig
            num_flat[i] = (f_plus - f_minus) / (2.0 * step)
        report[p.name] = relative_error(analytic[p.name], numeric)
    return report


# -- checkpoint container ------------------------------------------------------------

CHECKPOINT_FORMAT = 1


def save_checkpoint(path, params: Sequence[Parameter]) -> None:
    """Single-file container: length-prefixed JSON manifest + little-endian f64 payload."""
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "params": [{"name": p.name, "shape": list(p.values.shape)} for p in params],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in params:
            fh.write(np.ascontiguousarray(p.values, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(blob_len).decode("utf-8"))
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {manifest.get('format')!r}")
        out: dict[str, np.ndarray] = {}
        for entry in manifest["params"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * n)
            if len(raw) != 8 * n:
                raise ValueError(f"truncated checkpoint payload for {entry['name']!r}")
            out[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(DTYPE)
    return out


def load_checkpoint_into(path, params: Sequence[Parameter]) -> None:
    """Restore parameter values in place; errors on any name/shape mismatch."""
    stored = load_checkpoint(path)
    for p in params:
        if p.name not in stored:
            raise ValueError(f"checkpoint is missing parameter {p.name!r}")
        if stored[p.name].shape != p.values.shape:
            raise ValueError(
                f"checkpoint shape {stored[p.name].shape} != model shape "
                f"{p.values.shape} for {p.name!r}"
            )
        p.values[...] = stored[p.name]
