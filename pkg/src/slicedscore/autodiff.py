"""Minimal reverse-mode autodiff on float64 numpy arrays.

The tape records every primitive applied to tracked tensors.  Backward rules
are themselves written in terms of the same primitives, so a gradient computed
with ``create_graph=True`` lands back on the tape and can be differentiated
again.  That is all that is needed to get Hessian-vector products in two
backward passes and exact Hessian diagonals in D+1.

Tensors are rank 0, 1 or 2.  Implicit broadcasting in elementwise ops is
deliberately narrow: scalar against anything, or a ``(K,)`` vector against the
trailing axis of an ``(N, K)`` matrix.  Everything else must be spelled out
with ``tile_rows`` / ``tile_cols``.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeMismatch",
    "Tape",
    "Tensor",
    "as_tensor",
    "constant",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "dot",
    "outer",
    "tensor_sum",
    "mean",
    "tile_rows",
    "tile_cols",
    "transpose",
    "square",
    "exp",
    "log",
    "tanh",
    "softplus",
    "grad",
    "hvp",
    "hessian_diagonal",
]


class ShapeMismatch(ValueError):
    """Raised when operand shapes do not conform for a primitive."""

    def __init__(self, op: str, *shapes: tuple):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' vs '.join(map(str, shapes))}")


class Tape:
    """Append-only record of primitive applications.

    A tape is confined to a single evaluation; make a fresh one per objective
    build and discard it afterwards.  ``backward_passes`` counts ``grad``
    traversals since the last ``reset_counter``.
    """

    def __init__(self):
        self._parents: list[tuple] = []  # node id -> ((parent Tensor, vjp fn), ...)
        self.backward_passes = 0
        self._recording = True

    def __len__(self) -> int:
        return len(self._parents)

    def reset_counter(self) -> None:
        self.backward_passes = 0

    def leaf(self, values) -> "Tensor":
        """Register an input tensor whose gradient may be requested."""
        arr = _as_array(values)
        self._parents.append(())
        return Tensor(arr, self, len(self._parents) - 1)

    def _record(self, values: np.ndarray, parents: tuple) -> "Tensor":
        self._parents.append(parents)
        return Tensor(values, self, len(self._parents) - 1)


class Tensor:
    """A float64 array, optionally tracked on a tape."""

    __slots__ = ("values", "tape", "node")

    def __init__(self, values: np.ndarray, tape: Tape | None = None, node: int | None = None):
        self.values = values
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        return float(self.values)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis: int | None = None) -> "Tensor":
        return tensor_sum(self, axis)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        tag = "leaf/op" if self.node is not None else "const"
        return f"Tensor({tag}, shape={self.shape})"


def _as_array(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim > 2:
        raise ShapeMismatch("tensor", arr.shape)
    return arr


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(_as_array(x))


def constant(x) -> Tensor:
    return Tensor(_as_array(x))


def _tape_of(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ValueError("operands live on different tapes")
    return tape


def _emit(values: np.ndarray, parents: list[tuple], *operands: Tensor) -> Tensor:
    """Create the result tensor, recording it when some operand is tracked."""
    tape = _tape_of(*operands)
    if tape is None or not tape._recording:
        return Tensor(values)
    tracked = tuple((p, vjp) for p, vjp in parents if p.node is not None)
    return tape._record(values, tracked)


# ---------------------------------------------------------------------------
# elementwise primitives


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    # trailing-dimension vector case: (K,) against (N, K)
    if len(sa) == 1 and len(sb) == 2 and sa[0] == sb[1]:
        return
    if len(sb) == 1 and len(sa) == 2 and sb[0] == sa[1]:
        return
    raise ShapeMismatch(op, sa, sb)


def _unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    """Reduce a gradient back to the shape of a broadcast operand."""
    if g.shape == shape:
        return g
    if shape == ():
        return tensor_sum(g)
    # (K,) operand broadcast across the rows of an (N, K) result
    return tensor_sum(g, axis=0)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _emit(
        a.values + b.values,
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))],
        a,
        b,
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _emit(
        a.values - b.values,
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(neg(g), b.shape))],
        a,
        b,
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    return _emit(
        a.values * b.values,
        [
            (a, lambda g: _unbroadcast(mul(g, b), a.shape)),
            (b, lambda g: _unbroadcast(mul(g, a), b.shape)),
        ],
        a,
        b,
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit(-a.values, [(a, lambda g: neg(g))], a)


def square(a) -> Tensor:
    a = as_tensor(a)
    return _emit(a.values**2, [(a, lambda g: mul(g, mul(2.0, a)))], a)


def exp(a) -> Tensor:
    # vjp recomputes exp(a) so the rule stays differentiable under create_graph
    a = as_tensor(a)
    return _emit(np.exp(a.values), [(a, lambda g: mul(g, exp(a)))], a)


def log(a) -> Tensor:
    # 1/x written as exp(-log x), valid on log's domain
    a = as_tensor(a)
    return _emit(np.log(a.values), [(a, lambda g: mul(g, exp(neg(log(a)))))], a)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    return _emit(np.tanh(a.values), [(a, lambda g: mul(g, sub(1.0, square(tanh(a)))))], a)


def softplus(a) -> Tensor:
    # d/dx softplus(x) = sigmoid(x) = exp(-softplus(-x))
    a = as_tensor(a)
    return _emit(
        np.logaddexp(0.0, a.values),
        [(a, lambda g: mul(g, exp(neg(softplus(neg(a))))))],
        a,
    )


# ---------------------------------------------------------------------------
# contractions and shape primitives


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    if len(sa) == 2 and len(sb) == 2:
        if sa[1] != sb[0]:
            raise ShapeMismatch("matmul", sa, sb)
        vjps = [
            (a, lambda g: matmul(g, transpose(b))),
            (b, lambda g: matmul(transpose(a), g)),
        ]
    elif len(sa) == 2 and len(sb) == 1:
        if sa[1] != sb[0]:
            raise ShapeMismatch("matmul", sa, sb)
        vjps = [
            (a, lambda g: outer(g, b)),
            (b, lambda g: matmul(transpose(a), g)),
        ]
    elif len(sa) == 1 and len(sb) == 2:
        if sa[0] != sb[0]:
            raise ShapeMismatch("matmul", sa, sb)
        vjps = [
            (a, lambda g: matmul(b, g)),
            (b, lambda g: outer(a, g)),
        ]
    else:
        raise ShapeMismatch("matmul", sa, sb)
    return _emit(a.values @ b.values, vjps, a, b)


def dot(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeMismatch("dot", a.shape, b.shape)
    return _emit(
        np.dot(a.values, b.values),
        [(a, lambda g: mul(g, b)), (b, lambda g: mul(g, a))],
        a,
        b,
    )


def outer(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeMismatch("outer", a.shape, b.shape)
    return _emit(
        np.outer(a.values, b.values),
        [(a, lambda g: matmul(g, b)), (b, lambda g: matmul(transpose(g), a))],
        a,
        b,
    )


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeMismatch("transpose", a.shape)
    return _emit(a.values.T.copy(), [(a, lambda g: transpose(g))], a)


def tensor_sum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        shape = a.shape
        return _emit(
            np.sum(a.values),
            [(a, lambda g: mul(g, constant(np.ones(shape))))],
            a,
        )
    if a.ndim != 2 or axis not in (0, 1):
        raise ShapeMismatch("sum", a.shape)
    n, k = a.shape
    if axis == 0:
        vjp = lambda g: tile_rows(g, n)  # noqa: E731
    else:
        vjp = lambda g: tile_cols(g, k)  # noqa: E731
    return _emit(np.sum(a.values, axis=axis), [(a, vjp)], a)


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    count = a.values.size if axis is None else a.shape[axis]
    return mul(1.0 / count, tensor_sum(a, axis))


def tile_rows(a, n: int) -> Tensor:
    """Broadcast a (K,) vector to (n, K) by repeating it as rows."""
    a = as_tensor(a)
    if a.ndim != 1:
        raise ShapeMismatch("tile_rows", a.shape)
    return _emit(
        np.broadcast_to(a.values, (n, a.shape[0])).copy(),
        [(a, lambda g: tensor_sum(g, axis=0))],
        a,
    )


def tile_cols(a, k: int) -> Tensor:
    """Broadcast an (N,) vector to (N, k) by repeating it as columns."""
    a = as_tensor(a)
    if a.ndim != 1:
        raise ShapeMismatch("tile_cols", a.shape)
    return _emit(
        np.repeat(a.values[:, None], k, axis=1),
        [(a, lambda g: tensor_sum(g, axis=1))],
        a,
    )


# ---------------------------------------------------------------------------
# reverse pass


def grad(output: Tensor, wrt, create_graph: bool = False) -> list[Tensor]:
    """Gradients of a scalar output with respect to each tensor in ``wrt``.

    Leaves not reachable from the output get an exactly-zero gradient.  With
    ``create_graph`` the returned tensors are recorded on the tape and can be
    differentiated again.  Each call counts as one backward pass.
    """
    if output.ndim != 0:
        raise ValueError(f"grad: output must be a scalar, got shape {output.shape}")
    wrt = list(wrt)
    for t in wrt:
        if t.node is None:
            raise ValueError("grad: wrt tensor is not tracked on a tape")
    tape = output.tape
    if tape is None:
        # a constant output is unreachable from every leaf: all-zero gradients
        if wrt:
            wrt[0].tape.backward_passes += 1
        return [constant(np.zeros(t.shape)) for t in wrt]
    for t in wrt:
        if t.tape is not tape:
            raise ValueError("grad: wrt tensor lives on a different tape")
    tape.backward_passes += 1

    # Restrict the sweep to nodes that can actually reach the output.
    reachable = {output.node}
    stack = [output.node]
    while stack:
        nid = stack.pop()
        for parent, _ in tape._parents[nid]:
            if parent.node not in reachable:
                reachable.add(parent.node)
                stack.append(parent.node)

    adjoint: dict[int, Tensor] = {output.node: constant(1.0)}
    prev_recording = tape._recording
    tape._recording = create_graph
    try:
        for nid in range(output.node, -1, -1):
            if nid not in reachable or nid not in adjoint:
                continue
            g = adjoint[nid]
            for parent, vjp in tape._parents[nid]:
                contrib = vjp(g)
                prev = adjoint.get(parent.node)
                adjoint[parent.node] = contrib if prev is None else add(prev, contrib)
    finally:
        tape._recording = prev_recording

    out = []
    for t in wrt:
        g = adjoint.get(t.node)
        out.append(g if g is not None else constant(np.zeros(t.shape)))
    return out


def hvp(scalar_fn, x: np.ndarray, v: np.ndarray, tape: Tape | None = None) -> np.ndarray:
    """Hessian-vector product of a scalar function at ``x`` along ``v``.

    Two backward passes: one for the gradient, one for the gradient of its
    projection onto ``v``.
    """
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if x.shape != v.shape:
        raise ShapeMismatch("hvp", x.shape, v.shape)
    tape = tape if tape is not None else Tape()
    xt = tape.leaf(x)
    y = scalar_fn(xt)
    (g,) = grad(y, [xt], create_graph=True)
    (h,) = grad(dot(g, constant(v)), [xt])
    return h.values


def hessian_diagonal(scalar_fn, x: np.ndarray, tape: Tape | None = None) -> np.ndarray:
    """Diagonal of the Hessian of a scalar function, one pass per coordinate.

    Costs exactly D+1 backward passes: one gradient pass plus one pass per
    diagonal entry.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeMismatch("hessian_diagonal", x.shape)
    d = x.shape[0]
    tape = tape if tape is not None else Tape()
    xt = tape.leaf(x)
    y = scalar_fn(xt)
    (g,) = grad(y, [xt], create_graph=True)
    diag = np.empty(d)
    eye = np.eye(d)
    for i in range(d):
        (row,) = grad(dot(g, constant(eye[i])), [xt])
        diag[i] = row.values[i]
    return diag
