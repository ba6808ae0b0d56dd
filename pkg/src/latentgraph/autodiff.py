"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every primitive is registered by name and dispatched through :func:`forward`.
Operations are recorded on the :class:`Tape` that is active in the current
thread (see ``with Tape() as tape``); outside a tape nothing is recorded,
which is how inference runs.

All data is float64. Masked entries may hold ``-inf``; ``row_softmax`` maps
them to exact zeros.
"""

import threading

import numpy as np

DTYPE = np.float64
NEG_INF = -np.inf

_local = threading.local()
_debug = {"enabled": False}


class AutodiffError(RuntimeError):
    pass


class ShapeError(AutodiffError, ValueError):
    pass


def set_debug(enabled=True):
    """Toggle NaN detection on every forward result."""
    _debug["enabled"] = bool(enabled)


def _active_tape():
    return getattr(_local, "tape", None)


class Tensor:
    __slots__ = ("data", "requires_grad", "tape_id", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.tape_id = None
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar; each maps onto one registered primitive
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("kind", "inputs", "output", "ctx")

    def __init__(self, kind, inputs, output, ctx):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.ctx = ctx


class Tape:
    """Ordered record of executed primitives.

    Use as a context manager; primitives run inside the block are recorded
    when at least one input requires a gradient. A tape supports exactly one
    backward pass.
    """

    _counter = 0

    def __init__(self):
        Tape._counter += 1
        self.id = Tape._counter
        self.nodes = []
        self.consumed = False
        self._previous = None

    def __enter__(self):
        self._previous = _active_tape()
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = self._previous
        self._previous = None
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, kind, inputs, output, ctx):
        if self.consumed:
            raise AutodiffError("cannot record on a tape that was already differentiated")
        output.tape_id = self.id
        self.nodes.append(_Node(kind, inputs, output, ctx))

    def backward(self, loss):
        return backward(self, loss)


class no_grad:
    """Suspend recording inside the block."""

    def __enter__(self):
        self._previous = _active_tape()
        _local.tape = None

    def __exit__(self, *exc):
        _local.tape = self._previous
        return False


# --------------------------------------------------------------------------
# primitive registry

_OPS = {}


def _register(kind):
    def wrap(cls):
        _OPS[kind] = cls
        return cls

    return wrap


def op_kinds():
    return sorted(_OPS)


def forward(op_kind, inputs, **attrs):
    """Run primitive ``op_kind`` on ``inputs`` and record it when needed."""
    try:
        op = _OPS[op_kind]
    except KeyError:
        raise AutodiffError(f"unknown op_kind {op_kind!r}") from None
    inputs = [as_tensor(x) for x in inputs]
    out, ctx = op.forward(op_kind, [x.data for x in inputs], **attrs)
    if _debug["enabled"] and np.isnan(out).any():
        raise AutodiffError(f"{op_kind} produced NaN")
    requires_grad = any(x.requires_grad for x in inputs)
    result = Tensor.__new__(Tensor)
    result.data = out
    result.requires_grad = requires_grad
    result.tape_id = None
    result.grad = None
    result.name = None
    if requires_grad:
        tape = _active_tape()
        if tape is not None:
            tape.record(op_kind, inputs, result, ctx)
        else:
            result.requires_grad = False
    return result


def _shape_error(kind, *shapes):
    joined = " and ".join(str(tuple(s)) for s in shapes)
    return ShapeError(f"{kind}: incompatible shapes {joined}")


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (suffix-broadcast only)."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    g = grad.sum(axis=tuple(range(lead))) if lead else grad
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


@_register("matmul")
class _MatMul:
    @staticmethod
    def forward(kind, xs):
        a, b = xs
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise _shape_error(kind, a.shape, b.shape)
        if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
            raise _shape_error(kind, a.shape, b.shape)
        return a @ b, None

    @staticmethod
    def backward(ctx, g, xs, needs):
        a, b = xs
        ga = gb = None
        if needs[0]:
            ga = g @ np.swapaxes(b, -1, -2)
        if needs[1]:
            if b.ndim == 2 and a.ndim > 2:
                gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a, -1, -2) @ g
        return ga, gb


@_register("add")
@_register("sub")
class _AddSub:
    @staticmethod
    def forward(kind, xs):
        a, b = xs
        # the only broadcast allowed is a trailing-suffix operand (bias add)
        if a.shape != b.shape:
            if b.ndim > a.ndim or a.shape[a.ndim - b.ndim:] != b.shape:
                raise _shape_error(kind, a.shape, b.shape)
        sign = 1.0 if kind == "add" else -1.0
        return (a + b if sign > 0 else a - b), sign

    @staticmethod
    def backward(sign, g, xs, needs):
        ga = g if needs[0] else None
        gb = None
        if needs[1]:
            gb = _unbroadcast(g, xs[1].shape)
            if sign < 0:
                gb = -gb
        return ga, gb


@_register("mul")
class _Mul:
    @staticmethod
    def forward(kind, xs):
        a, b = xs
        if a.shape != b.shape:
            raise _shape_error(kind, a.shape, b.shape)
        return a * b, None

    @staticmethod
    def backward(ctx, g, xs, needs):
        a, b = xs
        return (g * b if needs[0] else None), (g * a if needs[1] else None)


@_register("scalar_mul")
class _ScalarMul:
    @staticmethod
    def forward(kind, xs, scalar):
        return xs[0] * scalar, scalar

    @staticmethod
    def backward(scalar, g, xs, needs):
        return (g * scalar,)


@_register("tanh")
class _Tanh:
    @staticmethod
    def forward(kind, xs):
        y = np.tanh(xs[0])
        return y, y

    @staticmethod
    def backward(y, g, xs, needs):
        return (g * (1.0 - y * y),)


@_register("sigmoid")
class _Sigmoid:
    @staticmethod
    def forward(kind, xs):
        x = xs[0]
        # tanh form avoids overflow in exp for large |x|
        y = 0.5 * (np.tanh(0.5 * x) + 1.0)
        return y, y

    @staticmethod
    def backward(y, g, xs, needs):
        return (g * y * (1.0 - y),)


@_register("relu")
class _Relu:
    @staticmethod
    def forward(kind, xs):
        x = xs[0]
        return np.maximum(x, 0.0), None

    @staticmethod
    def backward(ctx, g, xs, needs):
        return (g * (xs[0] > 0),)


@_register("exp")
class _Exp:
    @staticmethod
    def forward(kind, xs):
        y = np.exp(xs[0])
        return y, y

    @staticmethod
    def backward(y, g, xs, needs):
        return (g * y,)


@_register("log")
class _Log:
    @staticmethod
    def forward(kind, xs):
        x = xs[0]
        if (x < 0).any():
            raise AutodiffError("log: negative input")
        with np.errstate(divide="ignore"):
            return np.log(x), None

    @staticmethod
    def backward(ctx, g, xs, needs):
        return (g / xs[0],)


def _softmax_data(x):
    """Row softmax with exact zeros at -inf and all-zero fully masked rows."""
    m = x.max(axis=-1, keepdims=True)
    dead = ~np.isfinite(m)
    if dead.any():
        m = np.where(dead, 0.0, m)
    e = np.exp(x - m)
    s = e.sum(axis=-1, keepdims=True)
    if dead.any():
        s = np.where(dead, 1.0, s)
    return e / s


@_register("row_softmax")
class _RowSoftmax:
    @staticmethod
    def forward(kind, xs):
        y = _softmax_data(xs[0])
        return y, y

    @staticmethod
    def backward(y, g, xs, needs):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)


@_register("row_log_softmax")
class _RowLogSoftmax:
    @staticmethod
    def forward(kind, xs):
        x = xs[0]
        m = x.max(axis=-1, keepdims=True)
        if not np.isfinite(m).all():
            raise AutodiffError("row_log_softmax: a row has no finite entry")
        shifted = x - m
        lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        y = shifted - lse
        return y, y

    @staticmethod
    def backward(y, g, xs, needs):
        p = np.exp(y)
        masked = np.isneginf(y)
        if masked.any():
            g = np.where(masked, 0.0, g)
        return (g - p * g.sum(axis=-1, keepdims=True),)


@_register("concat")
class _Concat:
    @staticmethod
    def forward(kind, xs, axis=-1):
        ref = xs[0]
        ax = axis % ref.ndim
        for x in xs[1:]:
            if x.ndim != ref.ndim or any(
                x.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
            ):
                raise _shape_error(kind, ref.shape, x.shape)
        sizes = np.cumsum([x.shape[ax] for x in xs])[:-1]
        return np.concatenate(xs, axis=ax), (ax, sizes)

    @staticmethod
    def backward(ctx, g, xs, needs):
        ax, sizes = ctx
        parts = np.split(g, sizes, axis=ax)
        return tuple(p if n else None for p, n in zip(parts, needs))


@_register("slice")
class _Slice:
    """Basic or advanced numpy indexing; backward scatters with ``add.at``."""

    @staticmethod
    def forward(kind, xs, index):
        x = xs[0]
        try:
            y = x[index]
        except IndexError as err:
            raise ShapeError(f"slice: bad index for shape {x.shape}: {err}") from None
        return np.array(y, dtype=DTYPE, copy=True), index

    @staticmethod
    def backward(index, g, xs, needs):
        gx = np.zeros_like(xs[0])
        if _is_basic(index):
            gx[index] += g
        else:
            np.add.at(gx, index, g)
        return (gx,)


def _is_basic(index):
    if not isinstance(index, tuple):
        index = (index,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in index)


@_register("transpose")
class _Transpose:
    @staticmethod
    def forward(kind, xs):
        x = xs[0]
        if x.ndim < 2:
            raise ShapeError(f"transpose: need at least 2 dims, got {x.shape}")
        return np.swapaxes(x, -1, -2).copy(), None

    @staticmethod
    def backward(ctx, g, xs, needs):
        return (np.swapaxes(g, -1, -2),)


@_register("reshape")
class _Reshape:
    @staticmethod
    def forward(kind, xs, shape):
        x = xs[0]
        try:
            return x.reshape(shape), None
        except ValueError:
            raise _shape_error(kind, x.shape, shape) from None

    @staticmethod
    def backward(ctx, g, xs, needs):
        return (g.reshape(xs[0].shape),)


@_register("embedding_gather")
class _EmbeddingGather:
    @staticmethod
    def forward(kind, xs, ids):
        table = xs[0]
        ids = np.asarray(ids)
        if table.ndim != 2:
            raise ShapeError(f"embedding_gather: table must be 2-D, got {table.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise AutodiffError(
                f"embedding_gather: id out of range for table with {table.shape[0]} rows"
            )
        return table[ids], ids

    @staticmethod
    def backward(ids, g, xs, needs):
        table = xs[0]
        flat = ids.reshape(-1)
        gt = np.zeros_like(table)
        np.add.at(gt, flat, g.reshape(flat.size, table.shape[1]))
        return (gt,)


@_register("conv1d")
class _Conv1d:
    """Same-padded 1-D convolution over axis -2 of a (batch, length, in) input.

    Weight has shape (width, in, out); width must be odd.
    """

    @staticmethod
    def forward(kind, xs):
        x, w = xs
        if x.ndim != 3 or w.ndim != 3 or w.shape[1] != x.shape[2] or w.shape[0] % 2 == 0:
            raise _shape_error(kind, x.shape, w.shape)
        k = w.shape[0]
        half = k // 2
        b, m, c = x.shape
        padded = np.zeros((b, m + 2 * half, c), dtype=DTYPE)
        padded[:, half:half + m] = x
        cols = np.concatenate([padded[:, j:j + m] for j in range(k)], axis=-1)
        y = cols @ w.reshape(k * c, -1)
        return y, cols

    @staticmethod
    def backward(cols, g, xs, needs):
        x, w = xs
        k = w.shape[0]
        half = k // 2
        b, m, c = x.shape
        gx = gw = None
        if needs[1]:
            gw = (cols.reshape(-1, k * c).T @ g.reshape(-1, g.shape[-1])).reshape(w.shape)
        if needs[0]:
            gcols = g @ w.reshape(k * c, -1).T
            gpad = np.zeros((b, m + 2 * half, c), dtype=DTYPE)
            for j in range(k):
                gpad[:, j:j + m] += gcols[..., j * c:(j + 1) * c]
            gx = gpad[:, half:half + m]
        return gx, gw


@_register("sum")
@_register("mean")
class _Reduce:
    @staticmethod
    def forward(kind, xs, axis=None, keepdims=False):
        x = xs[0]
        y = x.sum(axis=axis, keepdims=keepdims)
        count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
        if kind == "mean":
            y = y / count
        scale = 1.0 / count if kind == "mean" else 1.0
        return np.asarray(y, dtype=DTYPE), (axis, keepdims, scale)

    @staticmethod
    def backward(ctx, g, xs, needs):
        axis, keepdims, scale = ctx
        x = xs[0]
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * scale, x.shape).copy(),)


@_register("dropout")
class _Dropout:
    """Inverted dropout with an externally supplied 0/1 keep mask."""

    @staticmethod
    def forward(kind, xs, mask, p):
        x = xs[0]
        if not 0.0 <= p < 1.0:
            raise AutodiffError(f"dropout: p must lie in [0, 1), got {p}")
        mask = np.asarray(mask, dtype=DTYPE)
        if mask.shape != x.shape:
            raise _shape_error(kind, x.shape, mask.shape)
        scaled = mask / (1.0 - p)
        return x * scaled, scaled

    @staticmethod
    def backward(scaled, g, xs, needs):
        return (g * scaled,)


@_register("masked_fill")
class _MaskedFill:
    @staticmethod
    def forward(kind, xs, mask, value):
        x = xs[0]
        mask = np.asarray(mask, dtype=bool)
        try:
            mask = np.broadcast_to(mask, x.shape)
        except ValueError:
            raise _shape_error(kind, x.shape, mask.shape) from None
        return np.where(mask, value, x), mask

    @staticmethod
    def backward(mask, g, xs, needs):
        return (np.where(mask, 0.0, g),)


# --------------------------------------------------------------------------
# functional front-end


def matmul(a, b):
    return forward("matmul", [a, b])


def add(a, b):
    return forward("add", [a, b])


def sub(a, b):
    return forward("sub", [a, b])


def mul(a, b):
    return forward("mul", [a, b])


def scalar_mul(x, scalar):
    return forward("scalar_mul", [x], scalar=float(scalar))


def tanh(x):
    return forward("tanh", [x])


def sigmoid(x):
    return forward("sigmoid", [x])


def relu(x):
    return forward("relu", [x])


def exp(x):
    return forward("exp", [x])


def log(x):
    return forward("log", [x])


def row_softmax(x):
    return forward("row_softmax", [x])


def row_log_softmax(x):
    return forward("row_log_softmax", [x])


def concat(xs, axis=-1):
    return forward("concat", list(xs), axis=axis)


def index_select(x, index):
    return forward("slice", [x], index=index)


def transpose(x):
    return forward("transpose", [x])


def reshape(x, shape):
    return forward("reshape", [x], shape=tuple(shape))


def embedding(table, ids):
    return forward("embedding_gather", [table], ids=ids)


def conv1d(x, weight):
    return forward("conv1d", [x, weight])


def sum(x, axis=None, keepdims=False):  # noqa: A001
    return forward("sum", [x], axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False):
    return forward("mean", [x], axis=axis, keepdims=keepdims)


def dropout(x, mask, p):
    return forward("dropout", [x], mask=mask, p=float(p))


def masked_fill(x, mask, value=NEG_INF):
    return forward("masked_fill", [x], mask=mask, value=value)


def stack(xs, axis=1):
    """Stack equally shaped tensors along a new ``axis`` (reshape + concat)."""
    xs = list(xs)
    shape = list(xs[0].shape)
    shape.insert(axis, 1)
    return concat([reshape(x, shape) for x in xs], axis=axis)


# --------------------------------------------------------------------------
# reverse pass


def backward(tape, loss):
    """Differentiate scalar ``loss`` through ``tape``.

    Returns a dict mapping each leaf tensor that requires a gradient to its
    gradient array; the same array is stored on ``leaf.grad``.
    """
    if tape.consumed:
        raise AutodiffError("backward already ran on this tape")
    if loss.data.size != 1:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape_id != tape.id:
        raise AutodiffError("loss was not produced on this tape")
    tape.consumed = True
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        xs = node.inputs
        needs = [x.requires_grad for x in xs]
        op = _OPS[node.kind]
        in_grads = op.backward(node.ctx, g, [x.data for x in xs], needs)
        for x, need, gx in zip(xs, needs, in_grads):
            if not need or gx is None:
                continue
            key = id(x)
            if key in grads:
                grads[key] = grads[key] + gx
            else:
                grads[key] = gx
            if x.tape_id is None:
                leaves[key] = x
    out = {}
    for key, leaf in leaves.items():
        g = grads[key]
        leaf.grad = g
        out[leaf] = g
    tape.nodes = []
    return out


def grad_check(function, point, epsilon=1e-6):
    """Max relative error between the taped gradient and central differences.

    ``function`` maps a Tensor to a scalar Tensor and must be deterministic.
    The error for each coordinate is ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = Tensor(np.array(point.data if isinstance(point, Tensor) else point, dtype=DTYPE),
               requires_grad=True)
    with Tape() as tape:
        y = function(x)
    analytic = backward(tape, y).get(x)
    if analytic is None:
        analytic = np.zeros_like(x.data)
    base = x.data.copy()
    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = float(function(Tensor(base)).data)
            flat[i] = orig - epsilon
            fm = float(function(Tensor(base)).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise AutodiffError(f"non-finite function value near coordinate {i}")
            num_flat[i] = (fp - fm) / (2.0 * epsilon)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
