"""Reverse-mode automatic differentiation over dense numpy arrays.

A `Tape` records the primitive operations executed while it is active
(innermost `with Tape() as tape:` wins).  `tape.backward(loss)` replays the
recorded adjoint closures in exact reverse order; tensors consumed by
several branches accumulate the sum of branch adjoints.  Forward evaluation
with no active tape records nothing and is safe to run concurrently over
shared weights.

Only the broadcasting patterns the model needs are implemented: matrix @
matrix, vector @ matrix, matrix + row bias, scalar * array.  Ops preserve
the dtype of their operands (the renderer trains in float32 when its
FieldConfig asks for it); `Tensor(...)` itself defaults to float64, which
is what every gradient check and oracle comparison runs in.

Elementwise transcendentals run on flattened views with preallocated
outputs: numpy's SIMD fast paths and the allocator behave much better that
way for the activation-sized arrays the renderer produces.
"""

import numpy as np

_TAPE_STACK = []


class DimensionError(ValueError):
    """Shapes do not line up for the requested operation."""


class Tape:
    """Ordered record of adjoint closures for one forward computation."""

    __slots__ = ("_steps",)

    def __init__(self):
        self._steps = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def record(self, fn):
        self._steps.append(fn)

    def backward(self, out, seed=None):
        """Seed `out.grad` (with ones unless `seed` given) and run adjoints."""
        if seed is None:
            seed = np.ones_like(out.data)
        _acc(out, seed, own=True)
        for fn in reversed(self._steps):
            fn()


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record(fn):
    """Append an adjoint closure to the active tape, if any."""
    tape = active_tape()
    if tape is not None:
        tape.record(fn)


def record_for(out, fn):
    """Record `fn`, skipped at replay when `out` never received an adjoint
    (its value fed no path to the loss)."""
    tape = active_tape()
    if tape is not None:
        tape.record(lambda: None if out.grad is None else fn())


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "_galias")

    def __init__(self, data, dtype=np.float64):
        arr = np.array(data, dtype=dtype)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor rejects non-finite entries at construction")
        self.data = arr
        self.grad = None
        self._galias = False

    @classmethod
    def wrap(cls, data):
        """Wrap an array produced by an op without copy or finiteness check."""
        obj = object.__new__(cls)
        obj.data = data
        obj.grad = None
        obj._galias = False
        return obj

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)


def _acc(t, g, own=False):
    """Accumulate adjoint `g` into `t.grad`.

    `own=True` promises `g` is a fresh array no other consumer holds, so the
    first contribution may alias it.  Aliased grads are never mutated in
    place: with reverse-order replay an upstream `out.grad` is final by the
    time its adjoint runs, so aliasing is safe until a second contribution
    arrives, which allocates a fresh sum.
    """
    if t.grad is None:
        t.grad = g
        t._galias = not own
    elif t._galias:
        t.grad = t.grad + g
        t._galias = False
    else:
        t.grad += g


def _data(x):
    if isinstance(x, Tensor):
        return x.data
    if isinstance(x, np.ndarray):
        return x          # keep caller dtype (float32 graphs stay float32)
    return np.asarray(x, dtype=np.float64)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None
        t._galias = False


def _ew(ufunc, x, *extra):
    """Apply a ufunc over a flat view into a fresh buffer (fast SIMD path)."""
    if not x.flags.c_contiguous:
        return ufunc(x, *extra)
    y = np.empty_like(x)
    ufunc(x.reshape(-1), *[e.reshape(-1) for e in extra], out=y.reshape(-1))
    return y


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b):
    ad, bd = _data(a), _data(b)
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise DimensionError(f"matmul expects 1-D/2-D operands, got {ad.ndim}-D and {bd.ndim}-D")
    if ad.shape[-1] != bd.shape[0]:
        raise DimensionError(f"matmul inner dims disagree: {ad.shape} @ {bd.shape}")
    out = Tensor.wrap(ad @ bd)

    def bwd():
        g = out.grad
        if isinstance(a, Tensor):
            if bd.ndim == 1:
                _acc(a, np.outer(g, bd) if ad.ndim == 2 else g * bd, own=True)
            else:
                _acc(a, g @ bd.T, own=True)
        if isinstance(b, Tensor):
            if ad.ndim == 1:
                _acc(b, np.outer(ad, g) if bd.ndim == 2 else ad * g, own=True)
            else:
                _acc(b, ad.T @ g, own=True)

    record_for(out, bwd)
    return out


def _bias_like(big, small):
    return big.ndim == 2 and small.ndim == 1 and big.shape[1] == small.shape[0]


def _addsub_check(ad, bd, opname):
    if ad.shape != bd.shape and not _bias_like(ad, bd) and not _bias_like(bd, ad) \
            and ad.ndim != 0 and bd.ndim != 0:
        raise DimensionError(f"{opname} shapes incompatible: {ad.shape} vs {bd.shape}")


def _unbroadcast(g, shape, negate=False):
    if g.shape == shape:
        return (-g, True) if negate else (g, False)
    if shape == ():
        s = g.sum()
        return (-s if negate else s, True)
    s = g.sum(axis=0)
    if negate:
        np.negative(s, out=s)
    return s, True


def add(a, b):
    ad, bd = _data(a), _data(b)
    _addsub_check(ad, bd, "add")
    out = Tensor.wrap(ad + bd)

    def bwd():
        g = out.grad
        if isinstance(a, Tensor):
            ga, own = _unbroadcast(g, ad.shape)
            _acc(a, ga, own=own)
        if isinstance(b, Tensor):
            gb, own = _unbroadcast(g, bd.shape)
            _acc(b, gb, own=own)

    record_for(out, bwd)
    return out


def sub(a, b):
    ad, bd = _data(a), _data(b)
    _addsub_check(ad, bd, "sub")
    out = Tensor.wrap(ad - bd)

    def bwd():
        g = out.grad
        if isinstance(a, Tensor):
            ga, own = _unbroadcast(g, ad.shape)
            _acc(a, ga, own=own)
        if isinstance(b, Tensor):
            gb, own = _unbroadcast(g, bd.shape, negate=True)
            _acc(b, gb, own=own)

    record_for(out, bwd)
    return out


def neg(a):
    out = Tensor.wrap(-a.data)
    record_for(out, lambda: _acc(a, -out.grad, own=True))
    return out


def mul(a, b):
    """Elementwise product; either side may be a scalar (python or 0-d)."""
    ad, bd = _data(a), _data(b)
    if ad.shape != bd.shape and ad.ndim != 0 and bd.ndim != 0:
        raise DimensionError(f"mul shapes incompatible: {ad.shape} * {bd.shape}")
    out = Tensor.wrap(ad * bd)

    def bwd():
        g = out.grad
        if isinstance(a, Tensor):
            _acc(a, _scalar_reduce(g * bd, ad.shape), own=True)
        if isinstance(b, Tensor):
            _acc(b, _scalar_reduce(g * ad, bd.shape), own=True)

    record_for(out, bwd)
    return out


def _scalar_reduce(g, shape):
    return g.sum() if shape == () and g.shape != () else g


def scale(a, s):
    s = float(s)
    out = Tensor.wrap(a.data * s)
    record_for(out, lambda: _acc(a, out.grad * s, own=True))
    return out


def exp(a):
    out = Tensor.wrap(_ew(np.exp, a.data))
    record_for(out, lambda: _acc(a, out.grad * out.data, own=True))
    return out


def tanh(a):
    out = Tensor.wrap(_ew(np.tanh, a.data))

    def bwd():
        y = out.data
        t = _ew(np.square, y)
        np.subtract(1.0, t, out=t)
        t *= out.grad
        _acc(a, t, own=True)

    record_for(out, bwd)
    return out


def sigmoid(a):
    out = Tensor.wrap(_sigmoid(a.data))

    def bwd():
        y = out.data
        t = np.subtract(1.0, y)
        t *= y
        t *= out.grad
        _acc(a, t, own=True)

    record_for(out, bwd)
    return out


def _sigmoid(x):
    y = _ew(np.tanh, 0.5 * x)
    y += 1.0
    y *= 0.5
    return y


def softplus(a):
    # log(1 + e^x) computed stably; derivative is the logistic function
    x = a.data
    out = Tensor.wrap(_ew(np.logaddexp, np.zeros_like(x), x))

    def bwd():
        t = _sigmoid(x)
        t *= out.grad
        _acc(a, t, own=True)

    record_for(out, bwd)
    return out


def sum_all(a):
    out = Tensor.wrap(np.asarray(a.data.sum()))
    record_for(out, lambda: _acc(a, np.broadcast_to(out.grad, a.data.shape)))
    return out


def mean_all(a):
    n = a.data.size
    out = Tensor.wrap(np.asarray(a.data.sum() / n))
    record_for(out, lambda: _acc(a, np.broadcast_to(out.grad / n, a.data.shape)))
    return out


def dot(a, b):
    ad, bd = _data(a), _data(b)
    if ad.shape != bd.shape or ad.ndim != 1:
        raise DimensionError(f"dot expects equal 1-D shapes, got {ad.shape}, {bd.shape}")
    out = Tensor.wrap(np.asarray(ad @ bd))

    def bwd():
        g = out.grad
        if isinstance(a, Tensor):
            _acc(a, g * bd, own=True)
        if isinstance(b, Tensor):
            _acc(b, g * ad, own=True)

    record_for(out, bwd)
    return out


def l2norm(a, eps=1e-30):
    """Euclidean norm of all entries (flattened); safe adjoint at zero."""
    x = a.data
    n = float(np.sqrt((x * x).sum()))
    out = Tensor.wrap(np.asarray(n))
    record_for(out, lambda: _acc(a, (float(out.grad) / max(n, eps)) * x, own=True))
    return out


def unit(a, eps=1e-30):
    """Normalize a vector to unit length."""
    x = a.data
    n = max(float(np.linalg.norm(x)), eps)
    y = x / n
    out = Tensor.wrap(y)

    def bwd():
        g = out.grad
        _acc(a, (g - y * (y @ g)) / n, own=True)

    record_for(out, bwd)
    return out


def softmax_rows(a):
    """Row-stabilized softmax; every row of the result sums to 1."""
    x = _data(a)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax_rows requires finite entries")
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor.wrap(y[0] if squeeze else y)

    def bwd():
        if not isinstance(a, Tensor):
            return
        g = out.grad if not squeeze else out.grad[None, :]
        gx = y * (g - (g * y).sum(axis=1, keepdims=True))
        _acc(a, gx[0] if squeeze else gx, own=True)

    record_for(out, bwd)
    return out


def concat(parts, axis=0):
    """Concatenate tensors/arrays; gradient flows only into Tensor parts."""
    datas = [_data(p) for p in parts]
    out = Tensor.wrap(np.concatenate(datas, axis=axis))
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def bwd():
        g = out.grad
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if isinstance(p, Tensor):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _acc(p, g[tuple(sl)])

    record_for(out, bwd)
    return out


def take_row(a, i):
    m = a.data.shape[0]
    if not (-m <= i < m):
        raise DimensionError(f"row {i} out of range for {a.data.shape}")
    out = Tensor.wrap(a.data[i].copy())

    def bwd():
        g = np.zeros_like(a.data)
        g[i] = out.grad
        _acc(a, g, own=True)

    record_for(out, bwd)
    return out


def broadcast_row(a, m):
    """Tile a vector into m identical rows; adjoint sums over rows."""
    out = Tensor.wrap(np.broadcast_to(a.data, (m, a.data.shape[0])).copy())
    record_for(out, lambda: _acc(a, out.grad.sum(axis=0), own=True))
    return out


def reshape(a, shape):
    out = Tensor.wrap(a.data.reshape(shape))
    record_for(out, lambda: _acc(a, out.grad.reshape(a.data.shape)))
    return out


def transpose(a):
    out = Tensor.wrap(a.data.T.copy())
    record_for(out, lambda: _acc(a, out.grad.T.copy(), own=True))
    return out
