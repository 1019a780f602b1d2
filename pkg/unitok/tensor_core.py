"""Minimal reverse-mode automatic differentiation over numpy arrays.

Operations are recorded on the active :class:`Graph` (a tape) whenever one
of their inputs requires a gradient. Recording order is creation order, so
the tape is topologically sorted by construction and :func:`backward` is a
single reverse sweep over it.

Outside of a ``with Graph():`` block nothing is recorded and every operation
is a plain forward computation.
"""
import contextlib
import logging
import math
import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import DomainError, GraphError, OptimizerError, ShapeError

logger = logging.getLogger('unitok.tensor_core')

# tanh approximation of gelu
GELU_C = 0.7978845608
GELU_A = 0.044715

MASK_FILL = -1e9

_PRECISIONS = {'f32': np.float32, 'f64': np.float64}
_precision = {'dtype': np.float32}
_local = threading.local()


def default_dtype():
    return _precision['dtype']


def set_precision(name):
    """Select the dtype used for newly created tensors ('f32' or 'f64')"""
    if name not in _PRECISIONS:
        raise ValueError(f"Unknown precision '{name}', expected one of {sorted(_PRECISIONS)}")
    _precision['dtype'] = _PRECISIONS[name]


@contextlib.contextmanager
def precision(name):
    previous = _precision['dtype']
    set_precision(name)
    try:
        yield
    finally:
        _precision['dtype'] = previous


def _graph_stack():
    stack = getattr(_local, 'graphs', None)
    if stack is None:
        stack = _local.graphs = []
    return stack


def current_graph():
    stack = _graph_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense real array that can take part in a differentiation graph"""

    __slots__ = ('data', 'requires_grad', 'grad', 'name', '_graph')
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        self.data = np.array(data, dtype=dtype or default_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._graph = None

    @classmethod
    def _wrap(cls, array):
        out = cls.__new__(cls)
        out.data = array
        out.requires_grad = False
        out.grad = None
        out.name = None
        out._graph = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor._wrap(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self._graph is None:
            raise GraphError("Tensor was not produced inside a Graph")
        backward(self._graph, self)

    def __repr__(self):
        req = ', requires_grad=True' if self.requires_grad else ''
        nm = f', name={self.name}' if self.name else ''
        return f'<Tensor shape={self.shape} dtype={self.dtype}{req}{nm}>'

    # operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


class Node:
    """One recorded operation on the tape"""

    __slots__ = ('index', 'op', 'inputs', 'output', 'backward_fn')

    def __init__(self, index, op, inputs, output, backward_fn):
        self.index = index
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn

    @property
    def input_ids(self):
        return tuple(id(t) for t in self.inputs)

    def __repr__(self):
        return f'<Node #{self.index} {self.op}>'


class Graph:
    """Ordered tape of operations; usable as a context manager"""

    def __init__(self):
        self.nodes = []
        self._backward_done = False

    def __enter__(self):
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _graph_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, op, inputs, output, backward_fn):
        if self._backward_done:
            raise GraphError("Cannot record onto a graph that has already been differentiated; call reset()")
        node = Node(len(self.nodes), op, inputs, output, backward_fn)
        self.nodes.append(node)
        output._graph = self
        return node

    def ops(self):
        return [node.op for node in self.nodes]

    def reset(self):
        self.nodes = []
        self._backward_done = False


def backward(graph, loss):
    """Populate ``.grad`` of every requires_grad leaf reachable from ``loss``.

    Leaf gradients accumulate into an existing ``.grad``; leaves that the
    loss does not depend on are left untouched.
    """
    if loss.size != 1:
        raise GraphError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if graph._backward_done:
        raise GraphError("backward() already ran on this graph; call reset() before reusing it")

    produced = {id(node.output): node for node in graph.nodes}
    seed = np.ones_like(loss.data)
    graph._backward_done = True

    if id(loss) not in produced:
        if not loss.requires_grad:
            raise GraphError("Loss does not depend on any tensor that requires a gradient")
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return

    grads = {id(loss): seed}
    leaves = {}
    start = produced[id(loss)].index
    for node in reversed(graph.nodes[:start + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for tensor, tg in zip(node.inputs, node.backward_fn(g)):
            if tg is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key not in produced:
                leaves[key] = tensor
            grads[key] = grads[key] + tg if key in grads else tg

    for key, tensor in leaves.items():
        g = grads[key].astype(tensor.data.dtype, copy=False)
        tensor.grad = g if tensor.grad is None else tensor.grad + g


def zero_grad(params):
    for p in params:
        p.grad = None


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=default_dtype()))


def constant(array):
    """Wrap an array as a non-differentiable tensor without copying"""
    return Tensor._wrap(np.asarray(array))


def _make(op, inputs, data, backward_fn):
    out = Tensor._wrap(data)
    graph = current_graph()
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        graph.record(op, inputs, out, backward_fn)
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: operands cannot be broadcast together", a.shape, b.shape) from None


# elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('add', a, b)
    return _make('add', (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('sub', a, b)
    return _make('sub', (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('mul', a, b)
    return _make('mul', (a, b), a.data * b.data,
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('div', a, b)
    out = a.data / b.data

    def grad_fn(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make('div', (a, b), out, grad_fn)


def neg(a):
    a = as_tensor(a)
    return _make('neg', (a,), -a.data, lambda g: (-g,))


def scale(a, factor):
    a = as_tensor(a)
    factor = float(factor)
    return _make('scale', (a,), a.data * a.data.dtype.type(factor), lambda g: (g * factor,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make('exp', (a,), out, lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError(f"log of non-positive value (min {a.data.min()})")
    return _make('log', (a,), np.log(a.data), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError(f"sqrt of negative value (min {a.data.min()})")
    out = np.sqrt(a.data)
    return _make('sqrt', (a,), out, lambda g: (g * 0.5 / out,))


def abs_(a):
    a = as_tensor(a)
    return _make('abs', (a,), np.abs(a.data), lambda g: (g * np.sign(a.data),))


def relu(a):
    a = as_tensor(a)
    positive = a.data > 0
    return _make('relu', (a,), np.where(positive, a.data, 0).astype(a.data.dtype), lambda g: (g * positive,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make('tanh', (a,), out, lambda g: (g * (1 - out * out),))


def gelu(a):
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    inner = np.tanh(GELU_C * (x + GELU_A * x2 * x))
    out = 0.5 * x * (1 + inner)

    def grad_fn(g):
        d_inner = (1 - inner * inner) * GELU_C * (1 + 3 * GELU_A * x2)
        return (g * (0.5 * (1 + inner) + 0.5 * x * d_inner),)

    return _make('gelu', (a,), out.astype(x.dtype, copy=False), grad_fn)


def clip(a, low, high):
    """Clamp values; the gradient is zero wherever the clamp is active"""
    a = as_tensor(a)
    inside = (a.data >= low) & (a.data <= high)
    return _make('clip', (a,), np.clip(a.data, low, high), lambda g: (g * inside,))


_ELEMENTWISE = {
    'add': add,
    'sub': sub,
    'mul': mul,
    'div': div,
    'neg': neg,
    'scale': scale,
    'exp': exp,
    'log': log,
    'sqrt': sqrt,
    'abs': abs_,
    'relu': relu,
    'tanh': tanh,
    'gelu': gelu,
}


def elementwise(kind, *inputs, **kwargs):
    """Dispatch a pointwise operation by name"""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"Unknown elementwise kind '{kind}'") from None
    return fn(*inputs, **kwargs)


# reductions and reshaping

def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make('sum', (a,), np.asarray(out, dtype=a.data.dtype), grad_fn)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape to {tuple(shape)}", a.shape) from None
    return _make('reshape', (a,), out, lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make('transpose', (a,), np.transpose(a.data, axes), lambda g: (np.transpose(g, inverse),))


def swap_last(a):
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice, type(None), type(Ellipsis))) for i in items)


def getitem(a, index):
    a = as_tensor(a)
    basic = _is_basic_index(index)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make('getitem', (a,), a.data[index], grad_fn)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat: operands do not align", *[t.shape for t in tensors]) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make('concat', tuple(tensors), out, grad_fn)


def embedding(table, ids):
    """Gather rows of ``table`` for integer ``ids`` of any shape"""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DomainError(f"embedding id out of range [0, {table.shape[0]})")

    def grad_fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _make('embedding', (table,), table.data[ids], grad_fn)


# linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands with at least 2 dimensions", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul inner dimensions differ", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul batch dimensions cannot be broadcast", a.shape, b.shape) from None

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make('matmul', (a, b), a.data @ b.data, grad_fn)


def layer_norm(x, gamma, beta, eps=1e-5):
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError("layer_norm affine parameters must match the last axis", x.shape, gamma.shape, beta.shape)
    if eps <= 0:
        raise DomainError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data
    lead = tuple(range(x.ndim - 1))

    def grad_fn(g):
        dxhat = g * gamma.data
        dx = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make('layer_norm', (x, gamma, beta), out, grad_fn)


def l2_normalize(x, axis=-1, eps=1e-12):
    x = as_tensor(x)
    norm = sqrt(add(sum_(mul(x, x), axis=axis, keepdims=True), eps))
    return div(x, norm)


def softmax_cross_entropy(logits, targets, ignore_index=-100):
    """Mean negative log-likelihood over non-ignored rows of ``logits``"""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError("softmax_cross_entropy expects logits of shape [N, V]", logits.shape)
    n, v = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != n:
        raise ShapeError("softmax_cross_entropy: one target per row required", logits.shape, targets.shape)
    keep = targets != ignore_index
    if not np.all((targets[keep] >= 0) & (targets[keep] < v)):
        raise DomainError(f"target id outside [0, {v})")
    count = int(keep.sum())
    if count == 0:
        raise DomainError("all targets are ignored; the mean loss is undefined")

    rows = np.nonzero(keep)[0]
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    nll = lse[rows] - shifted[rows, targets[rows]]
    out = np.asarray(nll.sum() / count, dtype=logits.data.dtype)

    def grad_fn(g):
        probs = np.exp(shifted - lse[:, None])
        probs[rows, targets[rows]] -= 1
        probs[~keep] = 0
        return (probs * (g / count),)

    return _make('softmax_cross_entropy', (logits,), out, grad_fn)


def attention(q, k, v, causal=False, key_mask=None):
    """Scaled dot-product attention over [B, H, T, Dh] inputs.

    ``key_mask`` is an optional boolean [B, T] array, True where a key may
    be attended to.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.ndim != 4 or q.shape != k.shape or q.shape != v.shape:
        raise ShapeError("attention expects q, k, v of identical shape [B, H, T, Dh]", q.shape, k.shape, v.shape)
    b, _, t, dh = q.shape
    factor = 1.0 / math.sqrt(dh)
    scores = (q.data @ np.swapaxes(k.data, -1, -2)) * factor

    allowed = np.ones((b, 1, t, t), dtype=bool)
    if causal:
        allowed &= np.tril(np.ones((t, t), dtype=bool))[None, None]
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape != (b, t):
            raise ShapeError("attention key_mask must be [B, T]", key_mask.shape, (b, t))
        allowed &= key_mask[:, None, None, :]
    scores = np.where(allowed, scores, MASK_FILL)
    scores -= scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs *= allowed
    probs /= np.maximum(probs.sum(axis=-1, keepdims=True), np.finfo(probs.dtype).tiny)
    probs = probs.astype(q.data.dtype, copy=False)

    def grad_fn(g):
        dv = np.swapaxes(probs, -1, -2) @ g
        dp = g @ np.swapaxes(v.data, -1, -2)
        ds = probs * (dp - (dp * probs).sum(axis=-1, keepdims=True)) * factor
        return ds @ k.data, np.swapaxes(ds, -1, -2) @ q.data, dv

    return _make('attention', (q, k, v), probs @ v.data, grad_fn)


def conv2d(x, w, stride=1, padding=0):
    """2-D cross-correlation, x: [N, H, W, Cin], w: [kh, kw, Cin, Cout]"""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[-1] != w.shape[2]:
        raise ShapeError("conv2d expects x [N,H,W,Cin] and w [kh,kw,Cin,Cout]", x.shape, w.shape)
    kh, kw = w.shape[:2]
    n, h, wd, _ = x.shape
    pad = ((0, 0), (padding, padding), (padding, padding), (0, 0))
    xp = np.pad(x.data, pad)
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d kernel larger than padded input", x.shape, w.shape)
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    out = np.tensordot(windows, w.data.transpose(2, 0, 1, 3), axes=([3, 4, 5], [0, 1, 2]))

    def grad_fn(g):
        gw = np.tensordot(windows, g, axes=([0, 1, 2], [0, 1, 2])).transpose(1, 2, 0, 3)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += g @ w.data[i, j].T
        return gxp[:, padding:padding + h, padding:padding + wd, :], gw

    return _make('conv2d', (x, w), out.astype(x.data.dtype, copy=False), grad_fn)


# optimisation

def adamw_step(params, grads, state, lr, betas=(0.9, 0.95), eps=1e-8, weight_decay=0.05):
    """Decoupled-weight-decay Adam, updating ``params`` in place.

    Args:
        params: mapping name -> Tensor
        grads: mapping name -> ndarray or None; None skips the parameter
        state: mapping with 'm', 'v' and 't' sub-dicts (created on demand)

    Returns:
        (params, state)
    """
    beta1, beta2 = betas
    m_state = state.setdefault('m', {})
    v_state = state.setdefault('v', {})
    t_state = state.setdefault('t', {})

    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ShapeError(f"gradient for '{name}' does not match its parameter", grad.shape, param.shape)
        if not np.all(np.isfinite(grad)):
            raise OptimizerError(f"Non-finite gradient for parameter '{name}'", name)

        dtype = param.data.dtype
        m = m_state.get(name)
        v = v_state.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        elif m.shape != param.shape or v.shape != param.shape:
            raise ShapeError(f"optimizer state for '{name}' does not match its parameter", m.shape, param.shape)
        t = t_state.get(name, 0) + 1

        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)

        updated = param.data * (1 - lr * weight_decay) - lr * m_hat / (np.sqrt(v_hat) + eps)
        param.data = updated.astype(dtype, copy=False)
        m_state[name] = m.astype(dtype, copy=False)
        v_state[name] = v.astype(dtype, copy=False)
        t_state[name] = t

    return params, state


class AdamW:
    """Holds AdamW hyperparameters and state between steps"""

    def __init__(self, betas=(0.9, 0.95), eps=1e-8, weight_decay=0.05):
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = {'m': {}, 'v': {}, 't': {}}

    def step(self, params, lr):
        grads = {name: p.grad for name, p in params.items()}
        adamw_step(params, grads, self.state, lr, self.betas, self.eps, self.weight_decay)

    def state_arrays(self):
        """Flatten moments into a name -> array table for checkpointing"""
        table = {}
        for name, m in self.state['m'].items():
            table[f'optim.m.{name}'] = m
            table[f'optim.v.{name}'] = self.state['v'][name]
        return table

    def load_state_arrays(self, table, steps):
        self.state = {'m': {}, 'v': {}, 't': dict(steps)}
        for key, array in table.items():
            if key.startswith('optim.m.'):
                self.state['m'][key[len('optim.m.'):]] = array
            elif key.startswith('optim.v.'):
                self.state['v'][key[len('optim.v.'):]] = array
