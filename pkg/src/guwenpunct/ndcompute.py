"""Minimal dense-tensor core with reverse-mode automatic differentiation.

Tensors are flat row-major numpy arrays (f64 for verification, f32 allowed
for speed). Every op records its inputs and a gradient closure on the
result; ``backward`` walks the recorded graph once in reverse creation
order, which is always a valid topological order. Broadcasting is limited
to bias-add over the leading axis.
"""

import itertools
import math

import numpy as np

from .errors import BadTarget, EmptyLoss, NotScalar, ShapeMismatch

_seq = itertools.count()
_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


class Tensor:
    """Dense array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop", "_seq")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float64, np.float32):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents = ()
        self._backprop = None
        self._seq = next(_seq)

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def item(self):
        return float(self.data)

    def backward(self):
        return backward(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __repr__(self):
        return "Tensor(shape=%s, requires_grad=%s)" % (self.shape, self.requires_grad)


def _result(data, parents, backprop):
    """Graph-recording constructor used by ops (skips the zero-grad alloc)."""
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t._seq = next(_seq)
    if backprop is not None and _grad_enabled:
        t.requires_grad = True
        t._parents = parents
        t._backprop = backprop
    else:
        t.requires_grad = False
        t._parents = ()
        t._backprop = None
    return t


def _tracked(*tensors):
    return _grad_enabled and any(t.requires_grad for t in tensors)


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul %s @ %s" % (a.shape, b.shape))
    out = a.data @ b.data
    bp = None
    if _tracked(a, b):
        ad, bd = a.data, b.data
        def bp(g):
            return (g @ bd.T if a.requires_grad else None,
                    ad.T @ g if b.requires_grad else None)
    return _result(out, (a, b), bp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; also accepts a 1-D bias broadcast over the rows of a."""
    bias = b.data.ndim == 1 and a.data.ndim == 2 and b.shape[0] == a.shape[1]
    if not bias and a.shape != b.shape:
        raise ShapeMismatch("add %s + %s" % (a.shape, b.shape))
    out = a.data + b.data
    bp = None
    if _tracked(a, b):
        def bp(g):
            ga = g if a.requires_grad else None
            gb = None
            if b.requires_grad:
                gb = g.sum(axis=0) if bias else g
            return (ga, gb)
    return _result(out, (a, b), bp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch("mul %s * %s" % (a.shape, b.shape))
    out = a.data * b.data
    bp = None
    if _tracked(a, b):
        ad, bd = a.data, b.data
        def bp(g):
            return (g * bd if a.requires_grad else None,
                    g * ad if b.requires_grad else None)
    return _result(out, (a, b), bp)


def scale(a: Tensor, c: float) -> Tensor:
    out = a.data * c
    bp = None
    if _tracked(a):
        def bp(g):
            return (g * c,)
    return _result(out, (a,), bp)


def affine(x: Tensor, w: Tensor, h: Tensor, u: Tensor, b: Tensor) -> Tensor:
    """Fused x @ w + h @ u + b, the pre-activation of one recurrent gate."""
    if x.shape[1] != w.shape[0] or h.shape[1] != u.shape[0] or w.shape[1] != u.shape[1]:
        raise ShapeMismatch("affine %s@%s + %s@%s" % (x.shape, w.shape, h.shape, u.shape))
    if b.data.ndim != 1 or b.shape[0] != w.shape[1]:
        raise ShapeMismatch("affine bias %s" % (b.shape,))
    out = x.data @ w.data + h.data @ u.data + b.data
    bp = None
    if _tracked(x, w, h, u, b):
        xd, wd, hd, ud = x.data, w.data, h.data, u.data
        def bp(g):
            return (g @ wd.T if x.requires_grad else None,
                    xd.T @ g if w.requires_grad else None,
                    g @ ud.T if h.requires_grad else None,
                    hd.T @ g if u.requires_grad else None,
                    g.sum(axis=0) if b.requires_grad else None)
    return _result(out, (x, w, h, u, b), bp)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    y[~pos] = ex / (1.0 + ex)
    bp = None
    if _tracked(x):
        def bp(g):
            return (g * y * (1.0 - y),)
    return _result(y, (x,), bp)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    bp = None
    if _tracked(x):
        def bp(g):
            return (g * (1.0 - y * y),)
    return _result(y, (x,), bp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along one axis; rows with -inf entries get exact zeros."""
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    bp = None
    if _tracked(x):
        def bp(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            return ((g - dot) * y,)
    return _result(y, (x,), bp)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeMismatch("transpose needs a 2-D tensor, got %s" % (x.shape,))
    out = np.ascontiguousarray(x.data.T)
    bp = None
    if _tracked(x):
        def bp(g):
            return (g.T,)
    return _result(out, (x,), bp)


def concat(tensors, axis: int = 0) -> Tensor:
    datas = [t.data for t in tensors]
    ref_ndim = datas[0].ndim
    if any(d.ndim != ref_ndim for d in datas):
        raise ShapeMismatch("concat rank mismatch")
    out = np.concatenate(datas, axis=axis)
    bp = None
    if _tracked(*tensors):
        sizes = [d.shape[axis] for d in datas]
        offsets = np.cumsum(sizes)[:-1]
        parents = tuple(tensors)
        def bp(g):
            pieces = np.split(g, offsets, axis=axis)
            return tuple(p if t.requires_grad else None
                         for p, t in zip(pieces, parents))
    return _result(out, tuple(tensors), bp)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows of a 2-D tensor; gradient scatter-adds into the source."""
    idx = np.asarray(indices, dtype=np.intp)
    if x.data.ndim != 2:
        raise ShapeMismatch("gather_rows needs a 2-D tensor")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError("row index out of range")
    out = x.data[idx]
    bp = None
    if _tracked(x):
        rows, cols = x.shape
        def bp(g):
            buf = np.zeros((rows, cols), dtype=g.dtype)
            np.add.at(buf, idx, g)
            return (buf,)
    return _result(out, (x,), bp)


def masked_fill(x: Tensor, mask, value: float) -> Tensor:
    """Replace entries where mask is True by a constant; their gradient is zero."""
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.shape:
        raise ShapeMismatch("mask shape %s != tensor shape %s" % (m.shape, x.shape))
    out = np.where(m, value, x.data)
    bp = None
    if _tracked(x):
        def bp(g):
            return (np.where(m, 0.0, g),)
    return _result(out, (x,), bp)


def dropout(x: Tensor, p: float, rng) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if p <= 0.0:
        return x
    if p >= 1.0:
        raise ValueError("dropout rate must be < 1")
    mask = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    out = x.data * mask
    bp = None
    if _tracked(x):
        def bp(g):
            return (g * mask,)
    return _result(out, (x,), bp)


def tsum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())
    bp = None
    if _tracked(x):
        shape, dt = x.shape, x.data.dtype
        def bp(g):
            return (np.full(shape, g, dtype=dt),)
    return _result(out, (x,), bp)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean())
    bp = None
    if _tracked(x):
        shape, dt = x.shape, x.data.dtype
        def bp(g):
            return (np.full(shape, g / n, dtype=dt),)
    return _result(out, (x,), bp)


def cross_entropy(logits: Tensor, targets, ignore_index=None) -> Tensor:
    """Mean negative log-probability of the targets over non-ignored rows."""
    if logits.data.ndim != 2:
        raise ShapeMismatch("cross_entropy expects [T x C] logits")
    y = np.asarray(targets, dtype=np.intp)
    t_count, n_classes = logits.shape
    if y.shape != (t_count,):
        raise ShapeMismatch("targets length %d != %d rows" % (y.size, t_count))
    if ignore_index is None:
        valid = np.ones(t_count, dtype=bool)
    else:
        valid = y != ignore_index
    bad = valid & ((y < 0) | (y >= n_classes))
    if bad.any():
        raise BadTarget("targets outside [0, %d): %s" % (n_classes, y[bad][:5]))
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EmptyLoss("every position is ignored")

    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(t_count)
    picked = np.where(valid, logp[rows, np.where(valid, y, 0)], 0.0)
    out = np.asarray(-picked.sum() / n_valid)
    bp = None
    if _tracked(logits):
        p = np.exp(logp)
        def bp(g):
            d = p.copy()
            d[rows[valid], y[valid]] -= 1.0
            d[~valid] = 0.0
            return (d * (float(g) / n_valid),)
    return _result(out, (logits,), bp)


# ---------------------------------------------------------------------------
# graph traversal


class ComputeGraph:
    """The recorded subgraph behind one output, in creation order.

    Creation order is topological by construction: an op's inputs always
    exist before its result.
    """

    def __init__(self, nodes):
        self.nodes = nodes
        self.visit_counts = {}

    @classmethod
    def trace(cls, output: Tensor) -> "ComputeGraph":
        seen = set()
        nodes = []
        stack = [output]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            for p in t._parents:
                if p.requires_grad:
                    stack.append(p)
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes)

    def run_backward(self, output: Tensor):
        """Propagate d(output)/d(node) to every node, leaves accumulating .grad."""
        grads = {id(output): np.ones_like(output.data)}
        self.visit_counts = {id(n): 0 for n in self.nodes}
        for node in reversed(self.nodes):
            self.visit_counts[id(node)] += 1
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.grad is not None:
                node.grad += g
            if node._backprop is None:
                continue
            for parent, pg in zip(node._parents, node._backprop(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def backward(loss: Tensor) -> ComputeGraph:
    """Reverse-mode sweep from a scalar loss; repeated calls accumulate."""
    if loss.data.size != 1:
        raise NotScalar("backward needs a scalar, got shape %s" % (loss.shape,))
    graph = ComputeGraph.trace(loss)
    graph.run_backward(loss)
    return graph


def zero_grads(params):
    for t in (params.values() if isinstance(params, dict) else params):
        t.zero_grad()


# ---------------------------------------------------------------------------
# verification and optimization


def gradcheck(f, params: dict, eps: float = 1e-5,
              max_coords_per_tensor=None, rng=None,
              retry_eps=(1e-4, 1e-3), retry_threshold: float = 1e-5) -> float:
    """Compare reverse-mode gradients of f(params) against central differences.

    Returns the max over checked coordinates of
    |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|). Coordinates may be
    subsampled per tensor for large models. All tensors must be f64.

    Coordinates whose error at the base step exceeds retry_threshold are
    re-measured at the coarser retry steps and keep their best agreement:
    tiny gradients sit below the cancellation noise of a small step, while
    a wrong gradient rule disagrees at every step size.
    """
    for name, t in params.items():
        if t.data.dtype != np.float64:
            raise ValueError("gradcheck requires f64 tensors (%s is %s)" % (name, t.data.dtype))
    if rng is None:
        rng = np.random.default_rng(0)
    zero_grads(params)
    loss = f(params)
    backward(loss)

    def central_diff(flat, j, step):
        saved = flat[j]
        flat[j] = saved + step
        with no_grad():
            up = float(f(params).data)
        flat[j] = saved - step
        with no_grad():
            down = float(f(params).data)
        flat[j] = saved
        return (up - down) / (2.0 * step)

    worst = 0.0
    for name, t in params.items():
        ad = t.grad.reshape(-1)
        flat = t.data.reshape(-1)
        n = flat.size
        if max_coords_per_tensor is not None and n > max_coords_per_tensor:
            coords = rng.choice(n, size=max_coords_per_tensor, replace=False)
        else:
            coords = range(n)
        for j in coords:
            err = None
            for step in (eps,) + tuple(retry_eps):
                fd = central_diff(flat, j, step)
                this = abs(ad[j] - fd) / max(1e-8, abs(ad[j]) + abs(fd))
                err = this if err is None else min(err, this)
                if err <= retry_threshold:
                    break
            if err > worst:
                worst = err
    return worst


class AdamState:
    """First/second moment accumulators, keyed like the parameter dict."""

    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected adaptive-moment update, in place."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeMismatch("grad shape %s != param shape %s for %s"
                                % (g.shape, p.data.shape, name))
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[name]
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total
