"""Dense float64 tensors with tape-based reverse-mode differentiation.

Ops execute eagerly on numpy arrays. While a `Tape` is active (entered as a
context manager), every op whose inputs can influence a trainable parameter
appends a backward closure to it; replaying the list in reverse propagates
gradients in exact reverse execution order, so no topological sort is
needed. Ops that only touch frozen parameters and plain inputs are not
recorded at all, and gradient products aimed at frozen parameters are
skipped, so a mostly-frozen model back-propagates only through the live
subgraph. With no active tape, ops are pure evaluation.

Only the ranks this package needs are supported: vectors, matrices, and
row-vector-onto-matrix bias broadcasting. No other broadcasting.
"""

from __future__ import annotations

import threading

import numpy as np

_tls = threading.local()


def _active() -> "Tape | None":
    return getattr(_tls, "tape", None)


class Tensor:
    """Dense float64 array plus a gradient slot filled in by the tape."""

    __slots__ = ("data", "grad", "needs_grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.needs_grad = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


class Param(Tensor):
    """Named leaf tensor. Frozen params never accumulate gradient and are
    never touched by optimizer steps."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name: str = "", trainable: bool = True):
        super().__init__(data)
        self.grad = np.zeros_like(self.data)
        self.name = name
        self.trainable = trainable

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        flag = "" if self.trainable else ", frozen"
        return f"Param({self.name!r}, shape={self.shape}{flag})"


def _wants(t: Tensor) -> bool:
    """Whether a gradient for t is worth computing."""
    if isinstance(t, Param):
        return t.trainable
    return t.needs_grad


class Tape:
    """Execution-ordered record of ops; backward replays it in reverse.

    One tape per training step; a tape and the params it touches form a
    single-threaded unit (the active tape is thread-local).
    """

    def __init__(self):
        self._ops = []  # (output tensor, backward closure)

    def __enter__(self):
        if _active() is not None:
            raise RuntimeError("a tape is already active on this thread")
        _tls.tape = self
        return self

    def __exit__(self, *exc):
        _tls.tape = None
        return False

    def __len__(self):
        return len(self._ops)

    def clear(self):
        """Drop recorded ops. Parameter values are untouched."""
        self._ops.clear()

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(param) into every trainable Param reachable
        from `loss`. Frozen params keep zero gradient."""
        if loss.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {loss.shape}"
            )
        loss.grad = np.ones_like(loss.data)
        for out, bwd in reversed(self._ops):
            if out.grad is not None:
                bwd(out.grad)


def backward(loss: Tensor) -> None:
    """Run backward on the currently active tape."""
    tape = _active()
    if tape is None:
        raise RuntimeError("backward() called with no active tape")
    tape.backward(loss)


def _record(out: Tensor, bwd, inputs) -> None:
    """Mark out as gradient-bearing and push the closure, but only when a
    tape is active and some input can reach a trainable parameter."""
    tape = _active()
    if tape is not None and any(_wants(t) for t in inputs):
        out.needs_grad = True
        tape._ops.append((out, bwd))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        if _wants(a):
            _accum(a, g @ b.data.T)
        if _wants(b):
            _accum(b, a.data.T @ g)

    _record(out, bwd, (a, b))
    return out


def vecmat(v: Tensor, w: Tensor) -> Tensor:
    """Vector-matrix product [k] @ [k, n] -> [n]."""
    if v.ndim != 1 or w.ndim != 2 or v.shape[0] != w.shape[0]:
        raise ValueError(f"vecmat: incompatible shapes {v.shape} x {w.shape}")
    out = Tensor(v.data @ w.data)

    def bwd(g):
        if _wants(v):
            _accum(v, w.data @ g)
        if _wants(w):
            _accum(w, np.outer(v.data, g))

    _record(out, bwd, (v, w))
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also allows adding a length-d bias row to a [T, d]
    matrix (gradient to the bias sums over rows)."""
    bias_case = a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]
    if not bias_case and a.shape != b.shape:
        raise ValueError(f"add: incompatible shapes {a.shape} + {b.shape}")
    out = Tensor(a.data + b.data)

    def bwd(g):
        if _wants(a):
            _accum(a, g)
        if _wants(b):
            _accum(b, g.sum(axis=0) if bias_case else g)

    _record(out, bwd, (a, b))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"sub: incompatible shapes {a.shape} - {b.shape}")
    out = Tensor(a.data - b.data)

    def bwd(g):
        if _wants(a):
            _accum(a, g)
        if _wants(b):
            _accum(b, -g)

    _record(out, bwd, (a, b))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul: incompatible shapes {a.shape} * {b.shape}")
    out = Tensor(a.data * b.data)

    def bwd(g):
        if _wants(a):
            _accum(a, g * b.data)
        if _wants(b):
            _accum(b, g * a.data)

    _record(out, bwd, (a, b))
    return out


def scale(x: Tensor, s) -> Tensor:
    """x scaled by a python float or a scalar Tensor/Param. A scalar tensor
    receives sum(g * x) as its gradient, so a learnable factor trains."""
    if isinstance(s, Tensor):
        if s.data.size != 1:
            raise ValueError(f"scale factor must be scalar, got shape {s.shape}")
        out = Tensor(x.data * s.data.reshape(()))

        def bwd(g):
            if _wants(x):
                _accum(x, g * s.data.reshape(()))
            if _wants(s):
                _accum(s, np.asarray(np.sum(g * x.data)).reshape(s.data.shape))

        _record(out, bwd, (x, s))
        return out

    c = float(s)
    out = Tensor(x.data * c)

    def bwd_const(g):
        _accum(x, g * c)

    _record(out, bwd_const, (x,))
    return out


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""
    mask = x.data > 0.0
    out = Tensor(np.where(mask, x.data, 0.0))

    def bwd(g):
        _accum(x, g * mask)

    _record(out, bwd, (x,))
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row of x to zero mean and unit (biased) variance, then
    apply the gamma/beta affine. eps sits inside the square root."""
    if eps <= 0.0:
        raise ValueError(f"layer_norm: eps must be positive, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(
            f"layer_norm: gamma/beta {gamma.shape}/{beta.shape} do not match "
            f"feature dim {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(xhat * gamma.data + beta.data)

    def bwd(g):
        reduce_rows = (lambda a: a.sum(axis=0)) if x.ndim == 2 else (lambda a: a)
        if _wants(gamma):
            _accum(gamma, reduce_rows(g * xhat))
        if _wants(beta):
            _accum(beta, reduce_rows(g))
        if _wants(x):
            dxhat = g * gamma.data
            dx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            _accum(x, dx)

    _record(out, bwd, (x, gamma, beta))
    return out


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis of a vector or matrix, max-subtracted."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        _accum(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    _record(out, bwd, (x,))
    return out


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label].

    Backward is (softmax - one_hot) / batch. Labels out of [0, K) raise
    IndexError.
    """
    if logits.ndim != 2:
        raise ValueError(f"softmax_cross_entropy expects [B, K] logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise IndexError(f"label {bad} out of range for {k} classes")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    nll = lse - z[np.arange(b), labels]
    out = Tensor(nll.mean())

    def bwd(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(b), labels] -= 1.0
        _accum(logits, (float(g) / b) * p)

    _record(out, bwd, (logits,))
    return out


def transpose(x: Tensor) -> Tensor:
    out = Tensor(x.data.T)

    def bwd(g):
        _accum(x, g.T)

    _record(out, bwd, (x,))
    return out


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(x.data[:, start:stop])

    def bwd(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        _accum(x, full)

    _record(out, bwd, (x,))
    return out


def concat_cols(parts: list) -> Tensor:
    widths = [p.shape[1] for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))

    def bwd(g):
        offset = 0
        for p, w in zip(parts, widths):
            if _wants(p):
                _accum(p, g[:, offset : offset + w])
            offset += w

    _record(out, bwd, parts)
    return out


def mean_rows(x: Tensor) -> Tensor:
    """Mean over the time (row) axis of a [T, d] matrix."""
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"mean_rows expects a non-empty [T, d] matrix, got {x.shape}")
    t = x.shape[0]
    out = Tensor(x.data.mean(axis=0))

    def bwd(g):
        _accum(x, np.broadcast_to(g / t, x.data.shape))

    _record(out, bwd, (x,))
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())

    def bwd(g):
        _accum(x, np.broadcast_to(g, x.data.shape))

    _record(out, bwd, (x,))
    return out


def lincomb(coeffs: Tensor, tensors: list) -> Tensor:
    """Linear combination sum_i coeffs[i] * tensors[i] of same-shaped
    tensors; gradients flow to the coefficient vector and every term."""
    n = coeffs.data.shape[0] if coeffs.ndim == 1 else -1
    if coeffs.ndim != 1 or n != len(tensors):
        raise ValueError(
            f"lincomb: {len(tensors)} tensors vs coefficient shape {coeffs.shape}"
        )
    acc = np.zeros_like(tensors[0].data)
    for c, t in zip(coeffs.data, tensors):
        acc += c * t.data
    out = Tensor(acc)

    def bwd(g):
        if _wants(coeffs):
            dc = np.array([np.sum(g * t.data) for t in tensors])
            _accum(coeffs, dc)
        for c, t in zip(coeffs.data, tensors):
            if _wants(t):
                _accum(t, c * g)

    _record(out, bwd, [coeffs, *tensors])
    return out


def stack_rows(vectors: list) -> Tensor:
    """Stack length-d vectors into a [B, d] matrix."""
    out = Tensor(np.stack([v.data for v in vectors], axis=0))

    def bwd(g):
        for i, v in enumerate(vectors):
            if _wants(v):
                _accum(v, g[i])

    _record(out, bwd, vectors)
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b, the everywhere-used affine map."""
    return add(matmul(x, w), b)


def linear_vec(v: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """v @ w + b for a single vector."""
    return add(vecmat(v, w), b)


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(f, params, h: float = 1e-5, n_probes: int = 100, seed: int = 0) -> float:
    """Max relative disagreement between tape gradients of the scalar f()
    and central finite differences at randomly probed coordinates.

    f must be a pure function of the given params (re-evaluated ~2*n_probes
    times). The first probes cover each param once, the rest are uniform.
    Relative error uses a 1e-12 floor so exactly-zero gradients compare as 0.
    Caller is responsible for keeping relu pre-activations away from the
    kink relative to h.
    """
    if not (1e-7 <= h <= 1e-4):
        raise ValueError(f"grad_check: h must be in [1e-7, 1e-4], got {h}")
    params = [p for p in params]
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    analytic = [np.array(p.grad, copy=True) for p in params]

    gen = np.random.default_rng(seed)
    order = list(range(len(params)))
    gen.shuffle(order)
    probes = []
    for i in order[: min(n_probes, len(order))]:
        probes.append((i, int(gen.integers(params[i].data.size))))
    while len(probes) < n_probes:
        i = int(gen.integers(len(params)))
        probes.append((i, int(gen.integers(params[i].data.size))))

    worst = 0.0
    for i, idx in probes:
        p = params[i]
        orig = p.data.flat[idx]
        p.data.flat[idx] = orig + h
        fp = f().item()
        p.data.flat[idx] = orig - h
        fm = f().item()
        p.data.flat[idx] = orig
        fd = (fp - fm) / (2.0 * h)
        a = analytic[i].flat[idx]
        rel = abs(a - fd) / max(abs(a), abs(fd), 1e-12)
        worst = max(worst, rel)
    return worst
