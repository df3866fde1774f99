"""Dense float64 tensors with reverse-mode differentiation.

Covers exactly the operations the controller network and its losses need:
3x3/1x1 same-padding convolutions, per-channel affine normalization, dense
layers, relu, row-wise log-softmax, elementwise arithmetic with clipping,
and scalar reductions.  No broadcasting; every op validates shapes.

Gradients are recorded on an explicit :class:`Tape`.  Ops executed outside
any active tape run forward-only, which is what rollout collection uses.
"""
from __future__ import annotations

import numpy as np

_TAPES: list["Tape"] = []

# Weight gradients of dense/conv layers are deferred during a backward sweep
# and reduced with one BLAS call per parameter at the end; backward passes
# are therefore not re-entrant (one at a time per process).
_DEFERRED: dict[int, tuple["Tensor", str, list]] = {}


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Execution-ordered record of differentiable ops.

    Execution order is a valid topological order, so the backward pass is a
    single reverse sweep that visits each recorded node exactly once.
    """

    def __init__(self):
        self.ops: list[tuple[Tensor, object]] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def backward(self, loss: Tensor) -> None:
        """Accumulate dloss/dx into ``.grad`` of every recorded tensor.

        ``loss`` must be scalar.  Intermediate grads and the op record are
        released afterwards; only leaf tensors keep their gradients.
        """
        if loss.data.shape != ():
            raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones((), dtype=np.float64)
        try:
            for out, fn in reversed(self.ops):
                if out.grad is not None:
                    fn(out.grad)
                    out.grad = None
            _flush_deferred()
        finally:
            _DEFERRED.clear()
            self.ops.clear()


def _record(out: Tensor, parents: tuple[Tensor, ...], fn) -> Tensor:
    if _TAPES and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _TAPES[-1].ops.append((out, fn))
    return out


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _acc_own(t: Tensor, g: np.ndarray) -> None:
    """Accumulate a freshly allocated gradient (no defensive copy)."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


def _defer(t: Tensor, kind: str, payload) -> None:
    entry = _DEFERRED.get(id(t))
    if entry is None:
        _DEFERRED[id(t)] = (t, kind, [payload])
    else:
        entry[2].append(payload)


def _flush_deferred() -> None:
    for t, kind, payloads in _DEFERRED.values():
        if kind == "dense":
            g_stack = np.stack([p[0] for p in payloads])
            x_stack = np.stack([p[1] for p in payloads])
            _acc_own(t, g_stack.T @ x_stack)
        elif kind == "bias":
            _acc_own(t, np.stack(payloads).sum(axis=0))
        elif kind == "conv":
            g_stack = np.stack([p[0] for p in payloads])
            p_stack = np.stack([p[1] for p in payloads])
            grad = np.tensordot(g_stack, p_stack, axes=([0, 2], [0, 2]))
            _acc_own(t, grad.reshape(t.data.shape))


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out = Tensor(a.data + b.data)

    def back(g):
        _acc(a, g)
        _acc(b, g)

    return _record(out, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)

    def back(g):
        _acc(a, g)
        _acc_own(b, -g)

    return _record(out, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)

    def back(g):
        _acc_own(a, g * b.data)
        _acc_own(b, g * a.data)

    return _record(out, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)

    def back(g):
        _acc_own(a, g * c)

    return _record(out, (a,), back)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data)

    def back(g):
        _acc_own(a, 2.0 * a.data * g)

    return _record(out, (a,), back)


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))

    def back(g):
        _acc_own(a, g * out.data)

    return _record(out, (a,), back)


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))

    def back(g):
        _acc_own(a, g / a.data)

    return _record(out, (a,), back)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))

    def back(g):
        _acc_own(a, g * (a.data > 0.0))

    return _record(out, (a,), back)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is zero outside the open interval."""
    out = Tensor(np.clip(a.data, lo, hi))
    inside = (a.data > lo) & (a.data < hi)

    def back(g):
        _acc_own(a, g * inside)

    return _record(out, (a,), back)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to the first argument."""
    _check_same_shape(a, b, "minimum")
    take_a = a.data <= b.data
    out = Tensor(np.where(take_a, a.data, b.data))

    def back(g):
        _acc_own(a, g * take_a)
        _acc_own(b, g * ~take_a)

    return _record(out, (a, b), back)


# --------------------------------------------------------------------- shape

def flatten(a: Tensor) -> Tensor:
    shape = a.data.shape
    out = Tensor(a.data.reshape(-1))

    def back(g):
        _acc(a, g.reshape(shape))

    return _record(out, (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    out = Tensor(a.data.reshape(shape))

    def back(g):
        _acc(a, g.reshape(old))

    return _record(out, (a,), back)


def stack(tensors: list[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    shape = tensors[0].data.shape
    for t in tensors[1:]:
        if t.data.shape != shape:
            raise ValueError(f"stack: shape mismatch {t.data.shape} vs {shape}")
    out = Tensor(np.stack([t.data for t in tensors]))

    def back(g):
        for i, t in enumerate(tensors):
            _acc(t, g[i])

    return _record(out, tuple(tensors), back)


# ---------------------------------------------------------------- reductions

def ssum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())
    shape = a.data.shape

    def back(g):
        _acc_own(a, np.full(shape, float(g)))

    return _record(out, (a,), back)


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.mean())
    shape = a.data.shape

    def back(g):
        _acc_own(a, np.full(shape, float(g) / n))

    return _record(out, (a,), back)


# -------------------------------------------------------------- linear maps

def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = w @ x + b for x of shape (n,), w of (m, n), b of (m,)."""
    if x.data.ndim != 1 or w.data.ndim != 2 or w.data.shape[1] != x.data.shape[0]:
        raise ValueError(f"dense: incompatible shapes x{x.data.shape} w{w.data.shape}")
    if b.data.shape != (w.data.shape[0],):
        raise ValueError(f"dense: bias shape {b.data.shape} != ({w.data.shape[0]},)")
    out = Tensor(w.data @ x.data + b.data)

    def back(g):
        if w.requires_grad:
            _defer(w, "dense", (g, x.data))
        if b.requires_grad:
            _defer(b, "bias", g)
        if x.requires_grad:
            _acc_own(x, w.data.T @ g)

    return _record(out, (x, w, b), back)


def _im2col(data: np.ndarray, k: int) -> np.ndarray:
    """(C, H, W) -> (C*k*k, H*W) patch matrix for a same-padded k x k window."""
    c, h, wd = data.shape
    pad = (k - 1) // 2
    if pad:
        xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
        xp[:, pad:pad + h, pad:pad + wd] = data
    else:
        xp = data
    patches = np.empty((c, k, k, h, wd))
    for i in range(k):
        for j in range(k):
            patches[:, i, j] = xp[:, i:i + h, j:j + wd]
    return patches.reshape(c * k * k, h * wd)


def _col2im(gp: np.ndarray, c: int, h: int, wd: int, k: int) -> np.ndarray:
    """Adjoint of _im2col: scatter (C*k*k, H*W) gradients back to (C, H, W)."""
    pad = (k - 1) // 2
    gp = gp.reshape(c, k, k, h, wd)
    gxp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    for i in range(k):
        for j in range(k):
            gxp[:, i:i + h, j:j + wd] += gp[:, i, j]
    return gxp[:, pad:pad + h, pad:pad + wd] if pad else gxp


def conv2d(x: Tensor, w: Tensor) -> Tensor:
    """Same-padding stride-1 cross-correlation.

    x: (C_in, H, W); w: (C_out, C_in, k, k) with odd k.  Zero padding of
    (k-1)/2 keeps the spatial size.  im2col keeps the inner product in BLAS;
    patches are ordered (C_in, k, k) to match the kernel layout so neither
    pass needs a transpose.
    """
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ValueError(f"conv2d: expected 3-d input and 4-d kernels, got {x.data.shape}, {w.data.shape}")
    c_out, c_in, kh, kw = w.data.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d: kernels must be square with odd size, got {kh}x{kw}")
    if x.data.shape[0] != c_in:
        raise ValueError(f"conv2d: input has {x.data.shape[0]} channels, kernels expect {c_in}")
    _, h, wd = x.data.shape
    pmat = _im2col(x.data, kh)
    wmat = w.data.reshape(c_out, -1)
    out = Tensor((wmat @ pmat).reshape(c_out, h, wd))

    def back(g):
        g_flat = g.reshape(c_out, h * wd)
        if w.requires_grad:
            _defer(w, "conv", (g_flat, pmat))
        if x.requires_grad:
            _acc_own(x, _col2im(wmat.T @ g_flat, c_in, h, wd, kh))

    return _record(out, (x, w), back)


def _norm_stats(flat: np.ndarray, eps: float):
    mu = flat.mean(axis=1)
    centered = flat - mu[:, None]
    var = (centered * centered).mean(axis=1)
    inv = (1.0 / np.sqrt(var + eps))[:, None]
    return centered * inv, inv


def _norm_back(g2: np.ndarray, xhat: np.ndarray, inv: np.ndarray,
               gain: np.ndarray) -> np.ndarray:
    gx_hat = g2 * gain[:, None]
    m1 = gx_hat.mean(axis=1)
    m2 = (gx_hat * xhat).mean(axis=1)
    return inv * (gx_hat - m1[:, None] - xhat * m2[:, None])


def residual_block(x: Tensor, conv1_w: Tensor, norm1_g: Tensor, norm1_b: Tensor,
                   conv2_w: Tensor, norm2_g: Tensor, norm2_b: Tensor,
                   proj_w: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """conv-norm-relu-conv-norm plus a (possibly projected) shortcut, relu'd.

    Equivalent to composing conv2d/channel_norm/relu/add but recorded as one
    op; the projection, used when channel counts differ, is a 1x1 conv.
    """
    c_out, c_in, k, _ = conv1_w.data.shape
    if x.data.ndim != 3 or x.data.shape[0] != c_in:
        raise ValueError(f"residual_block: input {x.data.shape} does not feed kernels {conv1_w.data.shape}")
    if conv2_w.data.shape != (c_out, c_out, k, k):
        raise ValueError(f"residual_block: second conv must be {(c_out, c_out, k, k)}, got {conv2_w.data.shape}")
    if proj_w is None:
        if c_in != c_out:
            raise ValueError(f"residual_block: {c_in} -> {c_out} channels requires a projection kernel")
    elif proj_w.data.shape != (c_out, c_in, 1, 1):
        raise ValueError(f"residual_block: projection must be a 1x1 conv, got {proj_w.data.shape}")
    _, h, wd = x.data.shape
    n = h * wd

    pmat_x = _im2col(x.data, k)
    w1 = conv1_w.data.reshape(c_out, -1)
    xhat1, inv1 = _norm_stats(w1 @ pmat_x, eps)
    a1 = xhat1 * norm1_g.data[:, None] + norm1_b.data[:, None]
    mask1 = a1 > 0.0
    r1 = a1 * mask1
    pmat_r = _im2col(r1.reshape(c_out, h, wd), k)
    w2 = conv2_w.data.reshape(c_out, -1)
    xhat2, inv2 = _norm_stats(w2 @ pmat_r, eps)
    a2 = xhat2 * norm2_g.data[:, None] + norm2_b.data[:, None]
    x_flat = x.data.reshape(c_in, n)
    if proj_w is None:
        shortcut = x_flat
        wp = None
    else:
        wp = proj_w.data.reshape(c_out, c_in)
        shortcut = wp @ x_flat
    pre = a2 + shortcut
    mask_out = pre > 0.0
    out = Tensor((pre * mask_out).reshape(c_out, h, wd))

    def back(g):
        g0 = g.reshape(c_out, n) * mask_out
        _acc_own(norm2_g, (g0 * xhat2).sum(axis=1))
        _acc_own(norm2_b, g0.sum(axis=1))
        gh2 = _norm_back(g0, xhat2, inv2, norm2_g.data)
        if conv2_w.requires_grad:
            _defer(conv2_w, "conv", (gh2, pmat_r))
        ga1 = _col2im(w2.T @ gh2, c_out, h, wd, k).reshape(c_out, n) * mask1
        _acc_own(norm1_g, (ga1 * xhat1).sum(axis=1))
        _acc_own(norm1_b, ga1.sum(axis=1))
        gh1 = _norm_back(ga1, xhat1, inv1, norm1_g.data)
        if conv1_w.requires_grad:
            _defer(conv1_w, "conv", (gh1, pmat_x))
        if wp is not None and proj_w.requires_grad:
            _defer(proj_w, "conv", (g0, x_flat))
        if x.requires_grad:
            gx = _col2im(w1.T @ gh1, c_in, h, wd, k)
            gs = g0 if wp is None else wp.T @ g0
            _acc_own(x, gx + gs.reshape(c_in, h, wd))

    parents = (x, conv1_w, norm1_g, norm1_b, conv2_w, norm2_g, norm2_b)
    if proj_w is not None:
        parents = parents + (proj_w,)
    return _record(out, parents, back)


def channel_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each channel over its spatial extent, then apply affine.

    Batch-independent by construction, so single-sample inference is
    well-defined.  x: (C, H, W); gain, bias: (C,).
    """
    if x.data.ndim != 3:
        raise ValueError(f"channel_norm: expected (C, H, W), got {x.data.shape}")
    c = x.data.shape[0]
    if gain.data.shape != (c,) or bias.data.shape != (c,):
        raise ValueError(f"channel_norm: affine shapes {gain.data.shape}/{bias.data.shape} != ({c},)")
    shape = x.data.shape
    n = shape[1] * shape[2]
    flat = x.data.reshape(c, n)
    mu = flat.mean(axis=1)
    centered = flat - mu[:, None]
    var = (centered * centered).mean(axis=1)
    inv = (1.0 / np.sqrt(var + eps))[:, None]
    xhat = centered * inv
    out = Tensor((xhat * gain.data[:, None] + bias.data[:, None]).reshape(shape))

    def back(g):
        g2 = g.reshape(c, n)
        _acc_own(gain, (g2 * xhat).sum(axis=1))
        _acc_own(bias, g2.sum(axis=1))
        if x.requires_grad:
            gx_hat = g2 * gain.data[:, None]
            m1 = gx_hat.mean(axis=1)
            m2 = (gx_hat * xhat).mean(axis=1)
            gx = inv * (gx_hat - m1[:, None] - xhat * m2[:, None])
            _acc_own(x, gx.reshape(shape))

    return _record(out, (x, gain, bias), back)


# ------------------------------------------------------------------ softmax

def log_softmax_rows(z: Tensor) -> Tensor:
    """Row-wise log-softmax of a (n, k) tensor, max-shifted for stability."""
    if z.data.ndim != 2:
        raise ValueError(f"log_softmax_rows: expected 2-d, got {z.data.shape}")
    m = z.data.max(axis=1, keepdims=True)
    shifted = z.data - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = Tensor(shifted - lse)
    p = np.exp(out.data)

    def back(g):
        _acc_own(z, g - p * g.sum(axis=1, keepdims=True))

    return _record(out, (z,), back)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select x[i, idx[i]] for each row i of a (n, k) tensor."""
    if x.data.ndim != 2:
        raise ValueError(f"gather_rows: expected 2-d, got {x.data.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    n = x.data.shape[0]
    if idx.shape != (n,):
        raise ValueError(f"gather_rows: index shape {idx.shape} != ({n},)")
    rows = np.arange(n)
    out = Tensor(x.data[rows, idx])

    def back(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        _acc_own(x, gx)

    return _record(out, (x,), back)
