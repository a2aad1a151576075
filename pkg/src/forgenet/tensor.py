"""Dense tensors, differentiable array ops, and a reverse-mode gradient tape.

Feature maps are channels-last: (H, W, C) for a single image, (N, H, W, C)
for a batch; every op accepts both and returns the rank it was given.
Production code runs in float32. float64 is reserved for finite-difference
gradient checking, which needs the extra headroom.

Ops are pure numpy and only record onto a tape while a ``GradTape`` context
is active, so inference pays no bookkeeping cost.
"""

from __future__ import annotations


import numpy as np

from .errors import NumericError, ShapeError, UsageError

# Toggle for the per-op finite-input checks. Kept on by default; the checks
# cost one memory pass per conv input.
CHECK_FINITE = True


class Tensor:
    """A dense float array plus the gradient accumulated for it on a tape."""

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None

    @property
    def dims(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype))

    def __repr__(self):
        return f"Tensor(dims={tuple(self.data.shape)}, dtype={self.data.dtype})"


class Parameter:
    """A named trainable tensor. ``grad`` is filled by :func:`backward`."""

    __slots__ = ("name", "value")

    def __init__(self, name, value):
        self.name = name
        self.value = value if isinstance(value, Tensor) else Tensor(value)

    @property
    def grad(self):
        return self.value.grad

    def zero_grad(self):
        self.value.grad = None

    def astype(self, dtype):
        return Parameter(self.name, self.value.astype(dtype))

    def __repr__(self):
        return f"Parameter({self.name!r}, dims={tuple(self.value.dims)})"


class GradTape:
    """Ordered trace of executed ops; backward replays it in reverse."""

    def __init__(self):
        self.records = []  # (output Tensor, closure mapping d(out) -> input grads)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self.records)


_TAPES: list = []


def _active_tape():
    return _TAPES[-1] if _TAPES else None


def record_op(out, backward_fn):
    """Record ``backward_fn`` for ``out`` on the active tape, if any.

    ``backward_fn`` receives d(loss)/d(out) and must accumulate into the
    input tensors via :func:`accumulate_grad`. Exposed so higher layers can
    define fused ops (e.g. losses) without touching tape internals.
    """
    tape = _active_tape()
    if tape is not None:
        tape.records.append((out, backward_fn))


def accumulate_grad(tensor, grad):
    if tensor.grad is None:
        tensor.grad = grad if grad.flags.owndata else grad.copy()
    else:
        tensor.grad = tensor.grad + grad


def backward(tape, loss):
    """Fill ``grad`` for every tensor the tape touched, seeding at ``loss``."""
    if loss.data.size != 1:
        raise UsageError(f"loss must be scalar, got dims {tuple(loss.dims)}")
    loss.grad = np.ones_like(loss.data)
    for out, bwd in reversed(tape.records):
        if out.grad is not None:
            bwd(out.grad)


def _require_finite(*arrays):
    if not CHECK_FINITE:
        return
    for a in arrays:
        if a is not None and not np.isfinite(a).all():
            raise NumericError("non-finite values in op input")


def _as_batched(arr, what="input"):
    """View (H, W, C) as (1, H, W, C); rank 4 passes through."""
    if arr.ndim == 3:
        return arr[None], True
    if arr.ndim == 4:
        return arr, False
    raise ShapeError(f"{what} must be rank 3 or 4, got dims {arr.shape}")


def _restore(arr, squeeze):
    return arr[0] if squeeze else arr


# ---------------------------------------------------------------------------
# Convolutions


def _conv_pads(h, w, kh, kw, stride, padding):
    if padding == "same":
        oh = -(-h // stride)
        ow = -(-w // stride)
        ph = max((oh - 1) * stride + kh - h, 0)
        pw = max((ow - 1) * stride + kw - w, 0)
        return oh, ow, ph // 2, pw // 2, ph, pw
    if padding == "valid":
        if h < kh or w < kw:
            raise ShapeError(f"input {h}x{w} smaller than kernel {kh}x{kw}")
        return (h - kh) // stride + 1, (w - kw) // stride + 1, 0, 0, 0, 0
    raise UsageError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d(x, w, b=None, stride=1, padding="same"):
    """2-D cross-correlation over channels-last maps.

    ``w`` has dims (kh, kw, Cin, Cout) with odd kh/kw; 'same' zero-pads so
    stride 1 preserves the spatial extents.
    """
    xd, squeeze = _as_batched(x.data)
    wd = w.data
    if wd.ndim != 4:
        raise ShapeError(f"conv kernel must be rank 4, got dims {wd.shape}")
    kh, kw, cin, cout = wd.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel extents must be odd, got {kh}x{kw}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    n, h, wid, cx = xd.shape
    if cx != cin:
        raise ShapeError(f"input has {cx} channels, kernel expects {cin}")
    bd = None
    if b is not None:
        bd = b.data
        if bd.shape != (cout,):
            raise ShapeError(f"bias must have dims ({cout},), got {bd.shape}")
    _require_finite(xd, wd, bd)

    oh, ow, pt, pl, ph, pw = _conv_pads(h, wid, kh, kw, stride, padding)
    xp = xd
    if ph or pw:
        xp = np.zeros((n, h + ph, wid + pw, cin), xd.dtype)
        xp[:, pt : pt + h, pl : pl + wid] = xd

    # One GEMM per kernel site: same FLOPs as im2col without materializing
    # the column matrix.
    out = np.zeros((n, oh, ow, cout), xd.dtype)
    of = out.reshape(-1, cout)
    for ki in range(kh):
        for kj in range(kw):
            xs = xp[:, ki : ki + stride * (oh - 1) + 1 : stride,
                    kj : kj + stride * (ow - 1) + 1 : stride]
            of += xs.reshape(-1, cin) @ wd[ki, kj]
    if bd is not None:
        out += bd
    res = Tensor(_restore(out, squeeze))

    def bwd(g):
        gf = (g[None] if squeeze else g).reshape(-1, cout)
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wd)
        for ki in range(kh):
            for kj in range(kw):
                sl = (slice(None),
                      slice(ki, ki + stride * (oh - 1) + 1, stride),
                      slice(kj, kj + stride * (ow - 1) + 1, stride))
                xs = xp[sl].reshape(-1, cin)
                gw[ki, kj] = xs.T @ gf
                gxp[sl] += (gf @ wd[ki, kj].T).reshape(n, oh, ow, cin)
        gx = gxp[:, pt : pt + h, pl : pl + wid] if (ph or pw) else gxp
        accumulate_grad(x, _restore(gx, squeeze))
        accumulate_grad(w, gw)
        if b is not None:
            accumulate_grad(b, gf.sum(axis=0))

    record_op(res, bwd)
    return res


def conv_transpose2d(x, w, b=None, stride=2):
    """Transposed convolution doubling the spatial extents.

    ``w`` has dims (kh, kw, Cout, Cin). The op is the exact adjoint of a
    stride-2 'same' convolution, so its x-gradient is a plain conv gather.
    """
    if stride != 2:
        raise UsageError(f"only stride 2 is supported, got {stride}")
    xd, squeeze = _as_batched(x.data)
    wd = w.data
    if wd.ndim != 4:
        raise ShapeError(f"kernel must be rank 4, got dims {wd.shape}")
    kh, kw, cout, cin = wd.shape
    n, h, wid, cx = xd.shape
    if cx != cin:
        raise ShapeError(f"input has {cx} channels, kernel expects {cin}")
    bd = None
    if b is not None:
        bd = b.data
        if bd.shape != (cout,):
            raise ShapeError(f"bias must have dims ({cout},), got {bd.shape}")
    _require_finite(xd, wd, bd)

    oh, ow = stride * h, stride * wid
    bh = max(stride * (h - 1) + kh, oh)
    bw = max(stride * (wid - 1) + kw, ow)
    big = np.zeros((n, bh, bw, cout), xd.dtype)
    xf = xd.reshape(-1, cin)
    for ki in range(kh):
        for kj in range(kw):
            tgt = big[:, ki : ki + stride * (h - 1) + 1 : stride,
                      kj : kj + stride * (wid - 1) + 1 : stride]
            tgt += (xf @ wd[ki, kj].T).reshape(n, h, wid, cout)
    out = big[:, :oh, :ow]
    if bd is not None:
        out = out + bd
    else:
        out = out.copy()
    res = Tensor(_restore(out, squeeze))

    def bwd(g):
        g4 = g[None] if squeeze else g
        gbig = np.zeros((n, bh, bw, cout), g4.dtype)
        gbig[:, :oh, :ow] = g4
        gx = np.zeros_like(xd)
        gxf = gx.reshape(-1, cin)
        gw = np.empty_like(wd)
        for ki in range(kh):
            for kj in range(kw):
                gs = gbig[:, ki : ki + stride * (h - 1) + 1 : stride,
                          kj : kj + stride * (wid - 1) + 1 : stride]
                gsf = gs.reshape(-1, cout)
                gxf += gsf @ wd[ki, kj]
                gw[ki, kj] = gsf.T @ xf
        accumulate_grad(x, _restore(gx, squeeze))
        accumulate_grad(w, gw)
        if b is not None:
            accumulate_grad(b, g4.sum(axis=(0, 1, 2)))

    record_op(res, bwd)
    return res


def maxpool2x2(x):
    """2x2 max pooling; gradient routes to the first maximum in scan order."""
    xd, squeeze = _as_batched(x.data)
    n, h, w, c = xd.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even extents, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    # Window values laid out in scan order (0,0),(0,1),(1,0),(1,1) so argmax's
    # first-hit rule is the documented tie-break.
    win = xd.reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(
        n, h2, w2, c, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    res = Tensor(_restore(out, squeeze))

    def bwd(g):
        g4 = g[None] if squeeze else g
        gwin = np.zeros_like(win)
        np.put_along_axis(gwin, idx[..., None], g4[..., None], axis=-1)
        gx = gwin.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(
            n, h, w, c)
        accumulate_grad(x, _restore(gx, squeeze))

    record_op(res, bwd)
    return res


# ---------------------------------------------------------------------------
# Normalization


def batchnorm(x, state, mode):
    """Per-channel batch normalization.

    ``state`` carries gamma/beta Parameters plus running statistics (see
    layers.BatchNormState). Train mode normalizes with the current batch
    statistics and updates the running ones in place with the state's
    momentum; infer mode uses the stored running statistics.
    """
    if mode not in ("train", "infer"):
        raise UsageError(f"mode must be 'train' or 'infer', got {mode!r}")
    xd, squeeze = _as_batched(x.data)
    c = xd.shape[-1]
    gamma, beta = state.gamma.value, state.beta.value
    if gamma.data.shape != (c,):
        raise ShapeError(f"state holds {gamma.data.shape[0]} channels, input has {c}")
    eps = xd.dtype.type(state.eps)
    axes = (0, 1, 2)
    if mode == "train":
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        m = state.momentum
        state.running_mean = (m * state.running_mean
                              + (1.0 - m) * mean.astype(np.float64)).astype(
                                  state.running_mean.dtype)
        state.running_var = (m * state.running_var
                             + (1.0 - m) * var.astype(np.float64)).astype(
                                 state.running_var.dtype)
    else:
        mean = state.running_mean.astype(xd.dtype)
        var = state.running_var.astype(xd.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean) * inv
    out = gamma.data * xhat + beta.data
    res = Tensor(_restore(out, squeeze))

    def bwd(g):
        g4 = g[None] if squeeze else g
        accumulate_grad(gamma, (g4 * xhat).sum(axis=axes))
        accumulate_grad(beta, g4.sum(axis=axes))
        if mode == "infer":
            gx = g4 * (gamma.data * inv)
        else:
            # Batch statistics depend on x, so center the incoming gradient.
            m_g = g4.mean(axis=axes)
            m_gx = (g4 * xhat).mean(axis=axes)
            gx = gamma.data * inv * (g4 - m_g - xhat * m_gx)
        accumulate_grad(x, _restore(gx, squeeze))

    record_op(res, bwd)
    return res


# ---------------------------------------------------------------------------
# Elementwise and shape ops


def relu(x):
    xd = x.data
    out = np.maximum(xd, 0)
    res = Tensor(out)

    def bwd(g):
        accumulate_grad(x, g * (xd > 0))

    record_op(res, bwd)
    return res


def sigmoid(x):
    """Numerically stable logistic, clamped strictly inside (0, 1)."""
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    np.exp(-np.abs(xd), out=out)
    out_pos = 1.0 / (1.0 + out)
    out = np.where(pos, out_pos, 1.0 - out_pos)
    tiny = xd.dtype.type(1e-7 if xd.dtype == np.float32 else 1e-12)
    out = np.clip(out, tiny, 1 - tiny)
    res = Tensor(out)

    def bwd(g):
        accumulate_grad(x, g * out * (1.0 - out))

    record_op(res, bwd)
    return res


def concat_channels(a, b):
    """Stack two maps along the channel axis; spatial dims must match."""
    ad, sq_a = _as_batched(a.data, "first input")
    bd, sq_b = _as_batched(b.data, "second input")
    if sq_a != sq_b or ad.shape[:3] != bd.shape[:3]:
        raise ShapeError(
            f"concat needs matching leading dims, got {a.dims} vs {b.dims}")
    ca = ad.shape[-1]
    out = np.concatenate([ad, bd], axis=-1)
    res = Tensor(_restore(out, sq_a))

    def bwd(g):
        g4 = g[None] if sq_a else g
        accumulate_grad(a, _restore(np.ascontiguousarray(g4[..., :ca]), sq_a))
        accumulate_grad(b, _restore(np.ascontiguousarray(g4[..., ca:]), sq_a))

    record_op(res, bwd)
    return res


def global_avg_pool(x):
    """Spatial mean per channel: (H, W, C) -> (1, 1, C)."""
    xd, squeeze = _as_batched(x.data)
    n, h, w, c = xd.shape
    out = xd.mean(axis=(1, 2), keepdims=True)
    res = Tensor(_restore(out, squeeze))

    def bwd(g):
        g4 = g[None] if squeeze else g
        gx = np.broadcast_to(g4 / (h * w), xd.shape)
        accumulate_grad(x, _restore(gx.copy(), squeeze))

    record_op(res, bwd)
    return res


def dense(x, w, b=None):
    """Affine map over the last axis: (..., C) @ (C, K) + (K,)."""
    xd = x.data
    wd = w.data
    if wd.ndim != 2:
        raise ShapeError(f"dense weight must be rank 2, got dims {wd.shape}")
    cin, k = wd.shape
    if xd.shape[-1] != cin:
        raise ShapeError(f"input has {xd.shape[-1]} features, weight expects {cin}")
    bd = None
    if b is not None:
        bd = b.data
        if bd.shape != (k,):
            raise ShapeError(f"bias must have dims ({k},), got {bd.shape}")
    xf = xd.reshape(-1, cin)
    out = xf @ wd
    if bd is not None:
        out = out + bd
    res = Tensor(out.reshape(xd.shape[:-1] + (k,)))

    def bwd(g):
        gf = g.reshape(-1, k)
        accumulate_grad(x, (gf @ wd.T).reshape(xd.shape))
        accumulate_grad(w, xf.T @ gf)
        if b is not None:
            accumulate_grad(b, gf.sum(axis=0))

    record_op(res, bwd)
    return res


def reshape(x, dims):
    xd = x.data
    out = xd.reshape(dims)
    res = Tensor(out)

    def bwd(g):
        accumulate_grad(x, g.reshape(xd.shape))

    record_op(res, bwd)
    return res


def add(a, b):
    if a.dims != b.dims:
        raise ShapeError(f"add needs matching dims, got {a.dims} vs {b.dims}")
    res = Tensor(a.data + b.data)

    def bwd(g):
        accumulate_grad(a, g)
        accumulate_grad(b, g)

    record_op(res, bwd)
    return res


def maximum(a, b):
    """Elementwise max; ties route the gradient to the first argument."""
    if a.dims != b.dims:
        raise ShapeError(f"maximum needs matching dims, got {a.dims} vs {b.dims}")
    take_a = a.data >= b.data
    res = Tensor(np.where(take_a, a.data, b.data))

    def bwd(g):
        accumulate_grad(a, g * take_a)
        accumulate_grad(b, g * ~take_a)

    record_op(res, bwd)
    return res


def scale_channels(x, gate):
    """Multiply each channel by a per-(batch-)channel gate of dims (N, C) or (C,)."""
    xd, squeeze = _as_batched(x.data)
    gd = gate.data.reshape(xd.shape[0], 1, 1, xd.shape[-1])
    res = Tensor(_restore(xd * gd, squeeze))

    def bwd(g):
        g4 = g[None] if squeeze else g
        accumulate_grad(x, _restore(g4 * gd, squeeze))
        accumulate_grad(gate, (g4 * xd).sum(axis=(1, 2)).reshape(gate.dims))

    record_op(res, bwd)
    return res


def scale_spatial(x, gate):
    """Multiply each spatial site by a one-channel gate of dims (N, H, W, 1)."""
    xd, squeeze = _as_batched(x.data)
    gd, _ = _as_batched(gate.data, "gate")
    if gd.shape != xd.shape[:3] + (1,):
        raise ShapeError(f"gate dims {gate.dims} do not match input {x.dims}")
    res = Tensor(_restore(xd * gd, squeeze))

    def bwd(g):
        g4 = g[None] if squeeze else g
        accumulate_grad(x, _restore(g4 * gd, squeeze))
        gg = (g4 * xd).sum(axis=-1, keepdims=True)
        accumulate_grad(gate, gg.reshape(gate.dims))

    record_op(res, bwd)
    return res


def sum_all(x):
    """Sum of all elements, as a scalar tensor."""
    xd = x.data
    res = Tensor(np.asarray(xd.sum(), dtype=xd.dtype))

    def bwd(g):
        accumulate_grad(x, np.full_like(xd, g.item()))

    record_op(res, bwd)
    return res


def mean_all(x):
    xd = x.data
    res = Tensor(np.asarray(xd.mean(), dtype=xd.dtype))

    def bwd(g):
        accumulate_grad(x, np.full_like(xd, g.item() / xd.size))

    record_op(res, bwd)
    return res


# ---------------------------------------------------------------------------
# Gradient checking


def grad_check(build, params, step=1e-3, max_coords_per_param=None, seed=0):
    """Compare tape gradients against central finite differences.

    ``build`` re-evaluates the graph from ``params`` and returns the scalar
    loss tensor; it is called repeatedly with perturbed coordinates, so it
    must read the parameter values afresh each time. Parameters should be
    float64. Returns the max over checked coordinates of
    |analytic - numeric| / max(1, |numeric|).

    Large parameter tensors can be spot-checked by capping
    ``max_coords_per_param``; coordinate choice is seeded and reproducible.
    """
    with GradTape() as tape:
        loss = build()
    backward(tape, loss)
    analytic = []
    for p in params:
        g = p.grad
        analytic.append(np.zeros_like(p.value.data) if g is None else g.copy())
        p.zero_grad()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.value.data.reshape(-1)
        gflat = g.reshape(-1)
        n = flat.size
        if max_coords_per_param is None or n <= max_coords_per_param:
            coords = range(n)
        else:
            coords = np.sort(rng.choice(n, size=max_coords_per_param, replace=False))
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            fp = float(build().data)
            flat[i] = orig - step
            fm = float(build().data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * step)
            err = abs(float(gflat[i]) - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
