"""Dense float tensors with reverse-mode differentiation on a recorded tape.

Only the primitives the model needs are implemented. Every operation runs
eagerly on numpy arrays; when a :class:`Tape` is active and an input requires
gradients, the operation appends an adjoint closure to the tape. Replaying the
tape in reverse execution order accumulates gradients into the ``grad`` buffer
of every tensor that requested them.

Arrays are float32 by default. Passing float64 parameters switches the whole
graph to 64-bit, which is what the finite-difference checks use.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "GraphError",
    "NonFiniteError",
    "Tensor",
    "Tape",
    "parameter",
    "record_op",
    "accumulate",
    "add",
    "scale",
    "square",
    "reduce_sum",
    "mean_all",
    "reshape",
    "concat_last",
    "narrow",
    "stack0",
    "relu",
    "dropout",
    "linear",
    "conv2d",
    "conv2d_nhwc",
    "softmax_cross_entropy",
    "softmax_cross_entropy_mean",
    "pair_sum_expand",
    "form_pairs",
    "grad_check",
]

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class GraphError(RuntimeError):
    """A tape was replayed twice or used outside its valid lifecycle."""


class NonFiniteError(FloatingPointError):
    """A value left the finite range during a forward or backward pass."""


class Tensor:
    """n-dimensional float array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def check_finite(self, what: str = "tensor") -> None:
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite values in {what}" + (f" '{self.name}'" if self.name else ""))

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"


def parameter(data, name: str | None = None, dtype=None) -> Tensor:
    """A tensor that accumulates gradients during backward passes."""
    return Tensor(data, requires_grad=True, dtype=dtype, name=name)


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of executed primitives, replayable once in reverse."""

    def __init__(self):
        self._entries: list[tuple[str, Tensor, Callable[[np.ndarray], None]]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPES.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, name: str, out: Tensor, backward: Callable[[np.ndarray], None]) -> None:
        self._entries.append((name, out, backward))

    def backward(self, loss: Tensor) -> None:
        """Seed the loss gradient and replay adjoints in reverse order."""
        if self._consumed:
            raise GraphError("tape already replayed; record a fresh graph before calling backward again")
        if loss.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
        self._consumed = True
        loss.grad = np.ones_like(loss.data)
        for _, out, fn in reversed(self._entries):
            if out.grad is not None:
                fn(out.grad)

    def first_nonfinite(self) -> str | None:
        """Name of the earliest recorded op whose output is non-finite, if any."""
        for name, out, _ in self._entries:
            if not np.all(np.isfinite(out.data)):
                label = out.name or name
                return label
        return None


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def accumulate(t: Tensor, g: np.ndarray) -> None:
    """Add a gradient contribution to ``t`` (no-op unless it requires grad).

    Gradient arrays are never mutated in place, so passing views is safe.
    """
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def record_op(name: str, out: Tensor, backward: Callable[[np.ndarray], None]) -> Tensor:
    """Register the adjoint of a custom op on the active tape, if recording."""
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.record(name, out, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)

    def bwd(g: np.ndarray) -> None:
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(g, b.shape))

    return record_op("add", out, bwd)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * x.dtype.type(c), requires_grad=x.requires_grad)

    def bwd(g: np.ndarray) -> None:
        accumulate(x, g * x.dtype.type(c))

    return record_op("scale", out, bwd)


def square(x: Tensor) -> Tensor:
    out = Tensor(x.data * x.data, requires_grad=x.requires_grad)

    def bwd(g: np.ndarray) -> None:
        accumulate(x, 2.0 * x.data * g)

    return record_op("square", out, bwd)


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(x.data.sum(axis=axis), requires_grad=x.requires_grad)

    def bwd(g: np.ndarray) -> None:
        if axis is None:
            accumulate(x, np.broadcast_to(g, x.shape))
        else:
            accumulate(x, np.broadcast_to(np.expand_dims(g, axis), x.shape))

    return record_op("sum", out, bwd)


def mean_all(x: Tensor) -> Tensor:
    return scale(reduce_sum(x), 1.0 / x.size)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = Tensor(x.data.reshape(shape), requires_grad=x.requires_grad)

    def bwd(g: np.ndarray) -> None:
        accumulate(x, g.reshape(x.shape))

    return record_op("reshape", out, bwd)


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(
        np.concatenate([a.data, b.data], axis=-1),
        requires_grad=a.requires_grad or b.requires_grad,
    )
    na = a.shape[-1]

    def bwd(g: np.ndarray) -> None:
        accumulate(a, g[..., :na])
        accumulate(b, g[..., na:])

    return record_op("concat", out, bwd)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = Tensor(x.data[index], requires_grad=x.requires_grad)

    def bwd(g: np.ndarray) -> None:
        gx = np.zeros_like(x.data)
        gx[index] = g
        accumulate(x, gx)

    return record_op("narrow", out, bwd)


def stack0(parts: Sequence[Tensor]) -> Tensor:
    out = Tensor(
        np.stack([p.data for p in parts], axis=0),
        requires_grad=any(p.requires_grad for p in parts),
    )

    def bwd(g: np.ndarray) -> None:
        for i, p in enumerate(parts):
            accumulate(p, g[i])

    return record_op("stack", out, bwd)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), requires_grad=x.requires_grad)

    def bwd(g: np.ndarray) -> None:
        # subgradient at 0 is taken as 0
        accumulate(x, g * (out.data > 0))

    return record_op("relu", out, bwd)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only on the training path."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    out = Tensor(x.data * keep, requires_grad=x.requires_grad)

    def bwd(g: np.ndarray) -> None:
        accumulate(x, g * keep)

    return record_op("dropout", out, bwd)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``y[..., m] = sum_n x[..., n] * weight[m, n] + bias[m]``.

    Leading axes of ``x`` are treated as batch dimensions.
    """
    n_in = x.shape[-1]
    m, n = weight.shape
    if n != n_in:
        raise ValueError(f"linear: input width {n_in} does not match weight shape {weight.shape}")
    x2 = x.data.reshape(-1, n_in)
    y2 = x2 @ weight.data.T
    if bias is not None:
        if bias.shape != (m,):
            raise ValueError(f"linear: bias shape {bias.shape} does not match output width {m}")
        y2 = y2 + bias.data
    out_shape = x.shape[:-1] + (m,)
    requires = x.requires_grad or weight.requires_grad or (bias is not None and bias.requires_grad)
    out = Tensor(y2.reshape(out_shape), requires_grad=requires)

    def bwd(g: np.ndarray) -> None:
        g2 = g.reshape(-1, m)
        if weight.requires_grad:
            accumulate(weight, g2.T @ x2)
        if bias is not None and bias.requires_grad:
            accumulate(bias, g2.sum(axis=0))
        if x.requires_grad:
            accumulate(x, (g2 @ weight.data).reshape(x.shape))

    return record_op("linear", out, bwd)


def _conv_out_size(size: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - 3) // stride + 1


def _im2col(xp: np.ndarray, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c, _, _ = xp.shape
    cols = np.empty((n, c * 9, ho * wo), dtype=xp.dtype)
    view = cols.reshape(n, c, 9, ho * wo)
    for ky in range(3):
        ys = slice(ky, ky + stride * (ho - 1) + 1, stride)
        for kx in range(3):
            xs = slice(kx, kx + stride * (wo - 1) + 1, stride)
            view[:, :, ky * 3 + kx, :] = xp[:, :, ys, xs].reshape(n, c, ho * wo)
    return cols


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with 3x3 kernels over (N, C, H, W) or (C, H, W) input."""
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    co, ci, kh, kw = kernels.shape
    if (kh, kw) != (3, 3):
        raise ValueError(f"conv2d: kernels must be 3x3, got {kh}x{kw}")
    batched = x.ndim == 4
    xb = x.data if batched else x.data[None]
    n, c, h, w = xb.shape
    if c != ci:
        raise ValueError(f"conv2d: input has {c} channels but kernels expect {ci}")
    if bias.shape != (co,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match {co} output channels")
    ho = _conv_out_size(h, stride, padding)
    wo = _conv_out_size(w, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: output size would be {ho}x{wo} for input {h}x{w}")
    if padding:
        xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = xb
    cols = _im2col(xp, stride, ho, wo)
    w2 = kernels.data.reshape(co, ci * 9)
    y = np.matmul(w2, cols) + bias.data[:, None]
    out_data = y.reshape(n, co, ho, wo)
    if not batched:
        out_data = out_data[0]
    requires = x.requires_grad or kernels.requires_grad or bias.requires_grad
    out = Tensor(out_data, requires_grad=requires)

    def bwd(g: np.ndarray) -> None:
        g3 = g.reshape(n, co, ho * wo)
        if bias.requires_grad:
            accumulate(bias, g3.sum(axis=(0, 2)))
        if kernels.requires_grad:
            gmat = np.ascontiguousarray(g3.transpose(1, 0, 2)).reshape(co, n * ho * wo)
            cmat = np.ascontiguousarray(cols.transpose(1, 0, 2)).reshape(ci * 9, n * ho * wo)
            accumulate(kernels, (gmat @ cmat.T).reshape(kernels.shape))
        if x.requires_grad:
            gcols = np.matmul(w2.T, g3).reshape(n, ci, 9, ho * wo)
            gxp = np.zeros_like(xp)
            for ky in range(3):
                ys = slice(ky, ky + stride * (ho - 1) + 1, stride)
                for kx in range(3):
                    xs = slice(kx, kx + stride * (wo - 1) + 1, stride)
                    gxp[:, :, ys, xs] += gcols[:, :, ky * 3 + kx, :].reshape(n, ci, ho, wo)
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
            accumulate(x, gx if batched else gx[0])

    return record_op("conv2d", out, bwd)


def conv2d_nhwc(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Channels-last variant of :func:`conv2d` for the batched hot path.

    Input (N, H, W, C) yields (N, H', W', C_out); kernels keep the same
    (C_out, C_in, 3, 3) layout as the channels-first op. Gathers and scatters
    run along contiguous channel runs, which is what makes this fast.
    """
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    co, ci, kh, kw = kernels.shape
    if (kh, kw) != (3, 3):
        raise ValueError(f"conv2d: kernels must be 3x3, got {kh}x{kw}")
    n, h, w, c = x.shape
    if c != ci:
        raise ValueError(f"conv2d: input has {c} channels but kernels expect {ci}")
    ho = _conv_out_size(h, stride, padding)
    wo = _conv_out_size(w, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: output size would be {ho}x{wo} for input {h}x{w}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    cols = np.empty((n, ho, wo, 9, c), dtype=x.dtype)
    for ky in range(3):
        ys = slice(ky, ky + stride * (ho - 1) + 1, stride)
        for kx in range(3):
            xs = slice(kx, kx + stride * (wo - 1) + 1, stride)
            cols[:, :, :, ky * 3 + kx, :] = xp[:, ys, xs, :]
    cols2 = cols.reshape(n * ho * wo, 9 * c)
    wmat = np.ascontiguousarray(kernels.data.transpose(2, 3, 1, 0).reshape(9 * ci, co))
    y = cols2 @ wmat + bias.data
    requires = x.requires_grad or kernels.requires_grad or bias.requires_grad
    out = Tensor(y.reshape(n, ho, wo, co), requires_grad=requires)

    def bwd(g: np.ndarray) -> None:
        g2 = g.reshape(n * ho * wo, co)
        if bias.requires_grad:
            accumulate(bias, g2.sum(axis=0))
        if kernels.requires_grad:
            dwmat = cols2.T @ g2
            accumulate(kernels, dwmat.reshape(3, 3, ci, co).transpose(3, 2, 0, 1))
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(n, ho, wo, 9, c)
            gxp = np.zeros_like(xp)
            for ky in range(3):
                ys = slice(ky, ky + stride * (ho - 1) + 1, stride)
                for kx in range(3):
                    xs = slice(kx, kx + stride * (wo - 1) + 1, stride)
                    gxp[:, ys, xs, :] += dcols[:, :, :, ky * 3 + kx, :]
            accumulate(x, gxp[:, padding : padding + h, padding : padding + w, :] if padding else gxp)

    return record_op("conv2d", out, bwd)


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(scores: Tensor, target: int) -> Tensor:
    """Negative log-likelihood of ``target`` under softmax of a score vector."""
    if scores.ndim != 1:
        raise ValueError(f"expected a score vector, got shape {scores.shape}")
    k = scores.shape[0]
    if not 0 <= int(target) < k:
        raise IndexError(f"target {target} out of range for {k} scores")
    scores.check_finite("scores")
    logp = _log_softmax(scores.data)
    out = Tensor(-logp[int(target)], requires_grad=scores.requires_grad)

    def bwd(g: np.ndarray) -> None:
        grad = np.exp(logp)
        grad[int(target)] -= 1.0
        accumulate(scores, grad * g)

    return record_op("cross_entropy", out, bwd)


def softmax_cross_entropy_mean(scores: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over a (B, K) batch of score rows."""
    if scores.ndim != 2:
        raise ValueError(f"expected (batch, scores), got shape {scores.shape}")
    b, k = scores.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (b,):
        raise ValueError(f"targets shape {targets.shape} does not match batch {b}")
    if targets.min() < 0 or targets.max() >= k:
        raise IndexError("target out of range")
    scores.check_finite("scores")
    logp = _log_softmax(scores.data)
    rows = np.arange(b)
    out = Tensor(-logp[rows, targets].mean(), requires_grad=scores.requires_grad)

    def bwd(g: np.ndarray) -> None:
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        accumulate(scores, grad * (g / b))

    return record_op("cross_entropy_mean", out, bwd)


def pair_sum_expand(a: Tensor, b: Tensor) -> Tensor:
    """All-pairs sums: out[..., i*G + j, :] = a[..., i, :] + b[..., j, :]."""
    if a.shape != b.shape:
        raise ValueError(f"pair_sum_expand: shapes differ, {a.shape} vs {b.shape}")
    g_count, width = a.shape[-2], a.shape[-1]
    lead = a.shape[:-2]
    data = (a.data[..., :, None, :] + b.data[..., None, :, :]).reshape(*lead, g_count * g_count, width)
    out = Tensor(data, requires_grad=a.requires_grad or b.requires_grad)

    def bwd(g: np.ndarray) -> None:
        gg = g.reshape(*lead, g_count, g_count, width)
        accumulate(a, gg.sum(axis=-2))
        accumulate(b, gg.sum(axis=-3))

    return record_op("pair_sum_expand", out, bwd)


def form_pairs(x: Tensor) -> Tensor:
    """Ordered pair concatenations, row-major in (i, j), self-pairs included.

    Input (..., G, E) produces (..., G*G, 2E) with
    out[..., i*G + j, :] = concat(x[..., i, :], x[..., j, :]).
    """
    g_count, width = x.shape[-2], x.shape[-1]
    lead = x.shape[:-2]
    idx_i = np.repeat(np.arange(g_count), g_count)
    idx_j = np.tile(np.arange(g_count), g_count)
    data = np.concatenate([x.data[..., idx_i, :], x.data[..., idx_j, :]], axis=-1)
    out = Tensor(data, requires_grad=x.requires_grad)

    def bwd(g: np.ndarray) -> None:
        gl = g[..., :width].reshape(*lead, g_count, g_count, width)
        gr = g[..., width:].reshape(*lead, g_count, g_count, width)
        accumulate(x, gl.sum(axis=-2) + gr.sum(axis=-3))

    return record_op("form_pairs", out, bwd)


def grad_check(
    build_loss: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    max_elements_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare reverse-mode gradients against central finite differences.

    ``build_loss`` must be deterministic and re-runnable; it is invoked once
    under a tape for the analytic gradients and then twice per checked element
    for the difference quotient. Returns the maximum relative error, with the
    denominator floored at max(|analytic|, |numeric|, 1e-8).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = build_loss()
    loss.check_finite("loss")
    tape.backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    worst = 0.0
    for name, p in params.items():
        total = p.size
        if max_elements_per_param is not None and total > max_elements_per_param:
            picker = rng if rng is not None else np.random.default_rng(0)
            indices = np.sort(picker.choice(total, size=max_elements_per_param, replace=False))
        else:
            indices = range(total)
        flat_grad = analytic[name].reshape(-1)
        for i in indices:
            where = np.unravel_index(i, p.shape)
            keep = p.data[where]
            p.data[where] = keep + eps
            lp = float(build_loss().data)
            p.data[where] = keep - eps
            lm = float(build_loss().data)
            p.data[where] = keep
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NonFiniteError(f"non-finite loss while probing '{name}'")
            numeric = (lp - lm) / (2.0 * eps)
            err = abs(float(flat_grad[i]) - numeric) / max(abs(float(flat_grad[i])), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
