"""Differentiable building blocks on plain numpy arrays.

Activations are 4-D ``(batch, channels, height, width)`` arrays; dense layers
work on ``(batch, features)``.  Every forward kernel has a matching backward
kernel returning gradients with respect to its inputs and parameters.  The
kernels are pure functions; the :class:`Layer` subclasses wrap them with
parameter storage and return an opaque cache from ``forward`` that must be
handed back to ``backward``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError

LEAKY_SLOPE = 0.2
ACTIVATIONS = ("elu", "relu", "leaky_relu", "tanh", "sigmoid", "none")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "transposed_conv" | "dense"
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    padding: tuple[int, int] | None = None
    output_padding: int = 0
    activation: str = "none"

    def __post_init__(self):
        if self.kind not in ("conv", "transposed_conv", "dense"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if min(self.kernel) < 1 or self.stride < 1:
            raise ValueError("kernel extents and stride must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.padding is None:
            # half padding: stride 1 keeps extents, stride 2 halves them
            object.__setattr__(self, "padding", (self.kernel[0] // 2, self.kernel[1] // 2))


# ---------------------------------------------------------------------------
# convolution


def _check_4d(x, name):
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (batch, channels, height, width), got shape {x.shape}")
    if 0 in x.shape:
        raise ShapeError(f"{name} has a zero extent: {x.shape}")


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def transposed_output_size(size: int, kernel: int, stride: int, pad: int, output_padding: int = 0) -> int:
    return (size - 1) * stride - 2 * pad + kernel + output_padding


def _offsets(kh, kw, stride, ho, wo):
    for i in range(kh):
        for j in range(kw):
            yield i, j, slice(i, i + stride * (ho - 1) + 1, stride), slice(j, j + stride * (wo - 1) + 1, stride)


def _pad(x, ph, pw):
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x


def conv2d(x, weight, bias, stride=1, padding=(0, 0)):
    """Cross-correlate ``x`` (N, C, H, W) with ``weight`` (O, C, kh, kw) and add ``bias``."""
    _check_4d(x, "input")
    o, c, kh, kw = weight.shape
    if x.shape[1] != c:
        raise ShapeError(f"input has {x.shape[1]} channels, weights expect {c}")
    if bias.shape != (o,):
        raise ShapeError(f"bias shape {bias.shape} does not match {o} output channels")
    ph, pw = padding
    n, _, h, w = x.shape
    ho, wo = conv_output_size(h, kh, stride, ph), conv_output_size(w, kw, stride, pw)
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}")
    xp = _pad(x, ph, pw)
    acc = np.zeros((o, n, ho, wo), dtype=np.result_type(x, weight))
    for i, j, si, sj in _offsets(kh, kw, stride, ho, wo):
        acc += np.tensordot(weight[:, :, i, j], xp[:, :, si, sj], axes=([1], [1]))
    out = acc.transpose(1, 0, 2, 3) + bias[None, :, None, None]
    return np.ascontiguousarray(out)


def _scatter(cols_fn, weight_io, n, out_ch, hp, wp, kh, kw, stride, hi, wi, dtype):
    # accumulate the adjoint of the strided window gather into a padded canvas
    canvas = np.zeros((out_ch, n, hp, wp), dtype=dtype)
    for i, j, si, sj in _offsets(kh, kw, stride, hi, wi):
        canvas[:, :, si, sj] += cols_fn(weight_io[:, :, i, j])
    return canvas


def conv2d_backward(dout, x, weight, stride=1, padding=(0, 0), need_dx=True, need_dw=True):
    """Gradients of :func:`conv2d` w.r.t. input, weight and bias.

    Skipped gradients are returned as ``None``.
    """
    o, c, kh, kw = weight.shape
    ph, pw = padding
    n, _, h, w = x.shape
    ho, wo = dout.shape[2:]
    dx = dw = db = None
    if need_dw:
        xp = _pad(x, ph, pw)
        dw = np.empty_like(weight, dtype=np.result_type(dout, x))
        for i, j, si, sj in _offsets(kh, kw, stride, ho, wo):
            dw[:, :, i, j] = np.tensordot(dout, xp[:, :, si, sj], axes=([0, 2, 3], [0, 2, 3]))
        db = dout.sum(axis=(0, 2, 3))
    if need_dx:
        canvas = _scatter(
            lambda wk: np.tensordot(wk, dout, axes=([0], [1])),
            weight, n, c, h + 2 * ph, w + 2 * pw, kh, kw, stride, ho, wo, np.result_type(dout, weight),
        )
        dx = np.ascontiguousarray(canvas[:, :, ph:ph + h, pw:pw + w].transpose(1, 0, 2, 3))
    return dx, dw, db


def transposed_conv2d(x, weight, bias, stride=1, padding=(0, 0), output_padding=0):
    """Transposed convolution; ``weight`` is (in_channels, out_channels, kh, kw).

    This is the input-gradient map of :func:`conv2d` with the same weights,
    plus a per-channel bias.
    """
    _check_4d(x, "input")
    ci, co, kh, kw = weight.shape
    if x.shape[1] != ci:
        raise ShapeError(f"input has {x.shape[1]} channels, weights expect {ci}")
    if bias.shape != (co,):
        raise ShapeError(f"bias shape {bias.shape} does not match {co} output channels")
    if output_padding < 0 or (output_padding and output_padding >= stride):
        raise ShapeError("output_padding must be smaller than stride")
    ph, pw = padding
    n, _, h, w = x.shape
    ho = transposed_output_size(h, kh, stride, ph, output_padding)
    wo = transposed_output_size(w, kw, stride, pw, output_padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"transposed conv of {h}x{w} with padding {padding} is empty")
    canvas = _scatter(
        lambda wk: np.tensordot(wk, x, axes=([0], [1])),
        weight, n, co, ho + 2 * ph, wo + 2 * pw, kh, kw, stride, h, w, np.result_type(x, weight),
    )
    out = canvas[:, :, ph:ph + ho, pw:pw + wo].transpose(1, 0, 2, 3) + bias[None, :, None, None]
    return np.ascontiguousarray(out)


def transposed_conv2d_backward(dout, x, weight, stride=1, padding=(0, 0), output_padding=0,
                               need_dx=True, need_dw=True):
    """Gradients of :func:`transposed_conv2d` w.r.t. input, weight and bias."""
    ci, co, kh, kw = weight.shape
    ph, pw = padding
    h, w = x.shape[2:]
    dp = _pad(dout, ph, pw)
    dx = dw = db = None
    acc = np.zeros((ci, x.shape[0], h, w), dtype=np.result_type(dout, weight)) if need_dx else None
    if need_dw:
        dw = np.empty_like(weight, dtype=np.result_type(dout, x))
        db = dout.sum(axis=(0, 2, 3))
    for i, j, si, sj in _offsets(kh, kw, stride, h, w):
        window = dp[:, :, si, sj]
        if need_dx:
            acc += np.tensordot(weight[:, :, i, j], window, axes=([1], [1]))
        if need_dw:
            dw[:, :, i, j] = np.tensordot(x, window, axes=([0, 2, 3], [0, 2, 3]))
    if need_dx:
        dx = np.ascontiguousarray(acc.transpose(1, 0, 2, 3))
    return dx, dw, db


# ---------------------------------------------------------------------------
# dense


def dense(x, weight, bias):
    """``x @ weight.T + bias`` for ``x`` of shape (N, in) or (in,)."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"input length {x.shape[-1]} does not match weight shape {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    return x @ weight.T + bias


def dense_backward(dout, x, weight, need_dx=True, need_dw=True):
    x2 = np.atleast_2d(x)
    d2 = np.atleast_2d(dout)
    dx = (d2 @ weight).reshape(x.shape) if need_dx else None
    if not need_dw:
        return dx, None, None
    return dx, d2.T @ x2, d2.sum(axis=0)


# ---------------------------------------------------------------------------
# activations


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation(x, kind):
    if kind == "elu":
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "leaky_relu":
        return np.where(x > 0, x, LEAKY_SLOPE * x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "none":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(dout, x, y, kind):
    """Chain ``dout`` through the activation given its input ``x`` and output ``y``."""
    if kind == "elu":
        return dout * np.where(x > 0, 1, y + 1)
    if kind == "relu":
        return dout * (x > 0)
    if kind == "leaky_relu":
        return dout * np.where(x > 0, 1, LEAKY_SLOPE).astype(dout.dtype)
    if kind == "tanh":
        return dout * (1 - y * y)
    if kind == "sigmoid":
        return dout * y * (1 - y)
    if kind == "none":
        return dout
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param, **kw):
        return cls(np.zeros_like(param), np.zeros_like(param), **kw)


def adam_update(param, grad, state: AdamState):
    """One bias-corrected Adam step, in place on ``param`` and ``state``.

    A non-finite gradient raises :class:`NonFiniteError` and leaves both
    untouched.  An all-zero gradient decays the moments and advances the
    step counter but leaves ``param`` exactly as it was.
    """
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ShapeError(f"param {param.shape}, grad {grad.shape}, moments {state.m.shape} disagree")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite gradient passed to adam_update")
    step = state.step + 1
    frozen = not np.any(grad)
    state.m *= state.beta1
    state.m += (1 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1 - state.beta2) * grad * grad
    m_hat = state.m / (1 - state.beta1 ** step)
    v_hat = state.v / (1 - state.beta2 ** step)
    if not frozen:
        param -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype)
    state.step = step
    return param, state


# ---------------------------------------------------------------------------
# layers


@dataclass
class Parameter:
    name: str
    data: np.ndarray
    grad: np.ndarray | None = None
    adam: AdamState | None = None

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g


class Layer:
    """A parameterised kernel followed by an activation.

    ``backward(dy, cache, need_dx, need_params)`` accumulates parameter
    gradients into ``.grad`` when ``need_params`` is true and returns the
    input gradient (``None`` when ``need_dx`` is false).
    """

    spec: LayerSpec
    weight: Parameter
    bias: Parameter

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x):
        pre = self._kernel(x)
        y = activation(pre, self.spec.activation)
        return y, (x, pre, y)

    def backward(self, dy, cache, need_dx=True, need_params=True):
        x, pre, y = cache
        dpre = activation_backward(dy, pre, y, self.spec.activation)
        dx, dw, db = self._kernel_backward(dpre, x, need_dx, need_params)
        if need_params:
            self.weight.accumulate(dw)
            self.bias.accumulate(db)
        return dx


class Conv2d(Layer):
    def __init__(self, name, spec, rng, dtype=np.float32, init_std=0.02):
        kh, kw = spec.kernel
        self.spec = spec
        self.weight = Parameter(f"{name}.weight", _init(rng, (spec.out_channels, spec.in_channels, kh, kw), init_std, dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(spec.out_channels, dtype=dtype))

    def _kernel(self, x):
        return conv2d(x, self.weight.data, self.bias.data, self.spec.stride, self.spec.padding)

    def _kernel_backward(self, dpre, x, need_dx, need_dw):
        return conv2d_backward(dpre, x, self.weight.data, self.spec.stride, self.spec.padding, need_dx, need_dw)


class ConvTranspose2d(Layer):
    def __init__(self, name, spec, rng, dtype=np.float32, init_std=0.02):
        kh, kw = spec.kernel
        self.spec = spec
        self.weight = Parameter(f"{name}.weight", _init(rng, (spec.in_channels, spec.out_channels, kh, kw), init_std, dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(spec.out_channels, dtype=dtype))

    def _kernel(self, x):
        s = self.spec
        return transposed_conv2d(x, self.weight.data, self.bias.data, s.stride, s.padding, s.output_padding)

    def _kernel_backward(self, dpre, x, need_dx, need_dw):
        s = self.spec
        return transposed_conv2d_backward(dpre, x, self.weight.data, s.stride, s.padding, s.output_padding,
                                          need_dx, need_dw)


class Dense(Layer):
    def __init__(self, name, spec, rng, dtype=np.float32, init_std=0.02):
        self.spec = spec
        self.weight = Parameter(f"{name}.weight", _init(rng, (spec.out_channels, spec.in_channels), init_std, dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(spec.out_channels, dtype=dtype))

    def _kernel(self, x):
        return dense(x, self.weight.data, self.bias.data)

    def _kernel_backward(self, dpre, x, need_dx, need_dw):
        return dense_backward(dpre, x, self.weight.data, need_dx, need_dw)


def make_layer(name, spec: LayerSpec, rng, dtype=np.float32, init_std=0.02) -> Layer:
    cls = {"conv": Conv2d, "transposed_conv": ConvTranspose2d, "dense": Dense}[spec.kind]
    return cls(name, spec, rng, dtype, init_std)


def _init(rng, shape, std, dtype):
    if std == 0:
        return np.zeros(shape, dtype=dtype)
    return (rng.standard_normal(shape) * std).astype(dtype)


# ---------------------------------------------------------------------------
# finite-difference checking


def numerical_gradient(f: Callable[[], float], x: np.ndarray, indices=None, h=1e-5, kink_safe=False):
    """Central differences of scalar ``f()`` w.r.t. entries of ``x`` (mutated and restored).

    With ``kink_safe`` each estimate is repeated at ``h / 4``; while the two
    disagree (the stencil straddles a ReLU-type kink) the step keeps
    shrinking, down to ``h * 4**-4``.
    """
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices

    def central(i, step):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        return (fp - fm) / (2 * step)

    scale = max(abs(f()), 1.0) if kink_safe else 1.0
    out = np.zeros(len(idx))
    for k, i in enumerate(idx):
        est = central(i, h)
        if kink_safe:
            step = h
            for _ in range(4):
                finer = central(i, step / 4)
                # rounding noise of a central difference is ~eps * |f| / step
                noise = 100 * np.finfo(np.float64).eps * scale / (step / 4)
                agree = abs(finer - est) <= 1e-6 * max(abs(finer), abs(est)) + noise
                est, step = finer, step / 4
                if agree:
                    break
        out[k] = est
    return out


def relative_error(analytic, numeric, floor=1e-8):
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(forward: Callable[..., np.ndarray], backward: Callable[..., Sequence[np.ndarray]],
               inputs: Sequence[np.ndarray], rng=None, h=1e-5, max_entries=None):
    """Worst relative error between analytic and finite-difference gradients.

    ``forward(*inputs)`` returns an array; the scalar probed is
    ``sum(forward(*inputs) * probe)`` for a fixed random ``probe``.
    ``backward(probe, *inputs)`` must return one gradient per input, in
    order.  Everything is promoted to float64 first.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    inputs = [np.array(a, dtype=np.float64) for a in inputs]
    out = forward(*inputs)
    probe = rng.standard_normal(np.shape(out))
    grads = backward(probe, *inputs)
    worst = 0.0
    for arr, g in zip(inputs, grads):
        if max_entries is not None and arr.size > max_entries:
            idx = rng.choice(arr.size, size=max_entries, replace=False)
        else:
            idx = np.arange(arr.size)
        num = numerical_gradient(lambda: float(np.sum(forward(*inputs) * probe)), arr, idx, h)
        worst = max(worst, relative_error(np.asarray(g).reshape(-1)[idx], num))
    return worst
