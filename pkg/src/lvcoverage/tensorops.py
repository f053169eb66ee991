"""Forward and backward numerical kernels for the 3D network.

Layout conventions used throughout the toolkit:

* feature volumes are ``(D, H, W, C)`` per sample, batched as ``(N, D, H, W, C)``
  with depth-major row-major memory order;
* convolution kernels are ``(Cout, Cin, T, S, R)`` where ``(T, S, R)`` are the
  depth/height/width extents;
* strides and pooling windows are ``(d, h, w)`` tuples.

All kernels are pure functions of their inputs, preserve the input dtype
(float32 or float64), and only use "valid" (no padding) geometry.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ParameterError

# Transient im2col workspace cap; batches are chunked to stay under it.
_IM2COL_BUDGET_BYTES = 192 * 1024 * 1024

_AXIS_NAMES = ("depth", "height", "width")


def _as_batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Promote a single ``(D,H,W,C)`` sample to a batch of one."""
    if x.ndim == 4:
        return x[None], True
    if x.ndim == 5:
        return x, False
    raise DimensionError(f"expected a 4-d or 5-d feature volume, got ndim={x.ndim}")


def conv3d_out_shape(in_shape, kernel, stride):
    """Valid-convolution output extents: floor((in - k)/stride) + 1 per axis."""
    out = []
    for ax, (n, k, s) in enumerate(zip(in_shape, kernel, stride)):
        if k > n:
            raise DimensionError(
                f"kernel {_AXIS_NAMES[ax]} {k} exceeds input {_AXIS_NAMES[ax]} {n}"
            )
        if s < 1:
            raise ParameterError(f"stride along {_AXIS_NAMES[ax]} must be >= 1, got {s}")
        out.append((n - k) // s + 1)
    return tuple(out)


def _im2col_chunks(x: np.ndarray, kt: int, ks: int, kr: int, stride):
    """Yield ``(start, stop, cols)`` over the batch axis.

    ``cols`` is ``(chunk*Do*Ho*Wo, T*S*R*Cin)`` with the patch laid out in
    ``(T, S, R, C)`` order: for channels-last inputs the (R, C) pair is
    jointly contiguous in memory, so the gather copies long runs instead of
    single elements. Kernels must be flattened with :func:`_kernel_matrix`.
    """
    n, d, h, w, c = x.shape
    sd, sh, sw = stride
    do, ho, wo = conv3d_out_shape((d, h, w), (kt, ks, kr), stride)
    row_bytes = c * kt * ks * kr * x.itemsize
    per_sample = do * ho * wo * row_bytes
    step = max(1, _IM2COL_BUDGET_BYTES // max(per_sample, 1))
    for start in range(0, n, step):
        stop = min(n, start + step)
        win = sliding_window_view(x[start:stop], (kt, ks, kr), axis=(1, 2, 3))
        win = win[:, ::sd, ::sh, ::sw]  # (chunk, Do, Ho, Wo, C, T, S, R)
        win = win.transpose(0, 1, 2, 3, 5, 6, 7, 4)
        cols = win.reshape(-1, kt * ks * kr * c)
        yield start, stop, cols


def _kernel_matrix(kernels: np.ndarray) -> np.ndarray:
    """(Cout, Cin, T, S, R) -> (T*S*R*Cin, Cout), matching im2col order."""
    cout = kernels.shape[0]
    return kernels.transpose(0, 2, 3, 4, 1).reshape(cout, -1).T


def conv3d_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray,
                   stride=(1, 1, 1)) -> np.ndarray:
    """Valid 3D convolution: triple-sum of kernel * input plus bias.

    ``x`` is ``(N,D,H,W,Cin)`` or ``(D,H,W,Cin)``; returns the matching
    arrangement with Cout channels. Activation is the caller's business.
    """
    x, squeeze = _as_batched(np.asarray(x))
    kernels = np.asarray(kernels)
    bias = np.asarray(bias)
    if kernels.ndim != 5:
        raise DimensionError(f"kernels must be (Cout,Cin,T,S,R), got ndim={kernels.ndim}")
    cout, cin, kt, ks, kr = kernels.shape
    if x.shape[4] != cin:
        raise DimensionError(f"input channels {x.shape[4]} != kernel channels {cin}")
    if bias.shape != (cout,):
        raise DimensionError(f"bias shape {bias.shape} != ({cout},)")
    do, ho, wo = conv3d_out_shape(x.shape[1:4], (kt, ks, kr), stride)

    kmat = _kernel_matrix(kernels)
    out = np.empty((x.shape[0], do, ho, wo, cout), dtype=x.dtype)
    for start, stop, cols in _im2col_chunks(x, kt, ks, kr, stride):
        prod = cols @ kmat
        out[start:stop] = prod.reshape(stop - start, do, ho, wo, cout)
    out += bias
    return out[0] if squeeze else out


def conv3d_backward(grad_out: np.ndarray, x: np.ndarray, kernels: np.ndarray,
                    stride=(1, 1, 1)):
    """Exact gradients of :func:`conv3d_forward`.

    Returns ``(grad_input, grad_kernels, grad_bias)``. ``grad_bias[c]`` is the
    sum of ``grad_out`` over channel ``c``.
    """
    x, squeeze = _as_batched(np.asarray(x))
    grad_out, _ = _as_batched(np.asarray(grad_out))
    kernels = np.asarray(kernels)
    cout, cin, kt, ks, kr = kernels.shape
    sd, sh, sw = stride
    do, ho, wo = conv3d_out_shape(x.shape[1:4], (kt, ks, kr), stride)
    if grad_out.shape != (x.shape[0], do, ho, wo, cout):
        raise DimensionError(
            f"grad_out shape {grad_out.shape} != {(x.shape[0], do, ho, wo, cout)}"
        )

    grad_bias = grad_out.sum(axis=(0, 1, 2, 3))

    grad_kernels = np.zeros((cout, kt * ks * kr * cin), dtype=x.dtype)
    for start, stop, cols in _im2col_chunks(x, kt, ks, kr, stride):
        gmat = grad_out[start:stop].reshape(-1, cout)
        grad_kernels += gmat.T @ cols
    grad_kernels = (grad_kernels.reshape(cout, kt, ks, kr, cin)
                    .transpose(0, 4, 1, 2, 3).copy())

    # Scatter grad_out * kernel back to input positions, one kernel offset at
    # a time: strided slices keep the adds vectorized without a col2im buffer.
    grad_input = np.zeros_like(x)
    gmat = grad_out.reshape(-1, cout)
    for dt in range(kt):
        for dh in range(ks):
            for dw in range(kr):
                contrib = gmat @ kernels[:, :, dt, dh, dw]  # (N*P, Cin)
                contrib = contrib.reshape(x.shape[0], do, ho, wo, cin)
                grad_input[:, dt:dt + sd * do:sd,
                           dh:dh + sh * ho:sh,
                           dw:dw + sw * wo:sw, :] += contrib
    if squeeze:
        return grad_input[0], grad_kernels, grad_bias
    return grad_input, grad_kernels, grad_bias


def maxpool3d_forward(x: np.ndarray, window, stride):
    """Max pooling over ``(t,s,r)`` windows.

    Returns ``(output, argmax_map)`` where ``argmax_map`` holds, per output
    element, the flat index of the winning element inside its sample's
    ``(D,H,W,C)`` block. Ties go to the first element in row-major order.
    """
    x, squeeze = _as_batched(np.asarray(x))
    wt, ws, wr = window
    sd, sh, sw = stride
    n, d, h, w, c = x.shape
    do, ho, wo = conv3d_out_shape((d, h, w), window, stride)

    win = sliding_window_view(x, (wt, ws, wr), axis=(1, 2, 3))
    win = win[:, ::sd, ::sh, ::sw]            # (N, Do, Ho, Wo, C, t, s, r)
    flat = win.reshape(n, do, ho, wo, c, wt * ws * wr)
    local = flat.argmax(axis=5)               # first max in (t,s,r) order
    out = np.take_along_axis(flat, local[..., None], axis=5)[..., 0]

    dt = local // (ws * wr)
    rem = local % (ws * wr)
    dh = rem // wr
    dw = rem % wr
    od = np.arange(do)[:, None, None, None] * sd
    oh = np.arange(ho)[None, :, None, None] * sh
    ow = np.arange(wo)[None, None, :, None] * sw
    ch = np.arange(c)[None, None, None, :]
    absd = od + dt
    absh = oh + dh
    absw = ow + dw
    argmap = ((absd * h + absh) * w + absw) * c + ch

    if squeeze:
        return out[0], argmap[0]
    return out, argmap


def maxpool3d_backward(grad_out: np.ndarray, argmap: np.ndarray, input_shape,
                       overlapping: bool = True):
    """Route upstream gradients to their recorded argmax positions.

    Overlapping windows accumulate. Callers whose stride covers the window on
    every axis may pass ``overlapping=False`` to take the direct-assignment
    path (each input position then receives at most one contribution).
    """
    grad_out = np.asarray(grad_out)
    argmap = np.asarray(argmap)
    if grad_out.shape != argmap.shape:
        raise DimensionError(f"grad_out shape {grad_out.shape} != argmap shape {argmap.shape}")
    squeeze = len(input_shape) == 4
    if squeeze:
        input_shape = (1,) + tuple(input_shape)
        grad_out = grad_out[None]
        argmap = argmap[None]
    n = input_shape[0]
    block = int(np.prod(input_shape[1:]))
    grad_in = np.zeros(n * block, dtype=grad_out.dtype)
    offsets = (np.arange(n) * block).reshape((n,) + (1,) * (grad_out.ndim - 1))
    flat_idx = (argmap + offsets).ravel()
    flat_grad = grad_out.ravel()
    if overlapping:
        np.add.at(grad_in, flat_idx, flat_grad)
    else:
        grad_in[flat_idx] = flat_grad
    grad_in = grad_in.reshape(input_shape)
    return grad_in[0] if squeeze else grad_in


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Subgradient 0 at x == 0.
    return np.where(x > 0, grad, 0)


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic, clamped into the open interval (0, 1).

    The branch form never exponentiates a positive argument; the clamp to the
    smallest positive normal float (and to 1 - ulp from above) keeps the
    output strictly inside (0, 1) for every finite input, however extreme.
    """
    z = np.asarray(z)
    dtype = z.dtype if z.dtype in (np.float32, np.float64) else np.dtype(np.float64)
    z = z.astype(dtype, copy=False)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    one = dtype.type(1)
    np.clip(out, np.finfo(dtype).tiny, np.nextafter(one, dtype.type(0)), out=out)
    return out


def dense_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map y = W x + b for a vector or a batch of row vectors."""
    x = np.asarray(x)
    weight = np.asarray(weight)
    bias = np.asarray(bias)
    if weight.ndim != 2:
        raise DimensionError(f"weight must be 2-d, got ndim={weight.ndim}")
    m, nin = weight.shape
    if x.shape[-1] != nin:
        raise DimensionError(f"input width {x.shape[-1]} != weight width {nin}")
    if bias.shape != (m,):
        raise DimensionError(f"bias shape {bias.shape} != ({m},)")
    return x @ weight.T + bias


def dense_backward(grad_out: np.ndarray, x: np.ndarray, weight: np.ndarray):
    """Gradients of :func:`dense_forward`: ``(grad_x, grad_weight, grad_bias)``."""
    grad_out = np.asarray(grad_out)
    x = np.asarray(x)
    g2 = grad_out if grad_out.ndim == 2 else grad_out[None]
    x2 = x if x.ndim == 2 else x[None]
    if g2.shape[1] != weight.shape[0] or x2.shape[1] != weight.shape[1]:
        raise DimensionError("dense_backward shapes inconsistent with weight")
    grad_w = g2.T @ x2
    grad_b = g2.sum(axis=0)
    grad_x = g2 @ weight
    if grad_out.ndim == 1:
        grad_x = grad_x[0]
    return grad_x, grad_w, grad_b


def dropout_mask(shape, rate: float, rng: np.random.Generator,
                 dtype=np.float64) -> np.ndarray:
    """Inverted-dropout mask: kept entries are 1/(1-rate), dropped are 0."""
    if not 0 <= rate < 1:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    dtype = np.dtype(dtype)
    if rate == 0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype.type(1 - rate)
