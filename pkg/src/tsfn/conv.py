"""Convolution kernels (cross-correlation, no kernel flip).

The temporal kernel convolves along axis 2 of an ``(N, C, T, ...)`` array and
broadcasts over any trailing axes, so the same routine serves the TCN stack on
``(N, C, T)`` sequences and the R(2+1)D temporal stage on ``(N, C, T, H, W)``
clips. The spatial kernel convolves over the last two axes of an
``(N, C, ..., H, W)`` array, i.e. independently per frame when a time axis sits
in the middle. Unbatched inputs (``C x T`` or ``C x H x W``) are accepted too.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, InvalidInputError
from .tensor import Tensor, _make, as_tensor

PADDINGS = ("causal", "same", "valid")


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    in_channels: int
    temporal_extent: int = 1
    spatial_extent: int = 1
    dilation: int = 1
    stride: int = 1
    padding: str = "valid"

    def __post_init__(self):
        for field in ("out_channels", "in_channels", "temporal_extent", "spatial_extent",
                      "dilation", "stride"):
            if int(getattr(self, field)) < 1:
                raise ConfigError(f"{field} must be positive, got {getattr(self, field)}")
        if self.padding not in PADDINGS:
            raise ConfigError(f"unknown padding {self.padding!r}")

    def temporal_kernel_shape(self) -> tuple[int, int, int]:
        return (self.out_channels, self.in_channels, self.temporal_extent)

    def spatial_kernel_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.spatial_extent, self.spatial_extent)

    def kernel3d_shape(self) -> tuple[int, int, int, int, int]:
        return (self.out_channels, self.in_channels, self.temporal_extent,
                self.spatial_extent, self.spatial_extent)


def _pad_amounts(padding: str, span: int) -> tuple[int, int]:
    """Zero padding (before, after) for a kernel covering ``span`` samples."""
    if padding == "valid":
        return 0, 0
    if padding == "causal":
        return span - 1, 0
    total = span - 1
    return total // 2, total - total // 2


def output_length(n: int, extent: int, dilation: int, stride: int, padding: str) -> int:
    """Output extent along one axis; pure function of the input extent and spec."""
    span = dilation * (extent - 1) + 1
    before, after = _pad_amounts(padding, span)
    padded = n + before + after
    if padded < span:
        raise InvalidInputError(f"kernel span {span} exceeds padded extent {padded}")
    return (padded - span) // stride + 1


def _check_channels(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None, spec: ConvSpec):
    if kernel.shape[0] != spec.out_channels or kernel.shape[1] != spec.in_channels:
        raise DimensionError(f"kernel shape {kernel.shape} does not match spec "
                             f"K={spec.out_channels}, C={spec.in_channels}", axis=0)
    if x.shape[1] != spec.in_channels:
        raise DimensionError(f"input has {x.shape[1]} channels, spec expects {spec.in_channels}",
                             axis=1)
    if bias is not None and bias.shape != (spec.out_channels,):
        raise DimensionError(f"bias shape {bias.shape} != ({spec.out_channels},)", axis=0)


# -- temporal (1-D along axis 2) ------------------------------------------
# Both kernels build a column array laid out (N, C*taps, L) so the output comes
# straight out of one batched matmul already in (N, K, ...) order.

def _temporal_forward(x, w, b, dilation, stride, padding):
    N, C, n_t = x.shape[:3]
    rest = x.shape[3:]
    K, _, d_t = w.shape
    span = dilation * (d_t - 1) + 1
    before, after = _pad_amounts(padding, span)
    t_out = output_length(n_t, d_t, dilation, stride, padding)
    pad = [(0, 0)] * x.ndim
    pad[2] = (before, after)
    xp = np.pad(x, pad) if before or after else x
    stop = stride * (t_out - 1) + 1
    cols = np.stack([xp[:, :, i * dilation:i * dilation + stop:stride] for i in range(d_t)],
                    axis=2).reshape(N, C * d_t, -1)
    out = np.matmul(w.reshape(K, C * d_t), cols)
    if b is not None:
        out += b[:, None]
    return out.reshape((N, K, t_out) + rest), cols, xp.shape, (before, after), t_out


def _temporal_backward(g, w, cols, xp_shape, pads, t_out, dilation, stride, need_x=True):
    K, C, d_t = w.shape
    N = g.shape[0]
    g3 = g.reshape(N, K, -1)
    gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    gb = g3.sum(axis=(0, 2))
    if not need_x:
        return None, gw, gb
    gcols = np.matmul(w.reshape(K, C * d_t).T, g3).reshape((N, C, d_t, t_out) + xp_shape[3:])
    gxp = np.zeros(xp_shape)
    stop = stride * (t_out - 1) + 1
    for i in range(d_t):
        gxp[:, :, i * dilation:i * dilation + stop:stride] += gcols[:, :, i]
    before, after = pads
    gx = gxp[:, :, before:xp_shape[2] - after] if before or after else gxp
    return gx, gw, gb


def conv1d_temporal(x: Tensor, kernel: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """Dilated 1-D convolution along the time axis.

    ``x`` is ``C x T`` or ``N x C x T x ...``; ``kernel`` is ``K x C x d_t``. With
    causal padding, ``out[k, t] = sum_c sum_i kernel[k, c, i] * x[c, t - dilation*(d_t-1-i)]``
    with zeros before ``t = 0``, so no output depends on a later input.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    bias = as_tensor(bias) if bias is not None else None
    unbatched = x.ndim == 2
    xd = x.data[None] if unbatched else x.data
    if xd.ndim < 3:
        raise DimensionError(f"expected C x T or N x C x T x ..., got {x.shape}", axis=0)
    if xd.shape[2] == 0:
        raise InvalidInputError("zero-length time axis")
    if kernel.ndim != 3 or kernel.shape[2] != spec.temporal_extent:
        raise DimensionError(f"temporal kernel must be {spec.temporal_kernel_shape()}, "
                             f"got {kernel.shape}", axis=2)
    _check_channels(xd, kernel.data, None if bias is None else bias.data, spec)
    out, cols, xp_shape, pads, t_out = _temporal_forward(
        xd, kernel.data, None if bias is None else bias.data,
        spec.dilation, spec.stride, spec.padding)

    def fn(g):
        g = g[None] if unbatched else g
        gx, gw, gb = _temporal_backward(g, kernel.data, cols, xp_shape, pads, t_out,
                                        spec.dilation, spec.stride, x.requires_grad)
        if gx is not None and unbatched:
            gx = gx[0]
        return (gx, gw) + ((gb,) if bias is not None else ())

    parents = (x, kernel) + ((bias,) if bias is not None else ())
    return _make(out[0] if unbatched else out, parents, fn)


# -- spatial (2-D over the last two axes) ---------------------------------

def _spatial_forward(x, w, b, stride, padding):
    K, C, k, _ = w.shape
    N = x.shape[0]
    mid = x.shape[2:-2]
    H, W = x.shape[-2:]
    ph = _pad_amounts(padding, k)
    h_out = output_length(H, k, 1, stride, padding)
    w_out = output_length(W, k, 1, stride, padding)
    pad = [(0, 0)] * (x.ndim - 2) + [ph, ph]
    xp = np.pad(x, pad) if ph != (0, 0) else x
    win = sliding_window_view(xp, (k, k), axis=(-2, -1))[..., ::stride, ::stride, :, :]
    win = win[..., :h_out, :w_out, :, :]
    # (N, C, *mid, Ho, Wo, k, k) -> (N, C, k, k, *mid, Ho, Wo)
    nd = win.ndim
    order = (0, 1, nd - 2, nd - 1) + tuple(range(2, nd - 2))
    cols = np.ascontiguousarray(win.transpose(order)).reshape(N, C * k * k, -1)
    out = np.matmul(w.reshape(K, -1), cols)
    if b is not None:
        out += b[:, None]
    return out.reshape((N, K) + mid + (h_out, w_out)), cols, xp.shape, ph, (h_out, w_out)


def _spatial_backward(g, w, cols, xp_shape, ph, hw_out, stride, need_x=True):
    K, C, k, _ = w.shape
    N = g.shape[0]
    h_out, w_out = hw_out
    g3 = g.reshape(N, K, -1)
    gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    gb = g3.sum(axis=(0, 2))
    if not need_x:
        return None, gw, gb
    gcols = np.matmul(w.reshape(K, -1).T, g3).reshape((N, C, k, k) + g.shape[2:])
    gxp = np.zeros(xp_shape)
    for i in range(k):
        for j in range(k):
            gxp[..., i:i + stride * (h_out - 1) + 1:stride,
                j:j + stride * (w_out - 1) + 1:stride] += gcols[:, :, i, j]
    before, after = ph
    if before or after:
        gxp = gxp[..., before:xp_shape[-2] - after, before:xp_shape[-1] - after]
    return gxp, gw, gb


def conv2d_spatial(x: Tensor, kernel: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """2-D cross-correlation over the last two axes (``C x H x W`` or ``N x C x ... x H x W``)."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    bias = as_tensor(bias) if bias is not None else None
    if spec.padding == "causal":
        raise ConfigError("causal padding is only defined for temporal convolution")
    k = spec.spatial_extent
    if spec.padding == "same" and k % 2 == 0:
        raise ConfigError("same padding needs an odd spatial extent")
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim < 4:
        raise DimensionError(f"expected C x H x W or N x C x ... x H x W, got {x.shape}", axis=0)
    if kernel.ndim != 4 or kernel.shape[2:] != (k, k):
        raise DimensionError(f"spatial kernel must be {spec.spatial_kernel_shape()}, "
                             f"got {kernel.shape}", axis=2)
    _check_channels(xd, kernel.data, None if bias is None else bias.data, spec)
    out, cols, xp_shape, ph, hw = _spatial_forward(xd, kernel.data,
                                                   None if bias is None else bias.data,
                                                   spec.stride, spec.padding)

    def fn(g):
        g = g[None] if unbatched else g
        gx, gw, gb = _spatial_backward(g, kernel.data, cols, xp_shape, ph, hw, spec.stride,
                                       x.requires_grad)
        if gx is not None and unbatched:
            gx = gx[0]
        return (gx, gw) + ((gb,) if bias is not None else ())

    parents = (x, kernel) + ((bias,) if bias is not None else ())
    return _make(out[0] if unbatched else out, parents, fn)


# -- reference 3-D -----------------------------------------------------------

def conv3d_reference(x: Tensor, kernel: Tensor, spec: ConvSpec | None = None) -> Tensor:
    """Direct evaluation of the 3-D sum ``Y[k,t,h,w] = sum W[k,c,i,j,m] V[c,t+i,h+j,w+m]``.

    Valid padding, stride 1, no bias. Meant as a correctness reference, not for
    training; the result carries no gradient.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 5:
        raise DimensionError(f"expected C x T x H x W input and K x C x d x k x k kernel, "
                             f"got {x.shape} and {kernel.shape}", axis=0)
    if spec is not None:
        if spec.padding != "valid" or spec.stride != 1:
            raise ConfigError("conv3d_reference supports valid padding at stride 1 only")
        if kernel.shape != spec.kernel3d_shape():
            raise DimensionError(f"kernel {kernel.shape} != spec {spec.kernel3d_shape()}", axis=0)
    K, C, d, kh, kw = kernel.shape
    if x.shape[0] != C:
        raise DimensionError(f"input has {x.shape[0]} channels, kernel expects {C}", axis=0)
    _, T, H, W = x.shape
    t_out, h_out, w_out = T - d + 1, H - kh + 1, W - kw + 1
    if min(t_out, h_out, w_out) < 1:
        raise InvalidInputError(f"kernel {kernel.shape[2:]} larger than input {x.shape[1:]}")
    v, wt = x.data, kernel.data
    out = np.zeros((K, t_out, h_out, w_out))
    for i in range(d):
        for j in range(kh):
            for m in range(kw):
                patch = v[:, i:i + t_out, j:j + h_out, m:m + w_out]
                out += np.tensordot(wt[:, :, i, j, m], patch, axes=([1], [0]))
    return Tensor(out)
