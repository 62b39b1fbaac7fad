"""Direct convolutions and the Cross-D Conv forward passes.

All convolutions use the cross-correlation convention (no kernel flip) with
zero padding. Layouts are channels-first: ``B x C x H x W`` for images and
``B x C x D x H x W`` for volumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import rotparam, spectral
from .tensorcore import ShapeError


class ConfigError(ValueError):
    """Raised for operator configurations that cannot be executed."""


@dataclass(frozen=True)
class ConvGeometry:
    stride: tuple[int, ...]
    padding: tuple[int, ...]

    def __post_init__(self):
        if len(self.stride) != len(self.padding):
            raise ShapeError("stride and padding must have one entry per spatial axis")
        if any(s < 1 for s in self.stride):
            raise ShapeError(f"strides must be positive, got {self.stride}")
        if any(p < 0 for p in self.padding):
            raise ShapeError(f"padding must be non-negative, got {self.padding}")

    @classmethod
    def same(cls, kernel_size: int, ndim: int = 2) -> "ConvGeometry":
        return cls((1,) * ndim, (kernel_size // 2,) * ndim)

    @property
    def ndim(self) -> int:
        return len(self.stride)

    def output_shape(self, spatial: Sequence[int], kernel: Sequence[int]) -> tuple[int, ...]:
        out = tuple(
            (n + 2 * p - k) // s + 1
            for n, k, s, p in zip(spatial, kernel, self.stride, self.padding)
        )
        if any(n + 2 * p - k < 0 for n, k, p in zip(spatial, kernel, self.padding)):
            raise ShapeError(
                f"kernel {tuple(kernel)} does not fit input {tuple(spatial)} with padding {self.padding}"
            )
        return out


@dataclass
class KernelBank5D:
    """Learnable ``C_out x C_in/G x K x K x K`` weight bank shared by the 2D and 3D paths."""

    weights: np.ndarray
    groups: int = 1
    bias: np.ndarray | None = field(default=None)

    def __post_init__(self):
        w = self.weights
        if w.ndim != 5:
            raise ShapeError(f"kernel bank must be rank 5, got shape {w.shape}")
        if not (w.shape[2] == w.shape[3] == w.shape[4]):
            raise ShapeError(f"kernel bank must be cubic, got {w.shape[2:]}")
        if self.groups < 1 or w.shape[0] % self.groups:
            raise ShapeError(f"C_out={w.shape[0]} is not divisible by groups={self.groups}")
        if w.shape[2] % 2 == 0:
            raise spectral.UnsupportedKernelError(f"kernel size must be odd, got {w.shape[2]}")
        if self.bias is not None and self.bias.shape != (w.shape[0],):
            raise ShapeError(f"bias must have shape ({w.shape[0]},), got {self.bias.shape}")

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1] * self.groups


def _resize(x: np.ndarray, pads: Sequence[int]) -> np.ndarray:
    """Zero-pad (positive) or symmetrically crop (negative) the trailing spatial axes."""
    nd = len(pads)
    if any(p < 0 for p in pads):
        sl = [slice(None)] * (x.ndim - nd) + [slice(-p, x.shape[x.ndim - nd + i] + p) if p < 0 else slice(None)
                                              for i, p in enumerate(pads)]
        x = x[tuple(sl)]
    if any(p > 0 for p in pads):
        width = [(0, 0)] * (x.ndim - nd) + [(max(p, 0), max(p, 0)) for p in pads]
        x = np.pad(x, width)
    return x


def _unresize(g: np.ndarray, pads: Sequence[int]) -> np.ndarray:
    """Adjoint of :func:`_resize`."""
    nd = len(pads)
    if any(p > 0 for p in pads):
        sl = [slice(None)] * (g.ndim - nd) + [slice(p, g.shape[g.ndim - nd + i] - p) if p > 0 else slice(None)
                                              for i, p in enumerate(pads)]
        g = g[tuple(sl)]
    if any(p < 0 for p in pads):
        width = [(0, 0)] * (g.ndim - nd) + [(max(-p, 0), max(-p, 0)) for p in pads]
        g = np.pad(g, width)
    return g


def _windows(xp: np.ndarray, kshape: Sequence[int], stride: Sequence[int]) -> np.ndarray:
    nd = len(kshape)
    win = sliding_window_view(xp, tuple(kshape), axis=tuple(range(2, 2 + nd)))
    sl = (slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)
    return win[sl]


def _check_conv_args(x, w, nd, groups):
    if x.ndim != nd + 2 or w.ndim != nd + 2:
        raise ShapeError(f"expected rank-{nd + 2} input and weights, got {x.shape} and {w.shape}")
    if groups < 1 or x.shape[1] % groups or w.shape[0] % groups:
        raise ShapeError(f"channels ({x.shape[1]} in, {w.shape[0]} out) not divisible by groups={groups}")
    if x.shape[1] // groups != w.shape[1]:
        raise ShapeError(
            f"input has {x.shape[1]} channels but weights expect {w.shape[1]} per group x {groups} groups"
        )


def _conv_nd(x, w, stride, pads, groups=1, bias=None):
    """Forward convolution as one GEMM over all taps followed by shifted adds.

    ``Z = W_taps @ X`` gives every tap's contribution at every padded input
    position; the output sums the ``K^n`` strided windows of ``Z``. Memory
    traffic scales with taps x output channels, which keeps thin-kernel
    (ACS) and few-output-channel (head) convolutions proportionally cheap.
    """
    nd = w.ndim - 2
    xp = _resize(x, pads)
    ksz = w.shape[2:]
    if any(n < k for n, k in zip(xp.shape[2:], ksz)):
        raise ShapeError(f"kernel {ksz} larger than padded input {xp.shape[2:]}")
    out_sp = tuple((n - k) // s + 1 for n, k, s in zip(xp.shape[2:], ksz, stride))
    taps = int(np.prod(ksz))
    b = xp.shape[0]
    cin_g, cout_g = w.shape[1], w.shape[0] // groups
    y = np.empty((w.shape[0], b) + out_sp, dtype=np.result_type(x, w))
    for g in range(groups):
        xm = np.moveaxis(xp[:, g * cin_g:(g + 1) * cin_g], 1, 0).reshape(cin_g, -1)
        wg = w[g * cout_g:(g + 1) * cout_g].reshape(cout_g, cin_g, taps)
        z = (np.moveaxis(wg, 2, 0).reshape(taps * cout_g, cin_g) @ xm)
        z = z.reshape((taps, cout_g, b) + xp.shape[2:])
        acc = y[g * cout_g:(g + 1) * cout_g]
        for t, kidx in enumerate(np.ndindex(*ksz)):
            sl = tuple(slice(k, k + s * (o - 1) + 1, s) for k, s, o in zip(kidx, stride, out_sp))
            if t == 0:
                acc[...] = z[(t, slice(None), slice(None)) + sl]
            else:
                acc += z[(t, slice(None), slice(None)) + sl]
    y = np.moveaxis(y, 0, 1)
    if bias is not None:
        y = y + bias.reshape((1, -1) + (1,) * nd).astype(y.dtype, copy=False)
    return np.ascontiguousarray(y)


def _conv_nd_vjp(upstream, x, w, stride, pads, groups=1):
    nd = w.ndim - 2
    xp = _resize(x, pads)
    win = _windows(xp, w.shape[2:], stride)
    cin_g, cout_g = w.shape[1], w.shape[0] // groups
    out_sp = upstream.shape[2:]
    red = [0] + list(range(2, 2 + nd))
    grad_w = np.empty_like(w)
    grad_xp = np.zeros_like(xp)
    for g in range(groups):
        ug = upstream[:, g * cout_g:(g + 1) * cout_g]
        wg = w[g * cout_g:(g + 1) * cout_g]
        grad_w[g * cout_g:(g + 1) * cout_g] = np.tensordot(ug, win[:, g * cin_g:(g + 1) * cin_g], axes=(red, red))
        # cols: B x C_in/G x out... x k...
        cols = np.moveaxis(np.tensordot(ug, wg, axes=([1], [0])), 1 + nd, 1)
        for kidx in np.ndindex(*w.shape[2:]):
            sl = tuple(slice(k, k + s * (o - 1) + 1, s) for k, s, o in zip(kidx, stride, out_sp))
            grad_xp[(slice(None), slice(g * cin_g, (g + 1) * cin_g)) + sl] += cols[(Ellipsis,) + kidx]
    return _unresize(grad_xp, pads), grad_w


def conv2d(x: np.ndarray, w: np.ndarray, geom: ConvGeometry | None = None, groups: int = 1,
           bias: np.ndarray | None = None) -> np.ndarray:
    """2D cross-correlation, ``B x C_in x H x W`` -> ``B x C_out x H' x W'``."""
    geom = geom or ConvGeometry.same(w.shape[-1], 2)
    _check_conv_args(x, w, 2, groups)
    geom.output_shape(x.shape[2:], w.shape[2:])
    return _conv_nd(x, w, geom.stride, geom.padding, groups, bias)


def conv3d(x: np.ndarray, w: KernelBank5D | np.ndarray, geom: ConvGeometry | None = None,
           groups: int = 1, bias: np.ndarray | None = None) -> np.ndarray:
    """3D cross-correlation; ``w`` may be a :class:`KernelBank5D` (its groups/bias win)."""
    if isinstance(w, KernelBank5D):
        groups, bias, w = w.groups, w.bias, w.weights
    geom = geom or ConvGeometry.same(w.shape[-1], 3)
    _check_conv_args(x, w, 3, groups)
    geom.output_shape(x.shape[2:], w.shape[2:])
    return _conv_nd(x, w, geom.stride, geom.padding, groups, bias)


def acs_partition(c_out: int) -> tuple[int, int, int]:
    """Output-channel split between the axial, coronal and sagittal views."""
    if c_out < 3:
        raise ConfigError(f"ACS convolution needs at least 3 output channels, got {c_out}")
    a = math.ceil(c_out / 3)
    b = math.ceil((c_out - a) / 2)
    return a, b, c_out - a - b


def acs_conv3d(x: np.ndarray, w2d: np.ndarray, geom: ConvGeometry | None = None,
               bias: np.ndarray | None = None) -> np.ndarray:
    """Axial-coronal-sagittal convolution of a volume with 2D kernels.

    Output channels are split into three contiguous blocks (see
    :func:`acs_partition`). Block ``i`` uses its 2D kernels with unit extent
    along spatial axis ``i`` (depth, height, width respectively). ``geom`` is
    interpreted as for a ``K x K x K`` kernel so that all three blocks share
    the output shape of :func:`conv3d`.
    """
    if w2d.ndim != 4 or w2d.shape[2] != w2d.shape[3]:
        raise ShapeError(f"ACS weights must be C_out x C_in x K x K, got {w2d.shape}")
    if x.ndim != 5 or x.shape[1] != w2d.shape[1]:
        raise ShapeError(f"input {x.shape} incompatible with ACS weights {w2d.shape}")
    k = w2d.shape[2]
    geom = geom or ConvGeometry.same(k, 3)
    geom.output_shape(x.shape[2:], (k, k, k))
    parts = []
    start = 0
    for view, size in enumerate(acs_partition(w2d.shape[0])):
        if size == 0:
            continue
        w3 = np.expand_dims(w2d[start:start + size], axis=2 + view)
        pads = list(geom.padding)
        pads[view] -= k // 2
        parts.append(_conv_nd(x, w3, geom.stride, pads))
        start += size
    y = np.concatenate(parts, axis=1)
    if bias is not None:
        y = y + bias.reshape(1, -1, 1, 1, 1)
    return y


def crossd_kernels_2d(bank: KernelBank5D, params: rotparam.RotationParams) -> np.ndarray:
    rotated = spectral.rotate_bank(bank.weights, params)
    return spectral.extract_mid_slice(rotated).astype(bank.weights.dtype, copy=False)


def crossd_forward_2d(x: np.ndarray, bank: KernelBank5D, head: rotparam.RotParamHead,
                      geom: ConvGeometry | None = None, mode: str = "per-sample") -> np.ndarray:
    """Rotate the bank per input, take its middle depth slice, then run ``conv2d``.

    ``mode="per-sample"`` gives every sample its own rotation;
    ``mode="batch-mean"`` averages the raw rotation vectors over the batch
    and convolves the whole batch with one kernel set.
    """
    if x.ndim != 4 or x.shape[1] != bank.in_channels:
        raise ShapeError(f"input {x.shape} incompatible with bank of {bank.in_channels} input channels")
    geom = geom or ConvGeometry.same(bank.kernel_size, 2)
    raw = rotparam.aggregate_rotation_params(rotparam.head_forward(head, x))
    if mode == "batch-mean":
        params = rotparam.normalize_rotation(raw.mean(axis=0))
        return conv2d(x, crossd_kernels_2d(bank, params), geom, bank.groups, bank.bias)
    if mode != "per-sample":
        raise ConfigError(f"unknown mode {mode!r}")
    outs = []
    for b in range(x.shape[0]):
        params = rotparam.normalize_rotation(raw[b])
        outs.append(conv2d(x[b:b + 1], crossd_kernels_2d(bank, params), geom, bank.groups, bank.bias))
    return np.concatenate(outs, axis=0)


def crossd_forward_3d(x: np.ndarray, bank: KernelBank5D, params: rotparam.RotationParams,
                      geom: ConvGeometry | None = None) -> np.ndarray:
    """Use the rotated bank directly as a 3D kernel."""
    rotated = spectral.rotate_bank(bank.weights, params).astype(bank.weights.dtype, copy=False)
    return conv3d(x, rotated, geom, bank.groups, bank.bias)
