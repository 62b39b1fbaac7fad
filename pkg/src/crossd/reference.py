"""Slow, loop-based reference implementations.

Nothing here touches the FFT or the vectorized convolution code paths; these
routines exist only to check them (used by the test-suite and ``crossd check``).
"""

from __future__ import annotations

import cmath
import math
from itertools import product

import numpy as np


def naive_dft3(kernel: np.ndarray) -> np.ndarray:
    """Triple-sum DFT of one ``K x K x K`` volume, O(K^6)."""
    k = kernel.shape[0]
    out = np.zeros(kernel.shape, dtype=complex)
    idx = list(product(range(k), repeat=3))
    for u, v, w in idx:
        acc = 0j
        for a, b, c in idx:
            acc += kernel[a, b, c] * cmath.exp(-2j * math.pi * (u * a + v * b + w * c) / k)
        out[u, v, w] = acc
    return out


def naive_idft3(spectrum: np.ndarray) -> np.ndarray:
    k = spectrum.shape[0]
    return np.conj(naive_dft3(np.conj(spectrum))) / k**3


def fractional_shift_1d(x: np.ndarray, shift: float, axis: int) -> np.ndarray:
    """Band-limited circular translation of ``x`` by ``shift`` samples along ``axis`` (odd length).

    Uses the periodic interpolation kernel
    ``h(d) = 1/K * sum_{m=-K//2}^{K//2} cos(2*pi*m*(d - shift)/K)``.
    """
    k = x.shape[axis]
    if k % 2 == 0:
        raise ValueError("fractional shift reference requires an odd extent")
    half = k // 2
    h = np.zeros(k)
    for d in range(k):
        h[d] = sum(math.cos(2 * math.pi * m * (d - shift) / k) for m in range(-half, half + 1)) / k
    xm = np.moveaxis(x, axis, 0)
    out = np.zeros_like(xm, dtype=float)
    for n in range(k):
        for m in range(k):
            out[n] += h[(n - m) % k] * xm[m]
    return np.moveaxis(out, 0, axis)


def fractional_shift_3d(kernel: np.ndarray, shift) -> np.ndarray:
    """Translate the trailing three axes by ``shift`` (per-axis, in samples)."""
    out = kernel
    for i, s in enumerate(shift):
        out = fractional_shift_1d(out, float(s), out.ndim - 3 + i)
    return out


def _padded(x, pads):
    width = [(0, 0)] * (x.ndim - len(pads)) + [(p, p) for p in pads]
    return np.pad(x, width)


def loop_conv(x: np.ndarray, w: np.ndarray, stride, padding, groups: int = 1, bias=None) -> np.ndarray:
    """Direct cross-correlation for any number of spatial axes, one output element at a time."""
    nd = w.ndim - 2
    xp = _padded(x, padding)
    ksz = w.shape[2:]
    out_sp = [(xp.shape[2 + i] - ksz[i]) // stride[i] + 1 for i in range(nd)]
    b_n, c_out = x.shape[0], w.shape[0]
    cin_g, cout_g = w.shape[1], c_out // groups
    y = np.zeros((b_n, c_out, *out_sp))
    for b in range(b_n):
        for co in range(c_out):
            g = co // cout_g
            for o in product(*[range(n) for n in out_sp]):
                acc = 0.0
                for ci in range(cin_g):
                    for kk in product(*[range(n) for n in ksz]):
                        pos = tuple(o[i] * stride[i] + kk[i] for i in range(nd))
                        acc += xp[(b, g * cin_g + ci) + pos] * w[(co, ci) + kk]
                y[(b, co) + o] = acc + (0.0 if bias is None else bias[co])
    return y


def window_conv(x: np.ndarray, w: np.ndarray, stride, padding, groups: int = 1) -> np.ndarray:
    """Same as :func:`loop_conv` but with the inner window product done by numpy (faster)."""
    nd = w.ndim - 2
    xp = _padded(x, padding)
    ksz = w.shape[2:]
    out_sp = [(xp.shape[2 + i] - ksz[i]) // stride[i] + 1 for i in range(nd)]
    cin_g, cout_g = w.shape[1], w.shape[0] // groups
    y = np.zeros((x.shape[0], w.shape[0], *out_sp))
    for b in range(x.shape[0]):
        for co in range(w.shape[0]):
            g = co // cout_g
            xs = xp[b, g * cin_g:(g + 1) * cin_g]
            for o in product(*[range(n) for n in out_sp]):
                sl = tuple(slice(o[i] * stride[i], o[i] * stride[i] + ksz[i]) for i in range(nd))
                y[(b, co) + o] = np.sum(xs[(slice(None),) + sl] * w[co])
    return y


def acs_embedded(x: np.ndarray, w2d: np.ndarray, stride, padding, parts) -> np.ndarray:
    """ACS reference: embed each 2D kernel as the middle plane of a K^3 kernel, then direct 3D conv."""
    k = w2d.shape[-1]
    w3 = np.zeros((w2d.shape[0], w2d.shape[1], k, k, k))
    start = 0
    for view, size in enumerate(parts):
        for co in range(start, start + size):
            idx = [slice(None)] * 3
            idx[view] = k // 2
            w3[(co, slice(None)) + tuple(idx)] = w2d[co]
        start += size
    return window_conv(x, w3, stride, padding)


def acs_swept(x: np.ndarray, w2d: np.ndarray, parts) -> np.ndarray:
    """ACS reference for same padding, stride 1: plain 2D convolution of every slice along each view axis."""
    k = w2d.shape[-1]
    p = k // 2
    out = np.zeros((x.shape[0], w2d.shape[0]) + x.shape[2:])
    start = 0
    for view, size in enumerate(parts):
        xv = np.moveaxis(x, 2 + view, 0)  # slices along the view axis
        for s in range(xv.shape[0]):
            y2 = window_conv(xv[s], w2d[start:start + size], (1, 1), (p, p))
            idx = [slice(None)] * 5
            idx[1] = slice(start, start + size)
            idx[2 + view] = s
            out[tuple(idx)] = y2
        start += size
    return out


def aggregate_explicit(features: np.ndarray) -> np.ndarray:
    """Per-channel softmax-weighted sum written as plain Python sums."""
    b_n, c_n = features.shape[:2]
    flat = features.reshape(b_n, c_n, -1)
    r = np.zeros((b_n, c_n))
    for b in range(b_n):
        for c in range(c_n):
            vals = [float(v) for v in flat[b, c]]
            m = max(vals)
            e = [math.exp(v - m) for v in vals]
            z = sum(e)
            r[b, c] = sum(v * ei / z for v, ei in zip(vals, e))
    return r


def central_difference(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Gradient of scalar ``fn`` at ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(*x.shape):
        orig = x[i]
        x[i] = orig + h
        fp = fn(x)
        x[i] = orig - h
        fm = fn(x)
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g
