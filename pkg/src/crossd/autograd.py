"""Reverse-mode gradients for the Cross-D Conv pipeline.

Each primitive has a hand-written vector-Jacobian product (``vjp_*``). The
nonlinear ones also get a Jacobian-vector product (``jvp_*``) so adjoint
consistency can be checked without finite differences. :class:`Tape` is a
plain ordered list of recorded primitives replayed in reverse, and
:func:`grad_check` certifies the whole thing against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rotparam, spectral
from .convops import ConvGeometry, _conv_nd, _conv_nd_vjp
from .reference import central_difference
from .rotparam import MAX_ANGLE, RotationParams, RotParamHead, skew

# ---------------------------------------------------------------- primitives


def vjp_conv2d(upstream, x, w, geom: ConvGeometry | None = None, groups: int = 1):
    """Returns ``(grad_x, grad_w)``."""
    geom = geom or ConvGeometry.same(w.shape[-1], 2)
    return _conv_nd_vjp(upstream, x, w, geom.stride, geom.padding, groups)


def vjp_conv3d(upstream, x, w, geom: ConvGeometry | None = None, groups: int = 1):
    geom = geom or ConvGeometry.same(w.shape[-1], 3)
    return _conv_nd_vjp(upstream, x, w, geom.stride, geom.padding, groups)


def vjp_bias(upstream):
    return upstream.sum(axis=tuple(i for i in range(upstream.ndim) if i != 1))


def vjp_aggregate(upstream, features):
    """Adjoint of :func:`~crossd.rotparam.aggregate_rotation_params`."""
    s = rotparam.spatial_softmax(features).reshape(features.shape)
    r = rotparam.aggregate_rotation_params(features)[:, :, None, None]
    return upstream[:, :, None, None] * s * (1.0 + features - r)


def jvp_aggregate(features, tangent):
    s = rotparam.spatial_softmax(features).reshape(features.shape)
    r = rotparam.aggregate_rotation_params(features)[:, :, None, None]
    return np.sum(s * (1.0 + features - r) * tangent, axis=(2, 3))


def vjp_normalize(g_axis, g_angle, r, params: RotationParams):
    """Adjoint of :func:`~crossd.rotparam.normalize_rotation`; zero through a degenerate axis."""
    r = np.asarray(r, dtype=np.float64)
    g = np.zeros(4)
    g[3] = g_angle * MAX_ANGLE * (1.0 - np.tanh(r[3]) ** 2)
    if not params.degenerate:
        a = params.axis
        g[:3] = (g_axis - a * (a @ g_axis)) / np.linalg.norm(r[:3])
    return g


def jvp_normalize(r, params: RotationParams, tangent):
    r = np.asarray(r, dtype=np.float64)
    d_angle = tangent[3] * MAX_ANGLE * (1.0 - np.tanh(r[3]) ** 2)
    if params.degenerate:
        return np.zeros(3), d_angle
    a = params.axis
    dk = tangent[:3]
    return (dk - a * (a @ dk)) / np.linalg.norm(r[:3]), d_angle


def vjp_rodrigues(g_rot, params: RotationParams):
    """Adjoint of ``I + angle * skew(axis)``: returns ``(grad_axis, grad_angle)``."""
    g = np.asarray(g_rot)
    t = params.angle
    g_axis = t * np.array([g[2, 1] - g[1, 2], g[0, 2] - g[2, 0], g[1, 0] - g[0, 1]])
    return g_axis, float(np.sum(g * skew(params.axis)))


def jvp_rodrigues(params: RotationParams, d_axis, d_angle):
    return d_angle * skew(params.axis) + params.angle * skew(d_axis)


def _freq_vectors(k):
    g = spectral.freq_grid(k)
    return (g.fx, g.fy, g.fz)


def vjp_rotate_bank_matrix(upstream, bank, rot):
    """Adjoint of :func:`~crossd.spectral.rotate_bank_matrix`: ``(grad_bank, grad_rot)``.

    The bank gradient is the same phase shift with the conjugate phase field
    (the reverse translation). The matrix gradient flows through the phase
    exponent ``-2*pi*sum_ab R_ab f_b``; its rows are therefore identical.
    """
    k = bank.shape[-1]
    phase = spectral.phase_for_matrix(rot, k)
    up_hat = spectral.fft3(upstream)
    grad_bank = spectral.ifft3(up_hat * np.conj(phase)).real
    d_phi = -np.imag(np.conj(up_hat) * spectral.fft3(bank) * phase) / k**3
    d_phi = d_phi.reshape((-1, k, k, k)).sum(axis=0)
    col = np.array([-2 * np.pi * np.sum(d_phi * f) for f in _freq_vectors(k)])
    return grad_bank, np.tile(col, (3, 1))


def jvp_rotate_bank_matrix(bank, rot, d_bank, d_rot):
    k = bank.shape[-1]
    phase = spectral.phase_for_matrix(rot, k)
    fb = _freq_vectors(k)
    col = np.asarray(d_rot).sum(axis=0)
    d_phi = -2 * np.pi * (col[0] * fb[0] + col[1] * fb[1] + col[2] * fb[2])
    spec = spectral.fft3(d_bank) * phase + spectral.fft3(bank) * phase * 1j * d_phi
    return spectral.ifft3(spec).real


def vjp_rotate_bank(upstream, bank, params: RotationParams):
    """``(grad_bank, grad_axis, grad_angle)`` for a rotation given as axis/angle."""
    grad_bank, g_rot = vjp_rotate_bank_matrix(upstream, bank, rotparam.rodrigues_approx(params))
    g_axis, g_angle = vjp_rodrigues(g_rot, params)
    return grad_bank, g_axis, g_angle


def vjp_slice(upstream, k: int):
    """Scatter a mid-slice gradient back into the ``K x K x K`` cube."""
    out = np.zeros(upstream.shape[:-2] + (k, k, k))
    out[..., k // 2, :, :] = upstream
    return out


def vjp_relu(upstream, x):
    return upstream * (x > 0)


# ---------------------------------------------------------------- tape


@dataclass
class _Node:
    name: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    shapes: tuple[tuple[int, ...], ...]
    vjp: Callable


class Tape:
    """Ordered record of primitive applications.

    ``vjp`` callables take one gradient per output and return one gradient
    per input (``None`` for inputs that need none). ``corrupt`` names
    primitives whose VJP gets its sign flipped; it exists for negative
    controls of the gradient checker.
    """

    def __init__(self, corrupt: Sequence[str] = ()):
        self.nodes: list[_Node] = []
        self.corrupt = set(corrupt)

    def record(self, name: str, inputs: Sequence[str], outputs: Sequence[str], values, vjp: Callable):
        if isinstance(outputs, str):
            outputs, values = (outputs,), (values,)
        shapes = tuple(np.shape(v) for v in values)
        if name in self.corrupt:
            inner = vjp
            vjp = lambda *g: tuple(None if t is None else -t for t in inner(*g))  # noqa: E731
        self.nodes.append(_Node(name, tuple(inputs), tuple(outputs), shapes, vjp))

    def backward(self, seeds: dict) -> dict:
        grads = {k: np.asarray(v, dtype=np.float64) for k, v in seeds.items()}
        for node in reversed(self.nodes):
            if not any(o in grads for o in node.outputs):
                continue
            g_out = [grads[o] if o in grads else np.zeros(s) for o, s in zip(node.outputs, node.shapes)]
            g_in = node.vjp(*g_out)
            for name, g in zip(node.inputs, g_in):
                if g is None:
                    continue
                grads[name] = grads[name] + g if name in grads else np.asarray(g, dtype=np.float64)
        return grads


# ---------------------------------------------------------------- pipeline


def crossd_forward_2d_taped(x, bank_weights, head: RotParamHead, tape: Tape,
                            geom: ConvGeometry | None = None, mode: str = "per-sample",
                            groups: int = 1, bank_bias=None, prefix: str = ""):
    """Cross-D Conv 2D forward pass recording every primitive on ``tape``.

    Leaves are named ``x``, ``bank``, ``head.weight``, ``head.bias`` (and
    ``bank.bias`` when given), each prefixed with ``prefix``. The output is
    recorded as ``<prefix>y``. Returns ``(y, info)`` where ``info`` holds the
    per-sample rotation parameters.
    """
    n = lambda s: prefix + s  # noqa: E731
    k = bank_weights.shape[-1]
    geom = geom or ConvGeometry.same(k, 2)
    hgeom = ConvGeometry.same(head.kernel_size, 2)
    hw, hb = head.conv_weights, head.conv_bias

    feat = _conv_nd(x, hw, hgeom.stride, hgeom.padding, 1, hb)

    def head_vjp(g):
        gx, gw = _conv_nd_vjp(g, x, hw, hgeom.stride, hgeom.padding)
        return gx, gw, vjp_bias(g)
    tape.record("head_conv", [n("x"), n("head.weight"), n("head.bias")], n("feat"), feat, head_vjp)

    raw = rotparam.aggregate_rotation_params(feat)
    tape.record("aggregate", [n("feat")], n("raw"), raw, lambda g: (vjp_aggregate(g, feat),))

    bsz = x.shape[0]
    if mode == "batch-mean":
        groups_of_samples = [(n("raw_mean"), raw.mean(axis=0), slice(0, bsz))]
        tape.record("batch_mean", [n("raw")], n("raw_mean"), groups_of_samples[0][1],
                    lambda g: (np.broadcast_to(g / bsz, raw.shape).copy(),))
    elif mode == "per-sample":
        groups_of_samples = []
        for b in range(bsz):
            key = n(f"raw[{b}]")
            groups_of_samples.append((key, raw[b], slice(b, b + 1)))

            def pick(g, b=b):
                out = np.zeros_like(raw)
                out[b] = g
                return (out,)
            tape.record("select", [n("raw")], key, raw[b], pick)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    params_list, outs = [], []
    for key, r, rows in groups_of_samples:
        tag = key[len(prefix):]
        p = rotparam.normalize_rotation(r)
        params_list.append(p)
        tape.record("normalize", [key], [n(f"axis:{tag}"), n(f"angle:{tag}")], (p.axis, p.angle),
                    lambda ga, gt, r=r, p=p: (vjp_normalize(ga, gt, r, p),))
        rot = rotparam.rodrigues_approx(p)
        tape.record("rodrigues", [n(f"axis:{tag}"), n(f"angle:{tag}")], n(f"R:{tag}"), rot,
                    lambda g, p=p: vjp_rodrigues(g, p))
        rotated = spectral.rotate_bank_matrix(bank_weights, rot)
        tape.record("rotate_bank", [n("bank"), n(f"R:{tag}")], n(f"rot:{tag}"), rotated,
                    lambda g, rot=rot: vjp_rotate_bank_matrix(g, bank_weights, rot))
        k2d = spectral.extract_mid_slice(rotated)
        tape.record("slice", [n(f"rot:{tag}")], n(f"k2d:{tag}"), k2d, lambda g: (vjp_slice(g, k),))
        xs = x[rows]
        y = _conv_nd(xs, k2d, geom.stride, geom.padding, groups, bank_bias)

        def conv_vjp(g, xs=xs, k2d=k2d, rows=rows):
            gxs, gw = _conv_nd_vjp(g, xs, k2d, geom.stride, geom.padding, groups)
            gx = np.zeros_like(x)
            gx[rows] = gxs
            return gx, gw, (None if bank_bias is None else vjp_bias(g))
        tape.record("conv2d", [n("x"), n(f"k2d:{tag}"), n("bank.bias")], n(f"y:{tag}"), y, conv_vjp)
        outs.append(y)

    y = outs[0] if len(outs) == 1 else np.concatenate(outs, axis=0)
    keys = [n(f"y:{key[len(prefix):]}") for key, _, _ in groups_of_samples]
    sizes = [o.shape[0] for o in outs]
    tape.record("concat", keys, n("y"), y,
                lambda g: tuple(np.split(g, np.cumsum(sizes)[:-1], axis=0)))
    return y, {"params": params_list, "raw": raw}


# ---------------------------------------------------------------- checker


@dataclass
class GradCheckConfig:
    batch: int = 1
    in_channels: int = 1
    out_channels: int = 1
    kernel: int = 3
    height: int = 5
    width: int = 5
    mode: str = "per-sample"
    zero_head: bool = False
    head_scale: float = 0.5


@dataclass
class GradReport:
    errors: dict[str, float]
    step: float
    threshold: float
    worst: dict[str, tuple] = field(default_factory=dict)
    failure: str | None = None

    @property
    def passed(self) -> bool:
        return self.failure is None and all(e <= self.threshold for e in self.errors.values())

    def lines(self) -> list[str]:
        out = []
        for name, err in self.errors.items():
            status = "ok" if err <= self.threshold else "FAIL"
            out.append(f"{name:12s} max rel err {err:.3e} (at {self.worst.get(name)}) {status}")
        if self.failure:
            out.append(f"failure: {self.failure}")
        return out


def relative_error(a, n) -> np.ndarray:
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(config: GradCheckConfig | None = None, seed: int = 0, threshold: float = 1e-4,
               step: float = 1e-5, corrupt: Sequence[str] = ()) -> GradReport:
    """Compare tape gradients of ``sum(u * y)`` with central differences for every leaf parameter."""
    cfg = config or GradCheckConfig()
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(cfg.batch, cfg.in_channels, cfg.height, cfg.width))
    bank = rng.normal(size=(cfg.out_channels, cfg.in_channels, cfg.kernel, cfg.kernel, cfg.kernel))
    if cfg.zero_head:
        head = RotParamHead.zeros(cfg.in_channels)
    else:
        head = RotParamHead.random(cfg.in_channels, scale=cfg.head_scale, rng=rng)
    u = rng.normal(size=(cfg.batch, cfg.out_channels, cfg.height, cfg.width))

    def loss(bank_w, hw, hb):
        y, _ = crossd_forward_2d_taped(x, bank_w, RotParamHead(hw, hb), Tape(), mode=cfg.mode)
        return float(np.sum(u * y))

    tape = Tape(corrupt)
    y, _ = crossd_forward_2d_taped(x, bank, head, tape, mode=cfg.mode)
    grads = tape.backward({"y": u})
    leaves = {
        "bank": (bank, lambda v: loss(v, head.conv_weights, head.conv_bias)),
        "head.weight": (head.conv_weights, lambda v: loss(bank, v, head.conv_bias)),
        "head.bias": (head.conv_bias, lambda v: loss(bank, head.conv_weights, v)),
    }
    report = GradReport({}, step, threshold)
    if not np.all(np.isfinite(y)):
        report.failure = f"non-finite forward output at {np.argwhere(~np.isfinite(y))[0].tolist()}"
        return report
    for name, (value, fn) in leaves.items():
        analytic = grads.get(name, np.zeros_like(value))
        numeric = central_difference(fn, value, step)
        for label, arr in (("analytic", analytic), ("numeric", numeric)):
            bad = ~np.isfinite(arr)
            if bad.any():
                report.failure = f"non-finite {label} gradient for {name} at {np.argwhere(bad)[0].tolist()}"
                return report
        err = relative_error(analytic, numeric)
        report.errors[name] = float(err.max())
        report.worst[name] = tuple(int(i) for i in np.unravel_index(np.argmax(err), err.shape))
    return report

