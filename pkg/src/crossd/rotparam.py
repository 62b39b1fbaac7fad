"""Rotation parameters predicted from an input feature map.

A single same-padded convolution maps the input to four channels
(three axis components and one raw angle). Each channel is pooled with a
softmax over its own spatial positions, the axis is normalized to unit
length and the angle squashed into [-pi/4, pi/4].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import convops
from .tensorcore import ShapeError

MAX_ANGLE = np.pi / 4
AXIS_EPS = 1e-8
FALLBACK_AXIS = np.array([0.0, 0.0, 1.0])


@dataclass
class RotParamHead:
    conv_weights: np.ndarray  # 4 x C_in x K_h x K_h
    conv_bias: np.ndarray  # 4

    def __post_init__(self):
        if self.conv_weights.ndim != 4 or self.conv_weights.shape[0] != 4:
            raise ShapeError(f"head weights must be 4 x C_in x K_h x K_h, got {self.conv_weights.shape}")
        if self.conv_weights.shape[2] % 2 == 0 or self.conv_weights.shape[2] != self.conv_weights.shape[3]:
            raise ShapeError(f"head kernel must be square and odd, got {self.conv_weights.shape[2:]}")
        if self.conv_bias.shape != (4,):
            raise ShapeError(f"head bias must have shape (4,), got {self.conv_bias.shape}")

    @classmethod
    def zeros(cls, in_channels: int, kernel_size: int = 3) -> "RotParamHead":
        return cls(np.zeros((4, in_channels, kernel_size, kernel_size)), np.zeros(4))

    @classmethod
    def random(cls, in_channels: int, kernel_size: int = 3, scale: float = 0.1,
               rng: np.random.Generator | None = None) -> "RotParamHead":
        rng = rng or np.random.default_rng()
        w = rng.normal(scale=scale, size=(4, in_channels, kernel_size, kernel_size))
        return cls(w, rng.normal(scale=scale, size=4))

    @property
    def in_channels(self) -> int:
        return self.conv_weights.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.conv_weights.shape[2]


@dataclass(frozen=True)
class RotationParams:
    axis: np.ndarray
    angle: float
    degenerate: bool = False


def head_forward(head: RotParamHead, x: np.ndarray) -> np.ndarray:
    """``B x C x H x W`` -> ``B x 4 x H x W`` (same padding, stride 1)."""
    if x.ndim != 4 or x.shape[1] != head.in_channels:
        raise ShapeError(f"input {x.shape} does not match head with {head.in_channels} input channels")
    geom = convops.ConvGeometry.same(head.kernel_size, 2)
    return convops.conv2d(x, head.conv_weights.astype(x.dtype, copy=False), geom,
                          bias=head.conv_bias.astype(x.dtype, copy=False))


def spatial_softmax(features: np.ndarray) -> np.ndarray:
    """Softmax over the flattened spatial positions of each ``(sample, channel)``."""
    flat = features.reshape(features.shape[0], features.shape[1], -1)
    e = np.exp(flat - flat.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def aggregate_rotation_params(features: np.ndarray) -> np.ndarray:
    """Softmax-weighted spatial sum per channel: ``B x 4 x H x W`` -> ``B x 4``."""
    if features.ndim != 4 or features.shape[1] != 4:
        raise ShapeError(f"expected B x 4 x H x W features, got {features.shape}")
    flat = features.reshape(features.shape[0], 4, -1)
    return np.sum(flat * spatial_softmax(features), axis=-1)


def normalize_rotation(r) -> RotationParams:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (4,):
        raise ShapeError(f"raw rotation vector must have 4 entries, got {r.shape}")
    k = r[:3]
    norm = np.sqrt(k @ k)
    angle = float(MAX_ANGLE * np.tanh(r[3]))
    if norm < AXIS_EPS:
        return RotationParams(FALLBACK_AXIS.copy(), angle, degenerate=True)
    return RotationParams(k / norm, angle)


def skew(axis) -> np.ndarray:
    kx, ky, kz = axis
    return np.array([[0.0, -kz, ky],
                     [kz, 0.0, -kx],
                     [-ky, kx, 0.0]])


def rodrigues_approx(p: RotationParams) -> np.ndarray:
    """First-order rotation matrix ``I + angle * skew(axis)``."""
    return np.eye(3) + p.angle * skew(p.axis)


def predict_rotation(head: RotParamHead, x: np.ndarray) -> list[RotationParams]:
    raw = aggregate_rotation_params(head_forward(head, x))
    return [normalize_rotation(r) for r in raw]
