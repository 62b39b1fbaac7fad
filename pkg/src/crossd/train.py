"""Toy end-to-end training of one Cross-D Conv layer.

Task: tell apart roughly horizontal from roughly vertical bars. Model:
Cross-D Conv (per-sample rotation) -> ReLU -> global average pool -> linear
-> softmax cross-entropy, trained full-batch with plain SGD.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tape, crossd_forward_2d_taped, vjp_relu
from .rotparam import RotParamHead


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 200
    lr: float = 0.05
    seed: int = 7
    samples: int = 32
    size: int = 11
    out_channels: int = 4
    kernel: int = 3
    log_every: int = 10


@dataclass
class TrainResult:
    losses: list[float]
    accuracy: float
    angle_grad_step0: float
    angles_step0: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "losses": self.losses,
            "initial_loss": self.losses[0],
            "final_loss": self.losses[-1],
            "final_accuracy": self.accuracy,
            "metadata": {
                "angle_grad_norm_step0": self.angle_grad_step0,
                "angle_grad_nonzero_step0": bool(self.angle_grad_step0 > 0.0),
                "angles_step0": self.angles_step0,
            },
        }


def make_bars(n: int, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``n`` standardized single-channel bar images; label 0 near horizontal, 1 near vertical."""
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    yy, xx = np.mgrid[0:size, 0:size] - (size - 1) / 2
    images = np.empty((n, 1, size, size))
    for i, lab in enumerate(labels):
        theta = rng.uniform(-np.pi / 6, np.pi / 6) + lab * np.pi / 2
        offset = rng.uniform(-1.5, 1.5)
        # distance from the line through the (offset) centre with direction theta
        dist = -np.sin(theta) * xx + np.cos(theta) * yy - offset
        images[i, 0] = np.exp(-0.5 * (dist / 0.8) ** 2) + rng.normal(scale=0.05, size=(size, size))
    images -= images.mean(axis=(2, 3), keepdims=True)
    images /= images.std(axis=(2, 3), keepdims=True)
    return images, labels


def _softmax_xent(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    n = len(labels)
    loss = -np.mean(np.log(p[np.arange(n), labels]))
    g = p.copy()
    g[np.arange(n), labels] -= 1.0
    return loss, g / n, p


def train_demo(config: TrainConfig | None = None, echo=None) -> TrainResult:
    """Run the demo; ``echo`` receives a progress line every ``log_every`` steps."""
    cfg = config or TrainConfig()
    if cfg.steps < 1:
        raise ValueError("steps must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    x, labels = make_bars(cfg.samples, cfg.size, rng)
    k = cfg.kernel
    bank = rng.normal(scale=0.5, size=(cfg.out_channels, 1, k, k, k))
    head = RotParamHead.random(1, scale=0.3, rng=rng)
    lin_w = rng.normal(scale=0.5, size=(2, cfg.out_channels))
    lin_b = np.zeros(2)

    losses: list[float] = []
    angle_grad0, angles0, acc = 0.0, [], 0.0
    for step in range(cfg.steps + 1):
        tape = Tape()
        y, info = crossd_forward_2d_taped(x, bank, head, tape, mode="per-sample")
        act = np.maximum(y, 0.0)
        pooled = act.mean(axis=(2, 3))
        logits = pooled @ lin_w.T + lin_b
        loss, g_logits, prob = _softmax_xent(logits, labels)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        losses.append(float(loss))
        acc = float(np.mean(prob.argmax(axis=1) == labels))
        if echo is not None and (step % cfg.log_every == 0 or step == cfg.steps):
            echo(f"step {step:4d}  loss {loss:.4f}  acc {acc:.3f}")
        if step == cfg.steps:
            break

        g_lin_w = g_logits.T @ pooled
        g_lin_b = g_logits.sum(axis=0)
        g_pooled = g_logits @ lin_w
        g_act = np.broadcast_to(g_pooled[:, :, None, None] / (y.shape[2] * y.shape[3]), y.shape)
        grads = tape.backward({"y": vjp_relu(g_act, y)})

        if step == 0:
            angle_keys = [key for key in grads if key.startswith("angle:")]
            angle_grad0 = float(np.sqrt(sum(float(grads[key]) ** 2 for key in angle_keys)))
            angles0 = [p.angle for p in info["params"]]

        bank = bank - cfg.lr * grads["bank"]
        head = RotParamHead(head.conv_weights - cfg.lr * grads["head.weight"],
                            head.conv_bias - cfg.lr * grads["head.bias"])
        lin_w = lin_w - cfg.lr * g_lin_w
        lin_b = lin_b - cfg.lr * g_lin_b
    return TrainResult(losses, acc, angle_grad0, angles0)
