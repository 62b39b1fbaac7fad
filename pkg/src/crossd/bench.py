"""Forward-pass timing of Conv2D, Cross-D Conv, ACS-Conv and Conv3D.

For a 2D workload ``(B, C, H, W)`` the volumetric operators run on
``(B, C, D, H, W)`` with ``D`` equal to the kernel size unless overridden.
All operators in one run share identically seeded inputs and weights, and run
under the same thread budget.
"""

from __future__ import annotations

import csv
import io
import json
import os
import platform
import re
import time
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field

import numpy as np

from . import convops, spectral
from .convops import ConfigError, ConvGeometry, KernelBank5D
from .rotparam import RotParamHead

OPERATORS = ("conv2d", "crossd", "acs", "conv3d")
CSV_COLUMNS = ("shape", "operator", "median_ms", "min_ms", "max_ms", "repeats")
DEFAULT_SHAPE = (2, 8, 32, 32)

_SHAPE_RE = re.compile(r"^\s*(\d+)x(\d+)x(\d+)x(\d+)\s*$")


def parse_shapes(text: str) -> list[tuple[int, int, int, int]]:
    """Parse ``"BxCxHxW[,BxCxHxW...]"``."""
    shapes = []
    for part in text.split(","):
        m = _SHAPE_RE.match(part)
        if not m:
            raise ConfigError(f"malformed shape {part.strip()!r}; expected BxCxHxW")
        shape = tuple(int(g) for g in m.groups())
        if min(shape) < 1:
            raise ConfigError(f"shape extents must be positive, got {part.strip()!r}")
        shapes.append(shape)
    return shapes


def resolve_threads(threads: int | None) -> int | None:
    if threads is None and os.environ.get("CROSSD_THREADS"):
        try:
            threads = int(os.environ["CROSSD_THREADS"])
        except ValueError:
            raise ConfigError(f"CROSSD_THREADS must be an integer, got {os.environ['CROSSD_THREADS']!r}") from None
    if threads is not None and threads < 1:
        raise ConfigError(f"thread count must be positive, got {threads}")
    return threads


@dataclass
class BenchConfig:
    shapes: list[tuple[int, int, int, int]] = field(default_factory=lambda: [DEFAULT_SHAPE])
    repeats: int = 20
    warmup: int = 3
    kernel: int = 3
    seed: int = 0
    precision: str = "f32"
    format: str = "json"
    mode: str = "batch-mean"
    threads: int | None = None
    depth: int | None = None

    def validate(self) -> None:
        if self.repeats < 3:
            raise ConfigError(f"repeats must be >= 3 for a meaningful median, got {self.repeats}")
        if self.warmup < 0:
            raise ConfigError(f"warmup must be non-negative, got {self.warmup}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel size must be odd and positive, got {self.kernel}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.format not in ("json", "csv"):
            raise ConfigError(f"format must be json or csv, got {self.format!r}")
        if self.mode not in ("per-sample", "batch-mean"):
            raise ConfigError(f"mode must be per-sample or batch-mean, got {self.mode!r}")
        if not self.shapes:
            raise ConfigError("at least one shape is required")
        for shape in self.shapes:
            if len(shape) != 4 or min(shape) < 1:
                raise ConfigError(f"invalid shape {shape}")
            if shape[1] < 3:
                raise ConfigError(f"ACS needs at least 3 channels, shape {shape} has {shape[1]}")
        if self.depth is not None and self.depth < 1:
            raise ConfigError(f"depth must be positive, got {self.depth}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


@dataclass
class Workload:
    x: np.ndarray
    volume: np.ndarray
    bank: KernelBank5D
    head: RotParamHead
    w2d: np.ndarray


def make_workload(shape, cfg: BenchConfig) -> Workload:
    b, c, h, w = shape
    k = cfg.kernel
    d = cfg.depth or k
    rng = np.random.default_rng(cfg.seed)
    x = rng.standard_normal((b, c, h, w)).astype(cfg.dtype)
    volume = rng.standard_normal((b, c, d, h, w)).astype(cfg.dtype)
    bank = KernelBank5D(rng.standard_normal((c, c, k, k, k)).astype(cfg.dtype) / np.sqrt(c * k**3))
    head = RotParamHead.random(c, rng=rng)
    head = RotParamHead(head.conv_weights.astype(cfg.dtype), head.conv_bias.astype(cfg.dtype))
    w2d = np.ascontiguousarray(spectral.extract_mid_slice(bank.weights))
    return Workload(x, volume, bank, head, w2d)


def operator_calls(wl: Workload, mode: str) -> dict:
    k = wl.bank.kernel_size
    g2, g3 = ConvGeometry.same(k, 2), ConvGeometry.same(k, 3)
    return {
        "conv2d": lambda: convops.conv2d(wl.x, wl.w2d, g2),
        "crossd": lambda: convops.crossd_forward_2d(wl.x, wl.bank, wl.head, g2, mode=mode),
        "acs": lambda: convops.acs_conv3d(wl.volume, wl.w2d, g3),
        "conv3d": lambda: convops.conv3d(wl.volume, wl.bank, g3),
    }


def time_call(fn, repeats: int, warmup: int) -> list[float]:
    """Wall times in milliseconds (monotonic clock) after ``warmup`` untimed calls."""
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        times.append((time.perf_counter_ns() - t0) / 1e6)
    return times


@dataclass
class BenchReport:
    rows: list[dict]
    environment: dict
    methodology: dict

    def medians(self, shape) -> dict[str, float]:
        key = "x".join(map(str, shape))
        return {r["operator"]: r["median_ms"] for r in self.rows if r["shape"] == key}

    def ordering_holds(self, shape) -> bool:
        """``conv2d <= crossd < acs < conv3d`` by median time."""
        m = self.medians(shape)
        return m["conv2d"] <= m["crossd"] < m["acs"] < m["conv3d"]

    def to_dict(self) -> dict:
        return {"results": self.rows, "environment": self.environment, "methodology": self.methodology}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows)
        return buf.getvalue()

    def render(self, fmt: str) -> str:
        return self.to_json() if fmt == "json" else self.to_csv()


def _thread_limit(threads):
    if threads is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def bench(cfg: BenchConfig) -> BenchReport:
    cfg.validate()
    threads = resolve_threads(cfg.threads)
    rows = []
    with _thread_limit(threads):
        for shape in cfg.shapes:
            wl = make_workload(shape, cfg)
            for name, fn in operator_calls(wl, cfg.mode).items():
                times = time_call(fn, cfg.repeats, cfg.warmup)
                rows.append({
                    "shape": "x".join(map(str, shape)),
                    "operator": name,
                    "median_ms": float(np.median(times)),
                    "min_ms": float(min(times)),
                    "max_ms": float(max(times)),
                    "repeats": cfg.repeats,
                })
    environment = {
        "threads": threads if threads is not None else "default",
        "cpu_count": os.cpu_count(),
        "precision": cfg.precision,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "machine": platform.machine(),
    }
    methodology = {
        "clock": "time.perf_counter_ns (monotonic)",
        "statistic": "median of repeats after warmup, forward pass only",
        "repeats": cfg.repeats,
        "warmup": cfg.warmup,
        "kernel": cfg.kernel,
        "volume_depth": cfg.depth or cfg.kernel,
        "padding": "same (K//2), stride 1",
        "crossd_mode": cfg.mode,
        "seed": cfg.seed,
        "config": {k: v for k, v in asdict(cfg).items() if k != "shapes"},
    }
    return BenchReport(rows, environment, methodology)
