"""Invariant suites behind ``crossd check``.

Each suite returns a list of :class:`CheckResult`. The suites compare the
fast code paths with the loop-based routines in :mod:`crossd.reference`.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import autograd, convops, reference, rotparam, spectral, transfer
from .rotparam import RotationParams
from .tensorcore import roll

SUITES = ("spectral", "conv", "grad", "transfer")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _random_params(rng, max_angle=np.pi / 4) -> RotationParams:
    axis = rng.normal(size=3)
    return RotationParams(axis / np.linalg.norm(axis), float(rng.uniform(-max_angle, max_angle)))


def _bank(rng, k):
    return rng.normal(size=(rng.integers(1, 5), rng.integers(1, 5), k, k, k))


def spectral_suite(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    err = 0.0
    for _ in range(20):
        k = int(rng.choice([3, 5, 7]))
        u = _bank(rng, k)
        p = RotationParams(rng.normal(size=3) / np.sqrt(3), 0.0)
        err = max(err, float(np.max(np.abs(spectral.rotate_bank(u, p) - roll(u, (1, 1, 1), axes=(2, 3, 4))))))
    out.append(CheckResult("theta=0 roll oracle", err <= 1e-10, f"max |rotate - roll(1,1,1)| = {err:.2e}"))

    err = 0.0
    for _ in range(10):
        k = int(rng.choice([3, 5]))
        u = rng.normal(size=(k, k, k))
        p = RotationParams(np.array([0.0, 0.0, 1.0]), float(rng.uniform(-0.3, 0.3)))
        rot = rotparam.rodrigues_approx(p)
        ref = reference.fractional_shift_3d(u, spectral.effective_shift(rot))
        err = max(err, float(np.max(np.abs(spectral.rotate_bank(u, p) - ref))))
    out.append(CheckResult("fractional shift oracle", err <= 1e-8, f"max error {err:.2e}"))

    worst_ratio, worst_res = 0.0, 0.0
    for _ in range(20):
        k = int(rng.choice([3, 5, 7]))
        u = _bank(rng, k)
        rot = rotparam.rodrigues_approx(_random_params(rng))
        outk, res = spectral.ifft3_real(spectral.fft3(u) * spectral.phase_for_matrix(rot, k))
        worst_ratio = max(worst_ratio, abs(np.linalg.norm(outk) / np.linalg.norm(u) - 1))
        worst_res = max(worst_res, res)
    out.append(CheckResult("unitarity", worst_ratio <= 1e-6 and worst_res <= 1e-8,
                           f"max |ratio-1| {worst_ratio:.2e}, max imag residual {worst_res:.2e}"))

    err = 0.0
    for _ in range(3):
        a = rng.normal(size=(3, 3, 3))
        err = max(err, float(np.max(np.abs(spectral.fft3(a) - reference.naive_dft3(a)))))
    out.append(CheckResult("fft3 vs naive DFT", err <= 1e-10, f"max error {err:.2e}"))
    return out


def conv_suite(seed: int = 0, count: int = 10) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    errs = {"conv2d": 0.0, "conv3d": 0.0, "acs_conv3d": 0.0}
    for _ in range(count):
        k = int(rng.choice([1, 3]))
        g = int(rng.choice([1, 2]))
        cin, cout = g * int(rng.integers(1, 3)), g * int(rng.integers(1, 3))
        x = rng.normal(size=(2, cin, *rng.integers(k, 7, size=2)))
        w = rng.normal(size=(cout, cin // g, k, k))
        geom = convops.ConvGeometry(tuple(rng.integers(1, 3, size=2)), tuple(rng.integers(0, 2, size=2)))
        ref = reference.window_conv(x, w, geom.stride, geom.padding, g)
        errs["conv2d"] = max(errs["conv2d"], float(np.max(np.abs(convops.conv2d(x, w, geom, g) - ref))))

        x3 = rng.normal(size=(1, cin, *rng.integers(k, 6, size=3)))
        w3 = rng.normal(size=(cout, cin // g, k, k, k))
        ref = reference.window_conv(x3, w3, (1, 1, 1), (k // 2,) * 3, g)
        errs["conv3d"] = max(errs["conv3d"], float(np.max(np.abs(convops.conv3d(x3, w3, None, g) - ref))))

        w2 = rng.normal(size=(3, cin, k, k))
        ref = reference.acs_swept(x3, w2, (1, 1, 1))
        errs["acs_conv3d"] = max(errs["acs_conv3d"], float(np.max(np.abs(convops.acs_conv3d(x3, w2) - ref))))
    return [CheckResult(f"{name} vs loop oracle", e <= 1e-12, f"max error {e:.2e}") for name, e in errs.items()]


def grad_suite(seed: int = 0, corrupt=()) -> list[CheckResult]:
    report = autograd.grad_check(autograd.GradCheckConfig(), seed=seed, corrupt=corrupt)
    detail = "; ".join(f"{k} {v:.2e}" for k, v in report.errors.items())
    if report.failure:
        detail += f"; {report.failure}"
    return [CheckResult("gradient vs central differences", report.passed, detail)]


def transfer_suite(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "w.xdcw")
        tensors = {f"t{r}": rng.normal(size=tuple(rng.integers(1, 4, size=r))) for r in range(1, 6)}
        transfer.save_archive(path, tensors)
        back = transfer.load_archive(path)
        ok = back.keys() == tensors.keys() and all(
            back[n].tobytes() == np.ascontiguousarray(tensors[n]).tobytes() for n in tensors)
        out.append(CheckResult("archive round trip", ok, f"{len(tensors)} tensors, ranks 1-5"))
        with open(path, "r+b") as fh:
            fh.write(b"XXXX")
        try:
            transfer.load_archive(path)
            rejected = False
        except transfer.ArchiveFormatError:
            rejected = True
        out.append(CheckResult("bad magic rejected", rejected, "format error raised" if rejected else "accepted"))
    bank = convops.KernelBank5D(rng.normal(size=(2, 2, 3, 3, 3)))
    p = _random_params(rng)
    same = np.array_equal(transfer.derive_2d_kernels(bank, p),
                          spectral.extract_mid_slice(transfer.derive_3d_kernels(bank, p).weights))
    out.append(CheckResult("2D export equals mid-slice of 3D export", same, "bitwise"))
    return out


def run(suite: str = "all", seed: int = 0, corrupt=()) -> list[CheckResult]:
    names = SUITES if suite == "all" else (suite,)
    results = []
    for name in names:
        if name == "spectral":
            results += spectral_suite(seed)
        elif name == "conv":
            results += conv_suite(seed)
        elif name == "grad":
            results += grad_suite(seed, corrupt)
        elif name == "transfer":
            results += transfer_suite(seed)
        else:
            raise ValueError(f"unknown suite {name!r}")
    return results
