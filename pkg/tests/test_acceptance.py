"""Exit criteria. Each test prints one PASS/FAIL line (also collected in the terminal summary)."""

import os
import tempfile
import time

import numpy as np
import pytest

from crossd import autograd, bench, convops, reference, rotparam, spectral, transfer
from crossd.rotparam import RotationParams
from crossd.tensorcore import roll
from crossd.train import TrainConfig, train_demo

pytestmark = pytest.mark.acceptance


def random_params(rng, max_angle=np.pi / 4):
    axis = rng.normal(size=3)
    return RotationParams(axis / np.linalg.norm(axis), float(rng.uniform(-max_angle, max_angle)))


def random_bank(rng, k):
    return rng.normal(size=(rng.integers(1, 5), rng.integers(1, 5), k, k, k))


def test_c1_runtime_ordering(report_criterion):
    t0 = time.perf_counter()
    cfg = bench.BenchConfig(shapes=[bench.DEFAULT_SHAPE], repeats=20, warmup=3, kernel=3, precision="f32")
    runs = []
    for run in range(5):
        cfg.seed = run
        rep = bench.bench(cfg)
        m = rep.medians(bench.DEFAULT_SHAPE)
        runs.append((rep.ordering_holds(bench.DEFAULT_SHAPE), m))
    held = sum(ok for ok, _ in runs)
    elapsed = time.perf_counter() - t0
    last = runs[-1][1]
    detail = (f"ordering held in {held}/5 runs; last medians (ms) "
              + " ".join(f"{k}={v:.3f}" for k, v in last.items()) + f"; {elapsed:.1f}s")
    passed = held >= 4 and elapsed < 60
    report_criterion(1, "runtime ordering conv2d <= crossd < acs < conv3d", passed, detail)
    assert passed, detail


def test_c2_shift_theorem_oracle(report_criterion, rng):
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        k = int(rng.choice([3, 5, 7]))
        u = random_bank(rng, k)
        axis = rng.normal(size=3)
        p = RotationParams(axis / np.linalg.norm(axis), 0.0)
        worst = max(worst, float(np.max(np.abs(spectral.rotate_bank(u, p) - roll(u, (1, 1, 1), axes=(2, 3, 4))))))
    elapsed = time.perf_counter() - t0
    passed = worst <= 1e-10 and elapsed < 10
    report_criterion(2, "theta=0 rotation equals roll by (1,1,1)", passed, f"max abs err {worst:.2e}; {elapsed:.2f}s")
    assert passed


def test_c3_unitarity(report_criterion, rng):
    t0 = time.perf_counter()
    worst_ratio, worst_res = 0.0, 0.0
    for _ in range(100):
        k = int(rng.choice([1, 3, 5, 7]))
        u = random_bank(rng, k)
        rot = rotparam.rodrigues_approx(random_params(rng))
        out, res = spectral.ifft3_real(spectral.fft3(u) * spectral.phase_for_matrix(rot, k))
        worst_ratio = max(worst_ratio, abs(np.linalg.norm(out) / np.linalg.norm(u) - 1))
        worst_res = max(worst_res, res)
    elapsed = time.perf_counter() - t0
    passed = worst_ratio <= 1e-6 and worst_res <= 1e-8 and elapsed < 10
    report_criterion(3, "energy preserved and imaginary residual small", passed,
                     f"max |ratio-1| {worst_ratio:.2e}, max residual {worst_res:.2e}; {elapsed:.2f}s")
    assert passed


def test_c4_fractional_shift_oracle(report_criterion, rng):
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        k = int(rng.choice([3, 5, 7]))
        u = random_bank(rng, k)
        p = random_params(rng)
        shift = spectral.effective_shift(rotparam.rodrigues_approx(p))
        ref = np.empty_like(u)
        for idx in np.ndindex(*u.shape[:2]):
            ref[idx] = reference.fractional_shift_3d(u[idx], shift)
        worst = max(worst, float(np.max(np.abs(spectral.rotate_bank(u, p) - ref))))
    elapsed = time.perf_counter() - t0
    passed = worst <= 1e-8 and elapsed < 30
    report_criterion(4, "rotation matches per-axis fractional shift by R^T(1,1,1)", passed,
                     f"max abs err {worst:.2e}; {elapsed:.2f}s")
    assert passed


def _geom(rng, nd, k, extents):
    stride = tuple(int(s) for s in rng.integers(1, 3, size=nd))
    pad = tuple(int(p) for p in rng.integers(0, k // 2 + 2, size=nd))
    return convops.ConvGeometry(stride, pad)


def test_c5_convolution_oracles(report_criterion, rng):
    t0 = time.perf_counter()
    worst = {"conv2d": 0.0, "conv3d": 0.0, "acs_conv3d": 0.0}
    for i in range(200):
        op = ("conv2d", "conv3d", "acs_conv3d")[i % 3]
        k = int(rng.choice([1, 3, 5]))
        if op == "conv2d":
            g = int(rng.choice([1, 2]))
            cin, cout = g * int(rng.integers(1, 3)), g * int(rng.integers(1, 3))
            x = rng.normal(size=(int(rng.integers(1, 3)), cin, *rng.integers(k, 9, size=2)))
            w = rng.normal(size=(cout, cin // g, k, k))
            geom = _geom(rng, 2, k, x.shape[2:])
            bias = rng.normal(size=cout)
            got = convops.conv2d(x, w, geom, g, bias)
            ref = reference.loop_conv(x, w, geom.stride, geom.padding, g, bias)
        elif op == "conv3d":
            k = min(k, 3)
            g = int(rng.choice([1, 2]))
            cin, cout = g, g * int(rng.integers(1, 3))
            x = rng.normal(size=(1, cin, *rng.integers(k, 7, size=3)))
            w = rng.normal(size=(cout, cin // g, k, k, k))
            geom = _geom(rng, 3, k, x.shape[2:])
            got = convops.conv3d(x, w, geom, g)
            ref = reference.loop_conv(x, w, geom.stride, geom.padding, g)
        else:
            k = min(k, 3)
            cout = int(rng.integers(3, 7))
            x = rng.normal(size=(1, int(rng.integers(1, 3)), *rng.integers(k, 7, size=3)))
            w = rng.normal(size=(cout, x.shape[1], k, k))
            geom = _geom(rng, 3, k, x.shape[2:])
            got = convops.acs_conv3d(x, w, geom)
            ref = reference.acs_embedded(x, w, geom.stride, geom.padding, convops.acs_partition(cout))
        worst[op] = max(worst[op], float(np.max(np.abs(got - ref))))
    elapsed = time.perf_counter() - t0
    passed = max(worst.values()) <= 1e-12 and elapsed < 30
    report_criterion(5, "conv2d / conv3d / acs_conv3d vs brute-force loops", passed,
                     ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f}s")
    assert passed


def test_c6_gradient_certification(report_criterion, rng):
    t0 = time.perf_counter()
    cfg = autograd.GradCheckConfig(batch=1, in_channels=1, out_channels=1, kernel=3, height=5, width=5)
    report = autograd.grad_check(cfg, seed=0, threshold=1e-4)

    # per-primitive <u, J v> == <J^T u, v>
    def dot_rel(a, b):
        return abs(a - b) / max(abs(a), abs(b), 1e-30)

    adj = {}
    x, dx = rng.normal(size=(2, 1, 2, 5, 5))
    w, dw = rng.normal(size=(2, 3, 2, 3, 3))
    u = rng.normal(size=(1, 3, 5, 5))
    gx, gw = autograd.vjp_conv2d(u, x, w)
    adj["conv2d"] = max(dot_rel(np.sum(u * convops.conv2d(dx, w)), np.sum(gx * dx)),
                        dot_rel(np.sum(u * convops.conv2d(x, dw)), np.sum(gw * dw)))
    x3, dx3 = rng.normal(size=(2, 1, 2, 4, 4, 4))
    w3, dw3 = rng.normal(size=(2, 2, 2, 3, 3, 3))
    u3 = rng.normal(size=(1, 2, 4, 4, 4))
    gx3, gw3 = autograd.vjp_conv3d(u3, x3, w3)
    adj["conv3d"] = max(dot_rel(np.sum(u3 * convops.conv3d(dx3, w3)), np.sum(gx3 * dx3)),
                        dot_rel(np.sum(u3 * convops.conv3d(x3, dw3)), np.sum(gw3 * dw3)))
    f, df = rng.normal(size=(2, 1, 4, 5, 5))
    ua = rng.normal(size=(1, 4))
    adj["aggregate"] = dot_rel(np.sum(ua * autograd.jvp_aggregate(f, df)),
                               np.sum(autograd.vjp_aggregate(ua, f) * df))
    r, dr = rng.normal(size=(2, 4))
    p = rotparam.normalize_rotation(r)
    g_ax, g_an = rng.normal(size=3), float(rng.normal())
    da, dt = autograd.jvp_normalize(r, p, dr)
    adj["normalize"] = dot_rel(g_ax @ da + g_an * dt, autograd.vjp_normalize(g_ax, g_an, r, p) @ dr)
    ur, d_axis, d_angle = rng.normal(size=(3, 3)), rng.normal(size=3), float(rng.normal())
    ra, rt = autograd.vjp_rodrigues(ur, p)
    adj["rodrigues"] = dot_rel(np.sum(ur * autograd.jvp_rodrigues(p, d_axis, d_angle)), ra @ d_axis + rt * d_angle)
    bank, dbank = rng.normal(size=(2, 2, 2, 3, 3, 3))
    rot, drot = rotparam.rodrigues_approx(p), rng.normal(size=(3, 3))
    ub = rng.normal(size=bank.shape)
    gb, grot = autograd.vjp_rotate_bank_matrix(ub, bank, rot)
    adj["rotate_bank"] = dot_rel(np.sum(ub * autograd.jvp_rotate_bank_matrix(bank, rot, dbank, drot)),
                                 np.sum(gb * dbank) + np.sum(grot * drot))
    us = rng.normal(size=(2, 2, 3, 3))
    ds = rng.normal(size=(2, 2, 3, 3, 3))
    adj["slice"] = dot_rel(np.sum(us * ds[:, :, 1]), np.sum(autograd.vjp_slice(us, 3) * ds))

    elapsed = time.perf_counter() - t0
    worst_adj = max(adj.values())
    passed = report.passed and worst_adj <= 1e-8 and elapsed < 60
    detail = (f"leaf rel err: " + ", ".join(f"{k} {v:.1e}" for k, v in report.errors.items())
              + f"; worst adjoint mismatch {worst_adj:.1e} ({max(adj, key=adj.get)}); {elapsed:.1f}s")
    report_criterion(6, "gradients vs central differences and adjoint identities", passed, detail)
    assert passed, report.lines()


def test_c7_trainability(report_criterion):
    t0 = time.perf_counter()
    res = train_demo(TrainConfig(steps=200, lr=0.05, seed=7))
    elapsed = time.perf_counter() - t0
    ratio = res.losses[-1] / res.losses[0]
    passed = ratio <= 0.5 and res.angle_grad_step0 > 0 and elapsed < 120
    report_criterion(7, "train-demo halves the loss with a live angle gradient", passed,
                     f"loss {res.losses[0]:.4f} -> {res.losses[-1]:.4f} (ratio {ratio:.3f}), "
                     f"|dL/dangle| at step 0 = {res.angle_grad_step0:.2e}, accuracy {res.accuracy:.2f}; {elapsed:.1f}s")
    assert passed


def test_c8_serialization(report_criterion, rng):
    t0 = time.perf_counter()
    lossless = 0
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "set.xdcw")
        for i in range(50):
            tensors = {}
            for j in range(int(rng.integers(0, 6))):
                rank = int(rng.integers(1, 6))
                t = rng.normal(size=tuple(rng.integers(1, 5, size=rank))) * 10.0 ** rng.integers(-300, 300)
                tensors[f"tensor/{i}.{j}"] = t
            transfer.save_archive(path, tensors)
            back = transfer.load_archive(path)
            ok = list(back) == list(tensors) and all(
                back[n].shape == tensors[n].shape and back[n].tobytes() == tensors[n].tobytes() for n in tensors)
            lossless += ok
        with open(path, "r+b") as fh:
            fh.write(b"XDCX")
        try:
            transfer.load_archive(path)
            rejected = False
        except transfer.ArchiveFormatError:
            rejected = True
    elapsed = time.perf_counter() - t0
    passed = lossless == 50 and rejected and elapsed < 5
    report_criterion(8, "archive round trip is bitwise and bad magic is rejected", passed,
                     f"{lossless}/50 sets bitwise, corrupted magic {'rejected' if rejected else 'accepted'}; "
                     f"{elapsed:.2f}s")
    assert passed


def test_c9_aggregation_properties(report_criterion, rng):
    t0 = time.perf_counter()
    worst = {"constant": 0.0, "saturation": 0.0, "oracle": 0.0}
    for _ in range(100):
        b, h, w = int(rng.integers(1, 3)), int(rng.integers(1, 7)), int(rng.integers(1, 7))
        c = rng.normal(size=(b, 4))
        const = np.broadcast_to(c[:, :, None, None], (b, 4, h, w)).copy()
        worst["constant"] = max(worst["constant"], float(np.max(np.abs(rotparam.aggregate_rotation_params(const) - c))))

        field = rng.normal(size=(b, 4, h, w))
        flat = field.reshape(b, 4, -1)
        peak = flat.argmax(axis=2)
        # one location dominating by a wide margin drives the weighted sum to its value
        sat = flat.copy()
        np.put_along_axis(sat, peak[..., None], np.take_along_axis(flat, peak[..., None], 2) + 200.0, axis=2)
        target = np.take_along_axis(sat, peak[..., None], 2)[..., 0]
        got = rotparam.aggregate_rotation_params(sat.reshape(field.shape))
        worst["saturation"] = max(worst["saturation"], float(np.max(np.abs(got - target))))

        worst["oracle"] = max(worst["oracle"], float(np.max(np.abs(
            rotparam.aggregate_rotation_params(field) - reference.aggregate_explicit(field)))))
    elapsed = time.perf_counter() - t0
    passed = max(worst.values()) <= 1e-12 and elapsed < 5
    report_criterion(9, "softmax aggregation: constant field, saturation, explicit sums", passed,
                     ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.2f}s")
    assert passed
