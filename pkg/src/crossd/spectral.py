"""Fourier-domain kernel transformation.

Every ``K x K x K`` kernel is transformed, multiplied by the phase field
``exp(-2j*pi*(f'_x + f'_y + f'_z))`` built from rotated frequency grids, and
transformed back. Frequencies are in cycles per sample, so with the identity
rotation this is exactly a one-sample circular shift along each axis; in
general it is a (sub-sample) circular translation by ``R^T (1, 1, 1)``.

Only odd kernel sizes are supported: with an even size the Nyquist bin has no
conjugate partner and a fractional shift no longer yields a real kernel.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import rotparam
from .tensorcore import ShapeError, slice_axis

class UnsupportedKernelError(ValueError):
    """Raised for kernel sizes the phase-shift pipeline cannot handle (even K)."""


@dataclass(frozen=True)
class FreqGrid:
    fx: np.ndarray
    fy: np.ndarray
    fz: np.ndarray

    @property
    def size(self) -> int:
        return self.fx.shape[0]


def _check_cubic(t: np.ndarray) -> int:
    if t.ndim < 3 or not (t.shape[-3] == t.shape[-2] == t.shape[-1]):
        raise ShapeError(f"expected trailing K x K x K axes, got shape {t.shape}")
    return t.shape[-1]


@lru_cache(maxsize=None)
def dft_matrix(k: int, inverse: bool = False) -> np.ndarray:
    """``F[u, n] = exp(-2j*pi*u*n/K)`` (conjugated and divided by K when ``inverse``)."""
    n = np.arange(k)
    # reduce u*n mod K before scaling so the phases are exact multiples of 2*pi/K
    f = np.exp((2j if inverse else -2j) * np.pi * ((np.outer(n, n) % k) / k))
    if inverse:
        f /= k
    f.setflags(write=False)
    return f


def _separable(t: np.ndarray, f: np.ndarray) -> np.ndarray:
    k = f.shape[0]
    t = t @ f.T  # last axis
    t = f @ t  # middle axis
    lead = t.shape[:-3]
    return (f @ t.reshape(lead + (k, k * k))).reshape(lead + (k, k, k))


def fft3(kernel: np.ndarray) -> np.ndarray:
    """Unnormalized forward DFT over the last three axes (leading axes are batch).

    Applied as a dense ``K x K`` transform per axis, which beats a general
    FFT for the tiny kernel sizes used here (K <= 7).
    """
    k = _check_cubic(kernel)
    return _separable(np.asarray(kernel), dft_matrix(k))


def ifft3(spectrum: np.ndarray) -> np.ndarray:
    k = _check_cubic(spectrum)
    return _separable(np.asarray(spectrum, dtype=complex), dft_matrix(k, inverse=True))


def ifft3_real(spectrum: np.ndarray) -> tuple[np.ndarray, float]:
    """Inverse DFT (carrying the ``1/K^3``), returned as real part plus max |imag|."""
    _check_cubic(spectrum)
    out = ifft3(spectrum)
    residual = float(np.max(np.abs(out.imag))) if out.size else 0.0
    return np.ascontiguousarray(out.real), residual


def axis_frequencies(k: int) -> np.ndarray:
    """Standard DFT ordering ``0, 1/K, ..., (K//2)/K, -(K//2)/K, ..., -1/K``."""
    return np.fft.fftfreq(k)


@lru_cache(maxsize=None)
def freq_grid(k: int) -> FreqGrid:
    """Frequency grids for a ``K x K x K`` kernel; ``fx`` varies along the first axis.

    Cached and read-only.
    """
    if k < 1:
        raise ShapeError(f"kernel size must be >= 1, got {k}")
    if k % 2 == 0:
        raise UnsupportedKernelError(f"even kernel size {k} is not supported")
    f = axis_frequencies(k)
    grids = np.meshgrid(f, f, f, indexing="ij")
    for g in grids:
        g.setflags(write=False)
    return FreqGrid(*grids)


def rotate_freqs(rot: np.ndarray, g: FreqGrid) -> FreqGrid:
    """Apply ``rot`` to the frequency vector at every grid point."""
    rot = np.asarray(rot)
    if rot.shape != (3, 3):
        raise ShapeError(f"rotation must be 3 x 3, got {rot.shape}")
    fx = rot[0, 0] * g.fx + rot[0, 1] * g.fy + rot[0, 2] * g.fz
    fy = rot[1, 0] * g.fx + rot[1, 1] * g.fy + rot[1, 2] * g.fz
    fz = rot[2, 0] * g.fx + rot[2, 1] * g.fy + rot[2, 2] * g.fz
    return FreqGrid(fx, fy, fz)


def phase_factor(g: FreqGrid) -> np.ndarray:
    return np.exp(-2j * np.pi * (g.fx + g.fy + g.fz))


def apply_phase(spectrum: np.ndarray, phase: np.ndarray) -> np.ndarray:
    if spectrum.shape[-3:] != phase.shape:
        raise ShapeError(f"phase {phase.shape} does not match spectrum {spectrum.shape}")
    return spectrum * phase


def phase_for_matrix(rot: np.ndarray, k: int) -> np.ndarray:
    return phase_factor(rotate_freqs(rot, freq_grid(k)))


def effective_shift(rot: np.ndarray) -> np.ndarray:
    """Translation (in samples, per kernel axis) realized by the phase field of ``rot``."""
    return np.asarray(rot).T @ np.ones(3)


def rotate_bank_matrix(bank: np.ndarray, rot: np.ndarray, max_residual: float = 1e-8) -> np.ndarray:
    """Phase-shift every trailing ``K x K x K`` kernel of ``bank`` using matrix ``rot``.

    Computed in float64 regardless of the input precision. Raises
    ``FloatingPointError`` if the inverse transform leaves an imaginary part
    larger than ``max_residual`` (relative to the bank's largest magnitude).
    """
    k = _check_cubic(bank)
    phase = phase_for_matrix(rot, k)
    out, residual = ifft3_real(apply_phase(fft3(bank.astype(np.float64, copy=False)), phase))
    scale = max(1.0, float(np.max(np.abs(bank)))) if bank.size else 1.0
    if residual > max_residual * scale:
        raise FloatingPointError(f"imaginary residual {residual:.3e} after phase shift exceeds tolerance")
    return out


def rotate_bank(bank: np.ndarray, params, max_residual: float = 1e-8) -> np.ndarray:
    """Rotate a weight bank with :class:`~crossd.rotparam.RotationParams`."""
    return rotate_bank_matrix(bank, rotparam.rodrigues_approx(params), max_residual)


def extract_mid_slice(rotated: np.ndarray) -> np.ndarray:
    """Depth slice ``K // 2`` of every kernel: ``... x K x K x K`` -> ``... x K x K``."""
    k = _check_cubic(rotated)
    if k % 2 == 0:
        raise UnsupportedKernelError(f"even kernel size {k} has no middle slice")
    return slice_axis(rotated, rotated.ndim - 3, k // 2)
