"""Cross-dimensional convolution: a 3D weight bank phase-shifted in the
Fourier domain, sliced to 2D kernels, plus Conv2D/Conv3D/ACS baselines."""

from .convops import (
    ConfigError,
    ConvGeometry,
    KernelBank5D,
    acs_conv3d,
    acs_partition,
    conv2d,
    conv3d,
    crossd_forward_2d,
    crossd_forward_3d,
)
from .rotparam import (
    RotationParams,
    RotParamHead,
    aggregate_rotation_params,
    head_forward,
    normalize_rotation,
    rodrigues_approx,
)
from .spectral import (
    UnsupportedKernelError,
    extract_mid_slice,
    fft3,
    freq_grid,
    ifft3_real,
    phase_factor,
    rotate_bank,
    rotate_freqs,
)
from .tensorcore import ShapeError

__version__ = "0.1.0"
