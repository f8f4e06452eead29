"""Fourier utilities shared by all modules.

Conventions: periodic functions live on equispaced grids over [0, P) with the
left endpoint included and the right excluded.  Vector fields are stored with
the component axis first, shape (n, npts).  Fourier coefficients follow the
numpy FFT layout and are normalized so that ``coeffs = fft(values)/npts``,
i.e. ``values[x] = sum_j coeffs[j] * exp(2i*pi*j*x/P)``.
"""

import numpy as np
from scipy import ndimage


def grid(npts, period=1.0):
    """Equispaced nodes on [0, period)."""
    return np.arange(npts) * (period / npts)


def wavenumbers(npts, period=1.0):
    """Angular wavenumbers 2*pi*j/period in FFT order."""
    return 2.0 * np.pi * np.fft.fftfreq(npts, d=1.0 / npts) / period


def to_coeffs(values):
    return np.fft.fft(values, axis=-1) / values.shape[-1]


def from_coeffs(coeffs):
    return np.fft.ifft(coeffs, axis=-1) * coeffs.shape[-1]


def derivative(values, order=1, period=1.0):
    """Spectral derivative of real or complex periodic samples."""
    npts = values.shape[-1]
    ik = (1j * wavenumbers(npts, period)) ** order
    if order % 2 and npts % 2 == 0:
        # odd derivatives: zero the unmatched Nyquist mode
        ik[npts // 2] = 0.0
    out = from_coeffs(to_coeffs(values) * ik)
    if np.isrealobj(values):
        return out.real
    return out


def shift(values, amount, period=1.0):
    """Translate periodic samples: result(x) = values(x + amount)."""
    npts = values.shape[-1]
    phase = np.exp(1j * wavenumbers(npts, period) * amount)
    if npts % 2 == 0:
        # keep real output real: the Nyquist mode must stay real
        phase[npts // 2] = np.cos(2.0 * np.pi * (npts // 2) * amount / period)
    out = from_coeffs(to_coeffs(values) * phase)
    if np.isrealobj(values):
        return out.real
    return out


def oversample(values, factor):
    """Refine periodic samples onto a grid `factor` times finer (FFT padding)."""
    npts = values.shape[-1]
    coeffs = to_coeffs(values)
    fine = np.zeros(values.shape[:-1] + (npts * factor,), dtype=complex)
    half = npts // 2
    fine[..., :half] = coeffs[..., :half]
    fine[..., -half:] = coeffs[..., -half:]
    if npts % 2 == 0:
        # split the Nyquist coefficient symmetrically
        fine[..., half] = 0.5 * coeffs[..., half]
        fine[..., -half] = 0.5 * coeffs[..., half]
    out = from_coeffs(fine)
    if np.isrealobj(values):
        return out.real
    return out


def sample_shifted(values, shifts, period, oversample_factor=4, spline_order=5):
    """Evaluate periodic samples at x + shifts(x) for a per-node shift field.

    Uses FFT oversampling followed by high-order spline interpolation; accurate
    to ~(dx/oversample_factor)^spline_order for smooth fields, which is ample
    for the residual tolerances used here.
    """
    npts = values.shape[-1]
    fine = oversample(np.atleast_2d(values), oversample_factor)
    dx = period / npts
    idx = (np.arange(npts) * dx + shifts) / dx * oversample_factor
    out = np.stack(
        [
            ndimage.map_coordinates(row, [idx], order=spline_order, mode="grid-wrap")
            for row in fine
        ]
    )
    if values.ndim == 1:
        return out[0]
    return out


class FourierInterpolant:
    """Exact trigonometric interpolation of a single-period profile."""

    def __init__(self, values, period=1.0):
        values = np.atleast_2d(values)
        self.period = period
        self.coeffs = to_coeffs(values)
        self.k = wavenumbers(values.shape[-1], period)

    def __call__(self, x, deriv=0):
        x = np.asarray(x, dtype=float)
        weight = (1j * self.k) ** deriv
        if deriv % 2 and self.coeffs.shape[-1] % 2 == 0:
            weight = weight.copy()
            weight[self.coeffs.shape[-1] // 2] = 0.0
        basis = np.exp(1j * np.outer(x.ravel(), self.k))
        vals = basis @ (self.coeffs * weight).T
        vals = vals.T.reshape(self.coeffs.shape[:-1] + x.shape)
        return vals.real


# ---------------------------------------------------------------------------
# norms: rectangle-rule quadrature for p < inf, grid max for p = inf

def lp_norm(values, p, dx):
    values = np.atleast_2d(values)
    pointwise = np.sqrt(np.sum(np.abs(values) ** 2, axis=0))
    if np.isinf(p):
        return float(pointwise.max())
    return float((np.sum(pointwise**p) * dx) ** (1.0 / p))


def l1_norm(values, dx):
    return lp_norm(values, 1, dx)


def l2_norm(values, dx):
    return lp_norm(values, 2, dx)


def hk_norm(values, k_order, dx, period=None):
    """Sobolev norm (sum of L2 norms of derivatives 0..k) of periodic samples."""
    values = np.atleast_2d(values)
    if period is None:
        period = dx * values.shape[-1]
    total = 0.0
    for j in range(k_order + 1):
        d = derivative(values, j, period) if j else values
        total += l2_norm(d, dx) ** 2
    return float(np.sqrt(total))


def l1_cap_hk_norm(values, k_order, dx, period=None):
    """Norm of L1 ∩ H^k realized as the sum of the two norms."""
    return l1_norm(values, dx) + hk_norm(values, k_order, dx, period)
