"""Bloch transform on multi-period domains and Floquet spectra of the
linearization about a wave train.

The linearized operator about a unit-period profile,

    L = k^2 d_xx + k c d_x + b(x),      b(x) = df(u_bar(x)),

has periodic coefficients, so on a domain of N periods it block-diagonalizes
over the sideband frequencies xi in [-pi, pi).  The conjugated operators

    L_xi = k^2 (d_x + i xi)^2 + k c (d_x + i xi) + b(x)

act on 1-periodic functions and are assembled here as dense Fourier-Galerkin
matrices.  Eigenvalues are per unit time of the reaction-diffusion equation.

Transform conventions (discrete): a field g sampled on N*M points over [0, N)
decomposes as

    g(x) = sum_a dxi * exp(i xi_a x) * gcheck(xi_a, x),     dxi = 2 pi / N,

with gcheck(xi_a, .) 1-periodic, realized by one FFT and a reshape.  With the
1/(2 pi) forward-Fourier normalization used here, Parseval reads

    ||g||^2_{L2[0,N)} = 2 pi * sum_a dxi * ||gcheck(xi_a)||^2_{L2[0,1]},

exact to rounding on the grid.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import _spectral as sp
from .profile import WaveProfile

TWO_PI = 2.0 * np.pi


class StabilityViolation(RuntimeError):
    """Spectrum found outside the diffusive stability region."""


class SimplicityViolation(RuntimeError):
    """A second eigenvalue of the co-periodic operator sits at the origin."""


class BranchTrackingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Bloch transform

@dataclass
class BlochField:
    """Per-sideband 1-periodic components of a multi-period grid field.

    values[a] holds samples of gcheck(xi_a, .) on the M-point period grid;
    xi_grid is in FFT order (0, dxi, ..., -dxi).
    """

    xi_grid: np.ndarray
    values: np.ndarray      # (N, n, M) complex
    n_periods: int

    @property
    def dxi(self):
        return TWO_PI / self.n_periods

    def norm_mixed(self, q, p):
        """|| ||f(xi,.)||_{Lp[0,1]} ||_{Lq(dxi)} used by the transform bound."""
        M = self.values.shape[-1]
        per_xi = np.array([sp.lp_norm(v, p, 1.0 / M) for v in self.values])
        if np.isinf(q):
            return float(per_xi.max())
        return float((np.sum(per_xi**q) * self.dxi) ** (1.0 / q))


def bloch_forward(g, n_periods):
    """Decompose samples over [0, N) into sideband components.

    n_periods must be a power of two and divide the sample count.
    """
    g = np.atleast_2d(np.asarray(g))
    N = n_periods
    if N & (N - 1):
        raise ValueError("n_periods must be a power of two")
    n, total = g.shape
    if total % N:
        raise ValueError("sample count does not divide into periods")
    M = total // N
    coeffs = np.fft.fft(g, axis=-1) / total
    # full-domain mode m = j*N + a  ->  sideband a, periodic harmonic j
    c = coeffs.reshape(n, M, N)
    dxi = TWO_PI / N
    values = np.fft.ifft(c, axis=1) * M / dxi          # (n, M, N)
    values = np.moveaxis(values, -1, 0)                # (N, n, M)
    xi_grid = TWO_PI * np.fft.fftfreq(N)
    return BlochField(xi_grid=xi_grid, values=values, n_periods=N)


def bloch_inverse(field: BlochField):
    """Exact inverse of bloch_forward; returns (n, N*M) complex samples."""
    N = field.n_periods
    values = np.moveaxis(field.values, 0, -1)          # (n, M, N)
    c = np.fft.fft(values, axis=1) / values.shape[1] * field.dxi
    n, M, _ = c.shape
    coeffs = c.reshape(n, M * N)
    return np.fft.ifft(coeffs, axis=-1) * (M * N)


def parseval_defect(g, field: BlochField):
    """|  ||g||^2 - 2 pi * quadrature of ||gcheck||^2  | on the grid."""
    g = np.atleast_2d(np.asarray(g))
    M = field.values.shape[-1]
    dx = 1.0 / M
    lhs = sp.l2_norm(g, dx) ** 2
    per_xi = np.array([sp.l2_norm(v, dx) ** 2 for v in field.values])
    rhs = TWO_PI * field.dxi * per_xi.sum()
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# Floquet operator assembly

def profile_fourier_tables(profile: WaveProfile, n_modes):
    """Grid Fourier coefficients of b = df(u_bar), resolved for all offsets
    |j - j'| <= 2*n_modes needed by the Galerkin convolution.

    The profile is refined by FFT interpolation and b re-evaluated pointwise,
    so polynomial reactions give alias-free coefficient tables.
    """
    M = profile.M
    target = 4 * n_modes + 2
    if target > M:
        factor = int(np.ceil(target / M))
        u_fine = sp.oversample(profile.values, factor)
        b = profile.system.df(u_fine)
    else:
        b = profile.b_coeff
    return np.fft.fft(b, axis=-1) / b.shape[-1]        # (n, n, Mf), FFT order


def assemble_bloch_matrix(profile: WaveProfile, xi, n_modes):
    """Dense Galerkin truncation of L_xi on harmonics |j| <= n_modes.

    Row/column index is component-major: (component i, harmonic j) maps to
    i*(2*n_modes+1) + (j + n_modes).  The multiplication by b(x) becomes a
    Toeplitz convolution with the grid Fourier coefficients of df(u_bar).
    """
    n, m = profile.n, n_modes
    nm = 2 * m + 1
    k, c = profile.k_star, profile.c
    b_hat = profile_fourier_tables(profile, n_modes)

    j = np.arange(-m, m + 1)
    mu = 1j * (TWO_PI * j + xi)
    diag_symbol = k**2 * mu**2 + k * c * mu

    out = np.zeros((n * nm, n * nm), dtype=complex)
    offs = (j[:, None] - j[None, :]) % b_hat.shape[-1]
    for i in range(n):
        for i2 in range(n):
            block = b_hat[i, i2, offs]
            if i == i2:
                block = block + np.diag(diag_symbol)
            out[i * nm:(i + 1) * nm, i2 * nm:(i2 + 1) * nm] = block
    return out


def coeff_vector(profile_values, n_modes):
    """Truncated Fourier coefficients of unit-period samples, component-major."""
    vals = np.atleast_2d(profile_values)
    coeffs = sp.to_coeffs(vals)
    m = n_modes
    idx = np.arange(-m, m + 1) % vals.shape[-1]
    return coeffs[:, idx].reshape(-1)


def coeff_to_samples(vec, n, M):
    """Inverse of coeff_vector onto an M-point grid."""
    nm = vec.size // n
    m = (nm - 1) // 2
    coeffs = np.zeros((n, M), dtype=complex)
    idx = np.arange(-m, m + 1) % M
    coeffs[:, idx] = vec.reshape(n, nm)
    return sp.from_coeffs(coeffs)


def coeff_inner(u, v):
    """L2[0,1] inner product of periodic functions via coefficient vectors."""
    return np.vdot(u, v)


# ---------------------------------------------------------------------------
# cutoff

def raised_cosine_cutoff(xi, xi0):
    """C^1 cutoff: 1 on |xi| <= xi0, 0 on |xi| >= 2 xi0, cos^2 blend between."""
    axi = np.abs(np.asarray(xi, dtype=float))
    out = np.zeros_like(axi)
    out[axi <= xi0] = 1.0
    mid = (axi > xi0) & (axi < 2 * xi0)
    out[mid] = np.cos(np.pi * (axi[mid] - xi0) / (2 * xi0)) ** 2
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# spectrum scan

@dataclass
class BlochBranch:
    """Critical eigentriple at one sideband frequency (coefficient vectors)."""

    xi: float
    lam: complex
    phi: np.ndarray
    phi_tilde: np.ndarray
    eigen_residual: float
    adjoint_residual: float
    overlap_with_prev: float


@dataclass
class SpectralSummary:
    theta: float
    simplicity_margin: float
    a: float
    d: float
    xi0: float
    spectral_gap: float
    xi_grid: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)    # (n_xi, dim) full spectra
    branch_lambda: np.ndarray = field(repr=False)  # tracked critical branch

    def to_dict(self):
        return {"theta": self.theta, "simplicity_margin": self.simplicity_margin,
                "a": self.a, "d": self.d, "xi0": self.xi0,
                "spectral_gap": self.spectral_gap}


def _normalize_pair(vr, vl, anchor=None, prev=None):
    """Gauge: fixed L2 norm and smooth phase for phi; <phi_tilde, phi> = 1."""
    phi = vr.copy()
    if anchor is not None:
        gamma = np.vdot(phi, anchor) / np.vdot(phi, phi)
        phi = phi * gamma
    else:
        phi = phi / np.linalg.norm(phi)
        if prev is not None:
            ip = np.vdot(prev, phi)
            if abs(ip) > 0:
                phi = phi * (ip.conjugate() / abs(ip))
            phi = phi * np.linalg.norm(prev)
    denom = np.vdot(vl, phi)
    if abs(denom) < 1e-14:
        raise BranchTrackingError("left/right eigenvector pairing degenerate")
    phi_tilde = vl / denom.conjugate()
    return phi, phi_tilde


def spectrum_scan(profile: WaveProfile, xi_count=64, n_modes=32,
                  overlap_min=0.9, zero_tol=1e-8, simplicity_tol=1e-6):
    """Full Floquet eigenscan over [-pi, pi) with critical-branch tracking.

    Returns (SpectralSummary, list of BlochBranch, per-xi matrices' spectra).
    Raises StabilityViolation / SimplicityViolation when the diffusive
    stability certificate fails.
    """
    if xi_count < 64:
        raise ValueError("xi_count must be at least 64")
    if xi_count % 2:
        raise ValueError("xi_count must be even so xi = 0 is a grid node")
    xi_grid = -np.pi + TWO_PI * np.arange(xi_count) / xi_count
    i0 = xi_count // 2  # xi = 0

    dim = profile.n * (2 * n_modes + 1)
    eigvals = np.empty((xi_count, dim), dtype=complex)
    right = np.empty((xi_count, dim, dim), dtype=complex)
    left = np.empty((xi_count, dim, dim), dtype=complex)
    mats = np.empty((xi_count, dim, dim), dtype=complex)
    for i, xi in enumerate(xi_grid):
        mats[i] = assemble_bloch_matrix(profile, xi, n_modes)
        w, vl, vr = sla.eig(mats[i], left=True, right=True)
        eigvals[i], right[i], left[i] = w, vr, vl

    # -- (D1): the co-periodic operator must have a simple eigenvalue at 0
    w0 = eigvals[i0]
    order = np.argsort(np.abs(w0))
    lam0 = w0[order[0]]
    if abs(lam0) > zero_tol * max(1.0, np.abs(mats[i0]).max()):
        raise SimplicityViolation(
            f"no eigenvalue at the origin for xi=0 (closest {lam0:.3e})")
    simplicity_margin = float(np.abs(w0[order[1]]))
    if simplicity_margin < simplicity_tol:
        raise SimplicityViolation(
            f"second co-periodic eigenvalue within {simplicity_margin:.3e} of 0")
    if np.any(np.delete(w0, order[0]).real >= 0):
        raise StabilityViolation("co-periodic spectrum in the right half plane")

    # -- (D2): all spectrum must satisfy Re lam <= -theta xi^2
    off_zero = np.abs(xi_grid) > 1e-12
    worst = eigvals[off_zero].real.max()
    if worst > zero_tol:
        i_bad, j_bad = np.unravel_index(
            np.argmax(eigvals[off_zero].real), eigvals[off_zero].shape)
        raise StabilityViolation(
            f"Re lam = {worst:.3e} > 0 at xi = {xi_grid[off_zero][i_bad]:.4f}")
    ratios = -eigvals[off_zero].real / (xi_grid[off_zero] ** 2)[:, None]
    theta = float(max(ratios.min(), 0.0))

    # -- critical branch tracked outward from xi = 0 by eigenvector overlap
    u_bar_d = coeff_vector(profile.deriv, n_modes)
    branches = [None] * xi_count
    idx0 = order[0]
    phi0, phi_t0 = _normalize_pair(right[i0][:, idx0], left[i0][:, idx0],
                                   anchor=u_bar_d)
    branches[i0] = _make_branch(mats[i0], xi_grid[i0], lam0, phi0, phi_t0, 1.0)

    for direction in (+1, -1):
        prev_phi = phi0
        i = i0
        while 0 <= i + direction < xi_count:
            i += direction
            w, vr, vl = eigvals[i], right[i], left[i]
            overlaps = np.abs(prev_phi.conj() @ vr) / (
                np.linalg.norm(prev_phi) * np.linalg.norm(vr, axis=0))
            pick = int(np.argmax(overlaps))
            if overlaps[pick] < overlap_min:
                raise BranchTrackingError(
                    f"branch overlap {overlaps[pick]:.3f} < {overlap_min} "
                    f"at xi = {xi_grid[i]:.4f}")
            phi, phi_t = _normalize_pair(vr[:, pick], vl[:, pick], prev=prev_phi)
            branches[i] = _make_branch(mats[i], xi_grid[i], w[pick], phi, phi_t,
                                       float(overlaps[pick]))
            prev_phi = phi

    branch_lambda = np.array([b.lam for b in branches])

    # -- expansion coefficients by 4th-order centered differences at xi = 0
    h = xi_grid[1] - xi_grid[0]
    lam_st = branch_lambda[i0 - 2:i0 + 3]
    d1 = (-lam_st[4] + 8 * lam_st[3] - 8 * lam_st[1] + lam_st[0]) / (12 * h)
    d2 = (-lam_st[4] + 16 * lam_st[3] - 30 * lam_st[2]
          + 16 * lam_st[1] - lam_st[0]) / (12 * h**2)
    a = float(d1.imag)
    d = float(-d2.real / 2.0)

    # -- isolation radius: largest xi with gap >= half the co-periodic gap,
    #    capped so the cutoff support 2*xi0 stays inside the zone
    gaps = np.empty(xi_count)
    for i in range(xi_count):
        others = np.abs(eigvals[i] - branch_lambda[i])
        others = others[others > 1e-12 * max(1.0, abs(branch_lambda[i]))]
        gaps[i] = others.min() if others.size else np.inf
    gap0 = gaps[i0]
    xi0_cap = np.pi / 2
    below = np.abs(xi_grid)[gaps < 0.5 * gap0]
    xi0 = float(min(below.min() if below.size else np.pi, xi0_cap))
    support = np.abs(xi_grid) <= 2 * xi0 + 1e-12
    spectral_gap = float(gaps[support].min())

    summary = SpectralSummary(theta=theta, simplicity_margin=simplicity_margin,
                              a=a, d=d, xi0=xi0, spectral_gap=spectral_gap,
                              xi_grid=xi_grid, eigenvalues=eigvals,
                              branch_lambda=branch_lambda)
    return summary, branches


def _make_branch(mat, xi, lam, phi, phi_tilde, overlap):
    res = np.linalg.norm(mat @ phi - lam * phi) / np.linalg.norm(phi)
    adj = np.linalg.norm(mat.conj().T @ phi_tilde - np.conj(lam) * phi_tilde)
    adj /= np.linalg.norm(phi_tilde)
    return BlochBranch(xi=float(xi), lam=complex(lam), phi=phi,
                       phi_tilde=phi_tilde, eigen_residual=float(res),
                       adjoint_residual=float(adj),
                       overlap_with_prev=float(overlap))


# ---------------------------------------------------------------------------
# rank-one spectral projections

@dataclass
class ModeProjectors:
    """Eigenprojection onto the critical mode and its complement."""

    phi: np.ndarray
    phi_tilde: np.ndarray

    def apply_p(self, g):
        return self.phi * coeff_inner(self.phi_tilde, g)

    def apply_complement(self, g):
        return g - self.apply_p(g)

    def idempotency_defect(self):
        g = self.apply_p(self.phi)
        return float(np.linalg.norm(self.apply_p(g) - g) / np.linalg.norm(self.phi))


def mode_projectors(branch: BlochBranch, xi0=None):
    if xi0 is not None and abs(branch.xi) > 2 * xi0 + 1e-12:
        raise ValueError("projection requested outside the isolation radius")
    return ModeProjectors(phi=branch.phi, phi_tilde=branch.phi_tilde)


# ---------------------------------------------------------------------------
# spectrum export

def spectrum_rows(summary: SpectralSummary):
    """Rows (xi, Re lam, Im lam) for every computed eigenvalue, CSV-ready."""
    rows = []
    for xi, lams in zip(summary.xi_grid, summary.eigenvalues):
        for lam in lams:
            rows.append((float(xi), float(lam.real), float(lam.imag)))
    return rows
