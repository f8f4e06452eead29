"""Unit-period standing-wave profiles and the nearby wavenumber family.

A profile is a 1-periodic solution of

    k^2 u_xx + k c u_x + f(u) = 0

with the speed c as an additional unknown.  The solver is Newton iteration on
Fourier collocation, closed by a translation gauge: solutions are required to
be L2-orthogonal to the derivative of a canonical reference template.  The
template is the initial guess translated so that the first Fourier harmonic of
its leading nonzero component is cosine-aligned, which makes the gauge (and
hence the returned profile) independent of how the guess was translated.

Nearby wavenumbers are reached by parameter continuation; tabulating the speed
c(k) along the family gives the nonlinear dispersion relation omega(k) = -c(k) k.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import _spectral as sp
from .model import ReactionSystem

RESIDUAL_TOL = 1e-12
MAX_ITER = 50


class NoConvergence(RuntimeError):
    def __init__(self, message, last_good_k=None):
        super().__init__(message)
        self.last_good_k = last_good_k


class SingularJacobian(RuntimeError):
    pass


@dataclass
class WaveProfile:
    """Converged profile data on an M-point spectral grid over [0, 1)."""

    k_star: float
    c: float
    values: np.ndarray          # (n, M)
    deriv: np.ndarray           # (n, M), spectral derivative of values
    b_coeff: np.ndarray         # (n, n, M), df(u) on the grid
    residual_norm: float
    system: ReactionSystem = field(repr=False)
    reference: np.ndarray = None  # gauge template; <reference', values> = 0

    @property
    def M(self):
        return self.values.shape[-1]

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def x(self):
        return sp.grid(self.M)

    def interpolant(self):
        return sp.FourierInterpolant(self.values)

    def pde_residual(self):
        k = self.k_star
        return (k**2 * sp.derivative(self.values, 2)
                + k * self.c * sp.derivative(self.values, 1)
                + self.system.f(self.values))


@dataclass
class ProfileFamily:
    k_grid: np.ndarray
    profiles: list
    c_of_k: np.ndarray
    omega_of_k: np.ndarray      # omega(k) = -c(k) k
    dk_profile: np.ndarray      # (n, M) centered-difference d(profile)/dk at k_star
    k_star_index: int

    @property
    def base(self):
        return self.profiles[self.k_star_index]


def _canonical_shift(values):
    """Translation aligning the first harmonic of the leading component to cosine."""
    coeffs = sp.to_coeffs(values)
    for comp in range(values.shape[0]):
        c1 = coeffs[comp, 1]
        if abs(c1) > 1e-12 * np.abs(values[comp]).max():
            # values(x + s) has first harmonic c1 * exp(2 i pi s); zero its phase
            return -float(np.angle(c1)) / (2.0 * np.pi), comp
    raise SingularJacobian("guess has no resolvable fundamental harmonic")


def canonical_reference(guess):
    s, _ = _canonical_shift(guess)
    return sp.shift(guess, s)


def solve_profile(system, k, initial_guess, M=None, residual_tol=RESIDUAL_TOL,
                  max_iter=MAX_ITER, reference=None, c_guess=0.0):
    """Newton solve for (profile, speed) at wavenumber k from the given guess.

    The guess must not be spatially constant (the translation gauge degenerates).
    Raises NoConvergence or SingularJacobian.
    """
    guess = np.atleast_2d(np.asarray(initial_guess, dtype=float))
    n, Mg = guess.shape
    if M is not None and M != Mg:
        guess = _resample(guess, M)
    M = guess.shape[-1]
    if M < 32:
        raise ValueError("need at least 32 collocation points")

    align = reference is None
    if reference is None:
        reference = canonical_reference(guess)
    elif reference.shape[-1] != M:
        reference = _resample(reference, M)
    ref_d = sp.derivative(reference, 1)
    if np.abs(ref_d).max() < 1e-10:
        raise SingularJacobian("constant reference: translation gauge degenerate")

    # differentiation matrices acting on sample column vectors, same FFT
    # convention as sp.derivative
    D1 = sp.derivative(np.eye(M), 1).T
    D2 = sp.derivative(np.eye(M), 2).T

    u = guess.copy()
    c = float(c_guess)
    w_phase = ref_d.reshape(-1) / M  # rectangle-rule L2[0,1] pairing

    for _ in range(max_iter):
        res_pde = (k**2 * sp.derivative(u, 2) + k * c * sp.derivative(u, 1)
                   + system.f(u))
        res_phase = float(np.sum(ref_d * u)) / M
        res = np.concatenate([res_pde.reshape(-1), [res_phase]])
        if np.abs(res).max() <= residual_tol:
            break

        # Jacobian in block form: d(res)/du, d(res)/dc, phase row
        J = np.zeros((n * M + 1, n * M + 1))
        dfu = system.df(u)  # (n, n, M)
        for i in range(n):
            row = slice(i * M, (i + 1) * M)
            J[row, row] += k**2 * D2 + k * c * D1
            for j in range(n):
                col = slice(j * M, (j + 1) * M)
                J[row, col] += np.diag(dfu[i, j])
        J[: n * M, -1] = (k * sp.derivative(u, 1)).reshape(-1)
        J[-1, : n * M] = w_phase
        try:
            delta = np.linalg.solve(J, -res)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(str(exc)) from None
        if not np.all(np.isfinite(delta)):
            raise SingularJacobian("non-finite Newton step")
        u = u + delta[: n * M].reshape(n, M)
        c = c + delta[-1]
    else:
        raise NoConvergence(
            f"Newton stalled at k={k}: residual {np.abs(res).max():.3e}")

    if align:
        # translate the converged solution to the canonical gauge, so the
        # result is independent of how the guess was translated or perturbed
        s, _ = _canonical_shift(u)
        u = sp.shift(u, s)
        reference = u.copy()

    deriv = sp.derivative(u, 1)
    b = system.df(u)
    res_final = (k**2 * sp.derivative(u, 2) + k * c * sp.derivative(u, 1)
                 + system.f(u))
    return WaveProfile(k_star=k, c=c, values=u, deriv=deriv, b_coeff=b,
                       residual_norm=float(np.abs(res_final).max()), system=system,
                       reference=reference)


def _resample(values, M):
    coeffs = sp.to_coeffs(values)
    out = np.zeros(values.shape[:-1] + (M,), dtype=complex)
    half = min(values.shape[-1], M) // 2
    out[..., :half] = coeffs[..., :half]
    out[..., -half:] = coeffs[..., -half:]
    return sp.from_coeffs(out).real


def continue_family(system, base: WaveProfile, delta_k, n_steps,
                    max_halvings=5) -> ProfileFamily:
    """Continue the profile to k_star +/- j*delta_k, j = 1..n_steps.

    On Newton failure the step is halved (up to max_halvings); if the target
    spacing still cannot be reached the family aborts with the last good k.
    """
    reference = canonical_reference(base.values)

    def march(direction):
        out = []
        current = base
        for j in range(1, n_steps + 1):
            target = base.k_star + direction * j * delta_k
            prof, reached = _step_to(system, current, target, reference, max_halvings)
            if not reached:
                raise NoConvergence(
                    f"continuation stalled before k={target}",
                    last_good_k=current.k_star)
            current = prof
            out.append(prof)
        return out

    down = march(-1.0)
    up = march(+1.0)
    profiles = down[::-1] + [base] + up
    k_grid = np.array([p.k_star for p in profiles])
    c_of_k = np.array([p.c for p in profiles])
    omega_of_k = -c_of_k * k_grid

    if n_steps >= 1:
        i0 = n_steps
        dk_profile = (profiles[i0 + 1].values - profiles[i0 - 1].values) / (2 * delta_k)
    else:
        dk_profile = np.zeros_like(base.values)
    return ProfileFamily(k_grid=k_grid, profiles=profiles, c_of_k=c_of_k,
                         omega_of_k=omega_of_k, dk_profile=dk_profile,
                         k_star_index=n_steps)


def _step_to(system, current, target, reference, max_halvings):
    k_now = current.k_star
    guess = current.values
    c_now = current.c
    for _ in range(200):
        if k_now == target:
            return current, True
        step = target - k_now
        halvings = 0
        while True:
            try:
                prof = solve_profile(system, k_now + step, guess,
                                     reference=reference, c_guess=c_now)
                break
            except (NoConvergence, SingularJacobian):
                halvings += 1
                if halvings > max_halvings:
                    return current, False
                step *= 0.5
        current, k_now, guess, c_now = prof, prof.k_star, prof.values, prof.c
    return current, False


# ---------------------------------------------------------------------------
# serialization: CSV samples plus a JSON sidecar

def save_profile(profile: WaveProfile, csv_path, json_path):
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = (["x"] + [f"u{i}" for i in range(profile.n)]
                  + [f"du{i}" for i in range(profile.n)])
        writer.writerow(header)
        # 17 significant digits round-trip float64 exactly
        for m, xv in enumerate(profile.x):
            writer.writerow([f"{xv:.17e}"]
                            + [f"{profile.values[i, m]:.17e}" for i in range(profile.n)]
                            + [f"{profile.deriv[i, m]:.17e}" for i in range(profile.n)])
    with open(json_path, "w") as fh:
        json.dump({"k": profile.k_star, "c": profile.c,
                   "residual_norm": profile.residual_norm, "M": profile.M}, fh,
                  indent=2, sort_keys=True)


def load_profile_arrays(csv_path, json_path):
    with open(json_path) as fh:
        meta = json.load(fh)
    rows = []
    with open(csv_path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for row in reader:
            rows.append([float(v) for v in row])
    data = np.array(rows).T
    n = (len(header) - 1) // 2
    return meta, data[1:1 + n], data[1 + n:]
