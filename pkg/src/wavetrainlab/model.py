"""Reaction-diffusion systems u_t = u_xx + f(u) with identity diffusion.

Reactions are polynomial, specified as coefficient tables per component, so
Jacobians are exact (term-by-term differentiation).  The built-in lambda-omega
family

    u_t = u_xx + (1 - r^2) u - w(r) v,
    v_t = v_xx + w(r) u + (1 - r^2) v,      r^2 = u^2 + v^2,  w(r) = -beta r^2,

has closed-form wave trains

    (u, v) = r0 (cos th, sin th),  th = q x + Omega t,
    r0^2 = 1 - q^2,  Omega = -beta (1 - q^2),

which makes it the reference model: every numerical stage of the laboratory
can be checked against explicit formulas derived from it.  Note the convention
Omega := d th / dt; the frequency is negative for beta > 0.

The linearization about the wave train is constant-coefficient in co-rotating
polar coordinates, giving a closed-form 2x2 dispersion problem used as the
oracle for the Bloch computations.  Eigenvalues are reported per unit time of
the reaction-diffusion equation itself, in the frame co-moving with the wave,
at sideband (Bloch) frequency xi measured relative to the unit-period
normalization of the profile.
"""

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


class ModelError(ValueError):
    pass


class PolynomialReaction:
    """Vector polynomial map given by one coefficient table per component.

    Each table maps a tuple of exponents (one per component) to a real
    coefficient: ``{(3, 1): -2.0}`` in a 2-component system contributes
    ``-2 u^3 v`` to that component.
    """

    def __init__(self, tables):
        self.n = len(tables)
        self.tables = [dict(t) for t in tables]
        for t in self.tables:
            for expo in t:
                if len(expo) != self.n or any(e < 0 for e in expo):
                    raise ModelError(f"bad exponent tuple {expo}")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        for i, table in enumerate(self.tables):
            for expo, coeff in table.items():
                term = np.full(u.shape[1:], coeff) if u.ndim > 1 else coeff
                for comp, e in enumerate(expo):
                    if e:
                        term = term * u[comp] ** e
                out[i] += term
        return out

    def jacobian(self, u):
        """Exact Jacobian, shape (n, n) + u.shape[1:]."""
        u = np.asarray(u, dtype=float)
        out = np.zeros((self.n,) + u.shape)
        for i, table in enumerate(self.tables):
            for expo, coeff in table.items():
                for j, e in enumerate(expo):
                    if e == 0:
                        continue
                    term = np.full(u.shape[1:], coeff * e) if u.ndim > 1 else coeff * e
                    for comp, ec in enumerate(expo):
                        power = ec - 1 if comp == j else ec
                        if power:
                            term = term * u[comp] ** power
                    out[i, j] += term
        return out


@dataclass
class ReactionSystem:
    """Reaction part of u_t = u_xx + f(u)."""

    n: int
    f: PolynomialReaction
    df: object
    params: dict = field(default_factory=dict)
    smoothness_K: int = 7

    def __post_init__(self):
        if self.n < 1:
            raise ModelError("need at least one component")
        if self.smoothness_K < 3:
            raise ModelError("smoothness_K must be at least 3")

    def jacobian_defect(self, rng, trials=100, eps=1e-6):
        """Max directional-derivative residual over random states.

        Checks ||df(u) w - (f(u+eps w) - f(u))/eps|| for unit u, w; the result
        should be O(eps) for a correct Jacobian.
        """
        worst = 0.0
        for _ in range(trials):
            u = rng.standard_normal(self.n)
            w = rng.standard_normal(self.n)
            w /= np.linalg.norm(w)
            fd = (self.f(u + eps * w) - self.f(u)) / eps
            res = np.linalg.norm(self.df(u) @ w - fd)
            worst = max(worst, res)
        return worst


def make_polynomial_system(tables, params=None, smoothness_K=7):
    poly = PolynomialReaction(tables)
    return ReactionSystem(n=poly.n, f=poly, df=poly.jacobian,
                          params=dict(params or {}), smoothness_K=smoothness_K)


@dataclass(frozen=True)
class LambdaOmegaParams:
    """beta: nonlinear frequency coefficient; q: wave-train wavenumber, |q| < 1."""

    beta: float
    q: float

    def __post_init__(self):
        if not abs(self.q) < 1.0:
            raise ModelError(f"|q| must be < 1, got q={self.q}")

    @property
    def r0sq(self):
        return 1.0 - self.q**2

    @property
    def r0(self):
        return float(np.sqrt(self.r0sq))

    @property
    def omega(self):
        """Temporal frequency Omega of the wave train, th = q x + Omega t."""
        return -self.beta * self.r0sq

    @property
    def k_star(self):
        """Wavenumber in the unit-period normalization: the pattern period is 2*pi/q."""
        return self.q / TWO_PI

    @property
    def speed(self):
        """Propagation speed c with th = q (x - c t) * (-1)...: c = -Omega/q."""
        return -self.omega / self.q


def make_lambda_omega(params: LambdaOmegaParams) -> ReactionSystem:
    """Two-component lambda-omega system with w(r) = -beta r^2."""
    beta = params.beta
    # f1 = (1 - r^2) u + beta r^2 v ; f2 = -beta r^2 u + (1 - r^2) v
    f1 = {(1, 0): 1.0, (3, 0): -1.0, (1, 2): -1.0, (2, 1): beta, (0, 3): beta}
    f2 = {(0, 1): 1.0, (2, 1): -1.0, (0, 3): -1.0, (3, 0): -beta, (1, 2): -beta}
    return make_polynomial_system(
        [f1, f2],
        params={"family": "lambda_omega", "beta": beta, "q": params.q},
        smoothness_K=7,
    )


def wave_train(params: LambdaOmegaParams, x):
    """Exact unit-period profile samples r0 (cos 2*pi*x, sin 2*pi*x)."""
    x = np.asarray(x, dtype=float)
    return params.r0 * np.stack([np.cos(TWO_PI * x), np.sin(TWO_PI * x)])


def polar_symbol(params: LambdaOmegaParams, ell):
    """2x2 symbol of the linearization in co-rotating polar coordinates.

    Perturbations (dr, r0*dphi) ~ exp(i ell x + lam t) of the wave train obey
    d/dt (dr, dphi) = M(ell) (dr, dphi) with the matrix returned here (lab
    frame, reaction-equation time unit).
    """
    q, r0, beta = params.q, params.r0, params.beta
    r0sq = params.r0sq
    return np.array(
        [
            [-(ell**2) - 2.0 * r0sq, -2.0 * r0 * q * 1j * ell],
            [2.0 * q * 1j * ell / r0 - 2.0 * beta * r0, -(ell**2)],
        ]
    )


def exact_dispersion(params: LambdaOmegaParams, xi):
    """Closed-form pair of Bloch eigenvalues at sideband frequency xi.

    Returns (critical, other): eigenvalues of the polar symbol at lab
    wavenumber ell = k_star * xi, Doppler-shifted into the co-moving frame by
    +i*ell*c.  The critical branch is the one continuous through 0 at xi = 0;
    for stable parameters it is the branch of larger real part throughout the
    sideband zone, which is how it is selected here.
    """
    ell = params.k_star * np.asarray(xi, dtype=float)
    doppler = 1j * ell * params.speed
    scalar = ell.ndim == 0
    ells = np.atleast_1d(ell)
    crit = np.empty(ells.shape, dtype=complex)
    other = np.empty(ells.shape, dtype=complex)
    for idx, l in np.ndenumerate(ells):
        lam = np.linalg.eigvals(polar_symbol(params, l))
        order = np.argsort(lam.real)[::-1]
        crit[idx], other[idx] = lam[order[0]], lam[order[1]]
    crit = crit + doppler
    other = other + doppler
    if scalar:
        return complex(crit.item()), complex(other.item())
    return crit, other


def phase_expansion_coefficients(params: LambdaOmegaParams):
    """Small-xi expansion lam(xi) = i a xi - d xi^2 + O(xi^3) of the critical branch.

    Derived from the polar symbol by perturbation in ell = k_star*xi plus the
    Doppler shift; validated against finite differences of exact_dispersion in
    the test suite.
    """
    beta, q, k = params.beta, params.q, params.k_star
    a = k * beta * (1.0 + q**2) / q
    d = k**2 * (1.0 - (3.0 + 2.0 * beta**2) * q**2) / (1.0 - q**2)
    return a, d


def eckhaus_wavenumber(beta):
    """Sideband stability boundary: d > 0 iff |q| < 1/sqrt(3 + 2 beta^2)."""
    return 1.0 / np.sqrt(3.0 + 2.0 * beta**2)


def max_growth_rate(params: LambdaOmegaParams, xi_samples=None):
    """Largest Re lam over the sideband zone, excluding the neutral xi = 0 mode.

    Samples the closed-form critical branch on a grid refined near xi = 0 so a
    narrow unstable band close to threshold is not missed.
    """
    if xi_samples is None:
        coarse = np.linspace(1e-4, np.pi, 257)
        fine = np.geomspace(1e-4, 0.5, 257)
        xi_samples = np.union1d(coarse, fine)
    crit, other = exact_dispersion(params, xi_samples)
    return float(max(crit.real.max(), other.real.max()))
