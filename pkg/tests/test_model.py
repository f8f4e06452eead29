import numpy as np
import pytest

from wavetrainlab import model, _spectral as sp


def test_parameter_validation():
    with pytest.raises(model.ModelError):
        model.LambdaOmegaParams(beta=0.5, q=1.0)
    with pytest.raises(model.ModelError):
        model.LambdaOmegaParams(beta=0.5, q=-1.2)


def test_origin_is_equilibrium(lo_system):
    assert np.allclose(lo_system.f(np.zeros(2)), 0.0)


def test_jacobian_consistency(lo_system, rng):
    # directional-derivative residual stays O(eps) over random states
    defect = lo_system.jacobian_defect(rng, trials=100, eps=1e-6)
    assert defect <= 10 * 1e-6


def test_jacobian_of_random_polynomial(rng):
    tables = [{(2, 1): 0.7, (0, 3): -1.3, (1, 0): 0.2},
              {(3, 0): 0.5, (1, 1): -0.4, (0, 1): 1.0}]
    system = model.make_polynomial_system(tables)
    assert system.jacobian_defect(rng, trials=50) <= 1e-5


def test_wave_train_exactness():
    # the rotating-wave ansatz solves the co-moving profile equation exactly
    for beta, q in [(0.5, 0.2), (0.5, 0.0 + 1e-12), (0.0, 0.45), (1.2, 0.3)]:
        p = model.LambdaOmegaParams(beta=beta, q=max(q, 1e-8))
        sys = model.make_lambda_omega(p)
        x = sp.grid(64)
        u = model.wave_train(p, x)
        k = p.k_star
        res = (k**2 * sp.derivative(u, 2) + k * p.speed * sp.derivative(u, 1)
               + sys.f(u))
        assert np.abs(res).max() <= 1e-12


def test_frequency_and_amplitude_values():
    p0 = model.LambdaOmegaParams(beta=0.5, q=1e-12)
    assert p0.r0 == pytest.approx(1.0)
    assert p0.omega == pytest.approx(-0.5)
    p = model.LambdaOmegaParams(beta=0.5, q=0.2)
    assert p.r0sq == pytest.approx(0.96)
    assert p.omega == pytest.approx(-0.48)


def test_homogeneous_oscillation_is_exact_solution():
    # substitute (cos(Omega t), sin(Omega t)) into the reaction: residual 0
    p = model.LambdaOmegaParams(beta=0.5, q=1e-9)
    sys = model.make_lambda_omega(p)
    for t in (0.0, 0.3, 1.7):
        th = p.omega * t
        u = np.array([np.cos(th), np.sin(th)])
        dudt = p.omega * np.array([-np.sin(th), np.cos(th)])
        assert np.abs(sys.f(u) - dudt).max() <= 1e-9


def test_dispersion_at_zero(lo_params):
    crit, other = model.exact_dispersion(lo_params, 0.0)
    assert abs(crit) <= 1e-14
    assert other == pytest.approx(-2 * lo_params.r0sq)
    assert other == pytest.approx(-1.92)


def test_dispersion_conjugate_symmetry(lo_params):
    xi = np.linspace(-np.pi, np.pi, 41)
    cp, op = model.exact_dispersion(lo_params, xi)
    cm, om = model.exact_dispersion(lo_params, -xi)
    assert np.abs(cp - np.conj(cm)).max() <= 1e-12
    assert np.abs(op - np.conj(om)).max() <= 1e-12


def test_expansion_coefficients_match_finite_differences(lo_params):
    h = 1e-3
    vals = [model.exact_dispersion(lo_params, j * h)[0] for j in range(-2, 3)]
    d1 = (-vals[4] + 8 * vals[3] - 8 * vals[1] + vals[0]) / (12 * h)
    d2 = (-vals[4] + 16 * vals[3] - 30 * vals[2] + 16 * vals[1] - vals[0]) / (12 * h**2)
    a, d = model.phase_expansion_coefficients(lo_params)
    assert d1.imag == pytest.approx(a, abs=1e-10)
    assert -d2.real / 2 == pytest.approx(d, abs=1e-10)
    assert abs(d1.real) <= 1e-10
    assert abs(d2.imag) <= 1e-9


def test_stability_boundary_bisection():
    # bisection on the sign of the maximal growth rate recovers the
    # closed-form sideband stability boundary
    beta = 0.5
    lo_q, hi_q = 0.3, 0.9
    assert model.max_growth_rate(model.LambdaOmegaParams(beta, lo_q)) < 0
    assert model.max_growth_rate(model.LambdaOmegaParams(beta, hi_q)) > 0
    for _ in range(60):
        mid = 0.5 * (lo_q + hi_q)
        if model.max_growth_rate(model.LambdaOmegaParams(beta, mid)) > 0:
            hi_q = mid
        else:
            lo_q = mid
        if hi_q - lo_q < 1e-6:
            break
    q_c = model.eckhaus_wavenumber(beta)
    assert 0.5 * (lo_q + hi_q) == pytest.approx(q_c, abs=1e-3)


def test_smoothness_requirement():
    with pytest.raises(model.ModelError):
        model.ReactionSystem(n=1, f=None, df=None, smoothness_K=2)
