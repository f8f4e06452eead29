import numpy as np
import pytest

from wavetrainlab import model, profile, _spectral as sp


def exact_speed(q, beta=0.5):
    return beta * (1 - q**2) / q


def test_recovers_wave_train(lo_params, lo_profile):
    x = sp.grid(64)
    exact = model.wave_train(lo_params, x)
    assert np.abs(lo_profile.values - exact).max() <= 1e-10
    assert lo_profile.c == pytest.approx(exact_speed(0.2), abs=1e-10)
    assert lo_profile.residual_norm <= 1e-10


def test_exact_guess_converges_immediately(lo_params, lo_system):
    guess = model.wave_train(lo_params, sp.grid(64))
    prof = profile.solve_profile(lo_system, lo_params.k_star, guess)
    assert np.abs(prof.values - guess).max() <= 1e-12


def test_constant_guess_degenerates(lo_params, lo_system):
    with pytest.raises(profile.SingularJacobian):
        profile.solve_profile(lo_system, lo_params.k_star,
                              np.full((2, 64), 0.4))


def test_translation_gauge(lo_params, lo_system, lo_profile):
    guess = model.wave_train(lo_params, sp.grid(64))
    shifted = profile.solve_profile(lo_system, lo_params.k_star,
                                    sp.shift(guess, 0.31))
    assert np.abs(shifted.values - lo_profile.values).max() <= 1e-8
    phase = abs(np.sum(sp.derivative(lo_profile.reference, 1)
                       * lo_profile.values)) / lo_profile.M
    assert phase <= 1e-12


def test_perturbed_guess_same_gauge(lo_params, lo_system, lo_profile, rng):
    guess = model.wave_train(lo_params, sp.grid(64))
    noisy = guess + 0.03 * rng.standard_normal(guess.shape)
    prof = profile.solve_profile(lo_system, lo_params.k_star, noisy)
    assert np.abs(prof.values - lo_profile.values).max() <= 1e-9


def test_deriv_is_spectral(lo_profile):
    assert np.abs(lo_profile.deriv
                  - sp.derivative(lo_profile.values, 1)).max() <= 1e-10


def test_periodicity_via_interpolant(lo_profile):
    interp = lo_profile.interpolant()
    xs = np.linspace(0, 1, 7, endpoint=False)
    assert np.abs(interp(xs) - interp(xs + 1.0)).max() <= 1e-12


def test_spectral_convergence(lo_params, lo_system, lo_profile):
    guess = model.wave_train(lo_params, sp.grid(128))
    fine = profile.solve_profile(lo_system, lo_params.k_star, guess)
    assert np.abs(fine.values[:, ::2] - lo_profile.values).max() <= 1e-10


def test_family_matches_dispersion_oracle(lo_system, lo_profile):
    fam = profile.continue_family(lo_system, lo_profile, delta_k=0.002,
                                  n_steps=3)
    qs = 2 * np.pi * fam.k_grid
    assert np.abs(fam.c_of_k - exact_speed(qs)).max() <= 1e-8
    assert np.abs(fam.omega_of_k + fam.c_of_k * fam.k_grid).max() == 0.0
    assert fam.k_star_index == 3
    assert len(fam.profiles) == 7


def test_family_zero_steps(lo_system, lo_profile):
    fam = profile.continue_family(lo_system, lo_profile, delta_k=0.002,
                                  n_steps=0)
    assert len(fam.profiles) == 1
    assert fam.base is lo_profile


def test_continuation_failure_reports_last_good(lo_system, lo_profile):
    # stepping down to k = 0 collapses the boundary-value problem
    with pytest.raises(profile.NoConvergence) as err:
        profile.continue_family(lo_system, lo_profile,
                                delta_k=lo_profile.k_star,
                                n_steps=1, max_halvings=0)
    assert err.value.last_good_k == pytest.approx(lo_profile.k_star)


def test_serialization_roundtrip(tmp_path, lo_profile):
    csv_path = tmp_path / "p.csv"
    json_path = tmp_path / "p.json"
    profile.save_profile(lo_profile, csv_path, json_path)
    meta, values, deriv = profile.load_profile_arrays(csv_path, json_path)
    assert meta["k"] == lo_profile.k_star
    assert meta["M"] == 64
    assert np.array_equal(values, lo_profile.values)
    assert np.array_equal(deriv, lo_profile.deriv)
