import math

import numpy as np
import pytest

from spintomo.estimator import (
    InvalidFrameError,
    SingularDenominatorError,
    SolverOptions,
    compute_K,
    compute_R,
    gradient_residual,
    grid_oracle,
    linear_inversion,
    log_likelihood,
    maxlik_fixed_point,
    overcompleteness_defect,
)
from spintomo.algebra import density_from_polarization
from spintomo.simulate import MeasurementRecord, MeasurementSetting, derive_rng, derive_seed, simulate_campaign

AXES = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


def axis_records(counts, n_particles=20):
    settings = [MeasurementSetting(direction=a, n_particles=n_particles) for a in AXES]
    return [MeasurementRecord.from_counts(s, c) for s, c in zip(settings, counts)]


def record_on(direction, n_plus, n_particles=20):
    setting = MeasurementSetting.from_vector(direction, n_particles)
    return MeasurementRecord.from_counts(setting, n_plus)


def random_instance(seed, n_settings=5, n_particles=20):
    """Random directions on the sphere, random interior truth, simulated counts."""
    rng = derive_rng(seed)
    directions = rng.normal(size=(n_settings, 3))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    v = rng.normal(size=3)
    r_true = v / np.linalg.norm(v) * rng.random() ** (1 / 3)
    settings = [MeasurementSetting.from_vector(d, n_particles) for d in directions]
    records = simulate_campaign(r_true, settings, derive_seed(seed, 1))
    return r_true, records


def random_interior_point(rng, radius=0.9):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v) * radius * rng.random() ** (1 / 3)


# ---------------------------------------------------------------- linear inversion

def test_linear_inversion_plain_counts():
    res = linear_inversion(axis_records([15, 15, 15]))
    np.testing.assert_allclose(res.r_raw, [0.5, 0.5, 0.5])
    assert not res.out_of_ball
    assert abs(np.linalg.norm(res.r_raw) - np.sqrt(0.75)) < 1e-12


def test_linear_inversion_out_of_ball():
    res = linear_inversion(axis_records([20, 20, 20]))
    np.testing.assert_allclose(res.r_raw, [1.0, 1.0, 1.0])
    assert res.out_of_ball
    assert np.linalg.norm(res.r_raw) == pytest.approx(np.sqrt(3.0))


def test_linear_inversion_exact_noiseless():
    # X_i = r . a_i realized exactly by counts (13, 8, 15) at N=20
    res = linear_inversion(axis_records([13, 8, 15]))
    assert res.r_raw == (0.3, -0.2, 0.5)


def test_linear_inversion_rejects_bad_frames():
    with pytest.raises(InvalidFrameError):
        linear_inversion(axis_records([15, 15, 15])[:2])
    skew = [record_on((1.0, 0.0, 0.0), 12), record_on((1.0, 1.0, 0.0), 12),
            record_on((0.0, 0.0, 1.0), 12)]
    with pytest.raises(InvalidFrameError):
        linear_inversion(skew)


# ---------------------------------------------------------------- log-likelihood

def test_log_likelihood_value_oracle():
    # direct evaluation of the product form: 1.4^14 * 0.6^6
    rec = record_on((0.0, 0.0, 1.0), 14)
    value = log_likelihood((0.0, 0.0, 0.4), [rec])
    assert value == pytest.approx(math.log(1.4**14 * 0.6**6), rel=1e-12)
    assert value == pytest.approx(20 * (0.7 * math.log(1.4) + 0.3 * math.log(0.6)), rel=1e-12)


def test_log_likelihood_zero_at_origin():
    # Unnormalized bases (1 +- u): exactly 0 at r = 0. The probability
    # convention differs by the constant -sum(N) ln 2.
    _, records = random_instance(17)
    assert log_likelihood((0.0, 0.0, 0.0), records) == 0.0


def test_log_likelihood_minus_inf_on_sphere_mismatch():
    rec = record_on((0.0, 0.0, 1.0), 14)
    assert log_likelihood((0.0, 0.0, -1.0), [rec]) == -np.inf
    # consistent record at the same pole stays finite: zero count on the
    # vanishing base contributes nothing
    aligned = record_on((0.0, 0.0, 1.0), 20)
    assert np.isfinite(log_likelihood((0.0, 0.0, 1.0), [aligned]))


def test_log_likelihood_maximal_at_matching_point():
    records = axis_records([13, 8, 15])
    best = log_likelihood((0.3, -0.2, 0.5), records)
    rng = np.random.default_rng(7)
    for _ in range(200):
        assert log_likelihood(random_interior_point(rng, radius=1.0), records) <= best


# ---------------------------------------------------------------- R and K

def test_r_and_k_at_origin():
    _, records = random_instance(23)
    assert compute_R((0.0, 0.0, 0.0), records) == pytest.approx(1.0, abs=1e-15)
    directions = np.array([rec.setting.direction for rec in records])
    x = np.array([rec.x for rec in records])
    expected = directions.T @ x / len(records)
    np.testing.assert_allclose(compute_K((0.0, 0.0, 0.0), records), expected, atol=1e-15)


def test_r_and_k_simplified_form_cross_check():
    # algebraic simplification: R = mean (1 - u X)/(1 - u^2), K = mean (X - u)/(1 - u^2) a
    rng = np.random.default_rng(31)
    _, records = random_instance(31)
    directions = np.array([rec.setting.direction for rec in records])
    x = np.array([rec.x for rec in records])
    for _ in range(50):
        r = random_interior_point(rng)
        u = directions @ r
        r_simple = np.mean((1.0 - u * x) / (1.0 - u * u))
        k_simple = directions.T @ ((x - u) / (1.0 - u * u)) / len(records)
        assert abs(compute_R(r, records) - r_simple) <= 1e-14
        np.testing.assert_allclose(compute_K(r, records), k_simple, atol=1e-14)


def test_r_equals_one_minus_r_dot_k():
    rng = np.random.default_rng(37)
    _, records = random_instance(37)
    for _ in range(100):
        r = random_interior_point(rng)
        assert abs(compute_R(r, records) - (1.0 - r @ compute_K(r, records))) <= 1e-13


def test_singular_denominator_raises():
    rec = record_on((0.0, 0.0, 1.0), 14)
    with pytest.raises(SingularDenominatorError):
        compute_K((0.0, 0.0, 1.0), [rec])
    with pytest.raises(SingularDenominatorError):
        compute_R((0.0, 0.0, 1.0), [rec])
    with pytest.raises(SingularDenominatorError):
        gradient_residual((0.0, 0.0, 1.0), [rec])


# ---------------------------------------------------------------- gradient

def test_gradient_equals_m_times_k():
    rng = np.random.default_rng(41)
    _, records = random_instance(41)
    m = len(records)
    for _ in range(100):
        r = random_interior_point(rng)
        np.testing.assert_allclose(gradient_residual(r, records),
                                   m * compute_K(r, records), atol=1e-13)


def test_gradient_matches_finite_differences():
    # central differences of the log-likelihood, step 1e-6, equal budgets
    rng = np.random.default_rng(43)
    _, records = random_instance(43)
    n_particles = records[0].setting.n_particles
    step = 1e-6
    for _ in range(10):
        r = random_interior_point(rng, radius=0.8)
        fd = np.zeros(3)
        for i in range(3):
            up = r.copy()
            up[i] += step
            down = r.copy()
            down[i] -= step
            fd[i] = (log_likelihood(up, records) - log_likelihood(down, records)) / (2 * step)
        analytic = n_particles * gradient_residual(r, records)
        assert np.linalg.norm(fd - analytic) <= 1e-5 * np.linalg.norm(analytic)


def test_gradient_zero_at_interior_optimum():
    records = axis_records([13, 8, 15])
    res = maxlik_fixed_point(records)
    assert res.converged and not res.boundary
    assert np.linalg.norm(gradient_residual(res.r_est, records)) <= len(records) * 1.1e-10


# ---------------------------------------------------------------- fixed-point solver

def test_maxlik_single_setting_one_step():
    res = maxlik_fixed_point([record_on((0.0, 0.0, 1.0), 14)])
    assert res.iterations == 1
    assert res.converged and not res.boundary
    np.testing.assert_allclose(res.r_est, [0.0, 0.0, 0.4], atol=1e-15)


def test_maxlik_noiseless_three_axes():
    records = axis_records([13, 8, 15])
    res = maxlik_fixed_point(records)
    lin = linear_inversion(records)
    assert res.converged and res.iterations <= 200
    assert np.linalg.norm(np.array(res.r_est) - [0.3, -0.2, 0.5]) <= 1e-8
    assert np.linalg.norm(np.array(res.r_est) - np.array(lin.r_raw)) <= 1e-8


def test_maxlik_boundary_diagonal():
    records = axis_records([20, 20, 20])
    res = maxlik_fixed_point(records)
    assert res.converged and res.boundary
    norm = np.linalg.norm(res.r_est)
    assert norm <= 1.0 + 1e-15
    direction = np.array(res.r_est) / norm
    np.testing.assert_allclose(direction, np.ones(3) / np.sqrt(3), atol=1e-6)


def test_maxlik_zero_frequencies_stay_at_origin():
    records = axis_records([10, 10, 10])
    res = maxlik_fixed_point(records)
    assert res.r_est == (0.0, 0.0, 0.0)
    assert res.iterations == 0
    assert res.converged and not res.boundary


def test_maxlik_monotone_trace_and_result_invariants():
    for seed in range(8):
        _, records = random_instance(seed)
        res = maxlik_fixed_point(records)
        trace = np.array(res.ll_trace)
        assert np.all(np.diff(trace) >= 0.0)
        assert np.linalg.norm(res.r_est) <= 1.0 + 1e-15
        if res.converged:
            assert res.k_residual <= SolverOptions().tol_k
            if not res.boundary:
                # interior fixed point: K = 0 hence R = 1
                assert abs(res.r_value - 1.0) <= 1e-9


def test_maxlik_span_confinement():
    # single setting: minimum-norm maximizer X a, iterates confined to the ray
    a = np.array([2.0, -1.0, 2.0]) / 3.0
    res = maxlik_fixed_point([record_on(a, 17, n_particles=20)])
    for point in res.r_trace:
        p = np.array(point)
        assert np.linalg.norm(p - (p @ a) * a) <= 1e-12
    np.testing.assert_allclose(res.r_est, 0.7 * a, atol=1e-10)

    # two settings: everything stays in their span
    b = np.array([0.0, 1.0, 0.0])
    records = [record_on(a, 17), record_on(b, 9)]
    res2 = maxlik_fixed_point(records)
    normal = np.cross(a, b)
    normal /= np.linalg.norm(normal)
    for point in res2.r_trace:
        assert abs(np.array(point) @ normal) <= 1e-12


def test_maxlik_interior_fixed_point_cross_product_vanishes():
    # the imaginary part K x r of the extremal equation dies at fixed points
    _, records = random_instance(53)
    res = maxlik_fixed_point(records)
    if res.converged:
        k = compute_K(res.r_est, records)
        assert np.linalg.norm(np.cross(k, res.r_est)) <= 1e-9


def test_maxlik_boundary_cross_product_vanishes():
    records = axis_records([20, 20, 20])
    res = maxlik_fixed_point(records)
    assert res.converged and res.boundary
    k = compute_K(np.array(res.r_est) * (1 - 1e-9), records)
    r_hat = np.array(res.r_est) / np.linalg.norm(res.r_est)
    assert np.linalg.norm(np.cross(k, r_hat)) <= 1e-9


def test_maxlik_respects_max_iterations():
    _, records = random_instance(3)
    res = maxlik_fixed_point(records, SolverOptions(max_iterations=2))
    assert res.iterations <= 2
    assert not res.converged


def test_maxlik_rejects_empty_records():
    with pytest.raises(ValueError):
        maxlik_fixed_point([])


def test_solver_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(tol_k=0.0)
    with pytest.raises(ValueError):
        SolverOptions(damping_min=2.0)
    with pytest.raises(ValueError):
        SolverOptions(max_iterations=0)
    with pytest.raises(ValueError):
        SolverOptions(ball_margin=0.7)


# ---------------------------------------------------------------- grid oracle

def test_grid_oracle_flat_plane_tie_break():
    res = grid_oracle([record_on((0.0, 0.0, 1.0), 10)], 0.1)
    np.testing.assert_array_equal(res, [0.0, 0.0, 0.0])


def test_grid_oracle_noiseless_lattice_point():
    best = grid_oracle(axis_records([13, 8, 15]), 0.1)
    np.testing.assert_allclose(best, [0.3, -0.2, 0.5], atol=1e-12)


def test_grid_oracle_matches_solver_on_random_instances():
    for seed in range(5):
        _, records = random_instance(seed + 100)
        res = maxlik_fixed_point(records)
        best = grid_oracle(records, 0.05)
        assert np.linalg.norm(np.array(res.r_est) - best) <= 0.05 * np.sqrt(3)
        assert res.log_likelihood >= log_likelihood(best, records) - 1e-9


def test_grid_oracle_validates_resolution():
    records = axis_records([13, 8, 15])
    with pytest.raises(ValueError):
        grid_oracle(records, 0.0)
    with pytest.raises(ValueError):
        grid_oracle(records, 0.6)


def test_grid_oracle_deterministic():
    _, records = random_instance(11)
    np.testing.assert_array_equal(grid_oracle(records, 0.1), grid_oracle(records, 0.1))


# ---------------------------------------------------------------- overcompleteness

def test_overcompleteness_zero_for_consistent_data():
    records = axis_records([13, 8, 15])
    rho = density_from_polarization((0.3, -0.2, 0.5))
    assert overcompleteness_defect(records, rho) <= 1e-12


def test_overcompleteness_zero_single_setting():
    rec = record_on((0.0, 0.0, 1.0), 14)
    rho = density_from_polarization((0.0, 0.0, 0.4))
    assert overcompleteness_defect([rec], rho) <= 1e-12


def test_overcompleteness_positive_for_noisy_data():
    _, records = random_instance(71)
    res = maxlik_fixed_point(records)
    rho = density_from_polarization(res.r_est)
    assert overcompleteness_defect(records, rho) > 0.0
