import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srmc.analysis import (
    LyapunovError,
    MomentInputs,
    closed_form_blocks_independent,
    diagonal_closed_form,
    estimate_noise_covariance,
    gaussian_mean_covariance,
    jacobian_at_star,
    log_partition_quadrature,
    solve_lyapunov,
    solve_lyapunov_matrix,
    stein_check,
)
from srmc.driver import independent_surrogate_replicas
from srmc.surrogate import TiltedSurrogate
from srmc.targets import (
    GaussianSpec,
    two_mode_mixture_spec,
    gaussian_target,
    mixture_target,
    random_quadratic_target,
)


def random_psd(rng, n, floor=0.0):
    A = rng.normal(size=(n, n))
    return A @ A.T / n + floor * np.eye(n)


def random_inputs(rng, d, m, alpha, rho_indicator=0):
    # Joint PSD covariance of (s, f) so that the i.i.d. noise block is valid.
    J = random_psd(rng, d + m, floor=0.2)
    return MomentInputs(J[:d, :d], J[d:, :d], J[d:, d:], alpha, rho_indicator)


# ---------------------------------------------------------------------------
# Jacobian
# ---------------------------------------------------------------------------


def test_jacobian_alpha_zero_is_minus_identity():
    rng = np.random.default_rng(0)
    inp = random_inputs(rng, 3, 2, 0.0)
    np.testing.assert_array_equal(jacobian_at_star(inp), -np.eye(5))


def test_jacobian_standard_gaussian_identity_test_function():
    a = 1.5
    inp = MomentInputs(np.eye(2), -np.eye(2), np.eye(2), a)
    expected = np.block([[-(1 + a) * np.eye(2), np.zeros((2, 2))], [a * np.eye(2), -np.eye(2)]])
    np.testing.assert_array_equal(jacobian_at_star(inp), expected)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.floats(0, 50), st.integers(0, 2**31 - 1))
def test_jacobian_is_hurwitz(d, m, alpha, seed):
    inp = random_inputs(np.random.default_rng(seed), d, m, alpha)
    assert np.max(np.linalg.eigvals(jacobian_at_star(inp)).real) < 0


def test_moment_inputs_validation():
    with pytest.raises(ValueError):
        MomentInputs(-np.eye(2), np.zeros((1, 2)), np.eye(1), 1.0)
    with pytest.raises(ValueError):
        MomentInputs(np.eye(2), np.zeros((2, 2)), np.eye(1), 1.0)
    with pytest.raises(ValueError):
        MomentInputs(np.eye(2), np.zeros((1, 2)), np.eye(1), -1.0)
    with pytest.raises(ValueError):
        MomentInputs(np.eye(2), np.zeros((1, 2)), np.eye(1), 1.0, rho_indicator=2)


# ---------------------------------------------------------------------------
# Lyapunov solver
# ---------------------------------------------------------------------------


def test_scalar_lyapunov():
    X, res = solve_lyapunov_matrix([[-3.0]], [[1.2]])
    assert X[0, 0] == pytest.approx(1.2 / 6)
    assert res < 1e-14


def test_scalar_lyapunov_with_rho_one_shift():
    # B = -a + 1/2
    X, _ = solve_lyapunov_matrix([[-3.0]], [[1.2]], rho_indicator=1)
    assert X[0, 0] == pytest.approx(1.2 / 5)


def test_diagonal_case_matches_entrywise_formula():
    rng = np.random.default_rng(1)
    lam = np.array([0.5, 1.0, 2.5, 4.0])
    U = random_psd(rng, 4)
    for alpha, rho_ind in [(0.0, 0), (1.0, 0), (3.0, 1)]:
        beta = 1 - rho_ind / 2
        A = -np.diag(1 + alpha * lam)
        X, _ = solve_lyapunov_matrix(A, U, rho_ind)
        np.testing.assert_allclose(X, diagonal_closed_form(lam, U, alpha, beta), atol=1e-12)


def test_random_instances_plug_back():
    rng = np.random.default_rng(2)
    for _ in range(20):
        inp = random_inputs(rng, 3, 3, float(rng.uniform(0, 5)))
        X, res = solve_lyapunov_matrix(jacobian_at_star(inp), random_psd(rng, 6))
        assert res < 1e-10
        assert np.allclose(X, X.T)
        assert np.linalg.eigvalsh(X).min() > -1e-10


def test_non_hurwitz_rejected():
    with pytest.raises(LyapunovError):
        solve_lyapunov_matrix(np.diag([-1.0, 0.1]), np.eye(2))
    # rho=1 shift by +1/2 makes -0.4 unstable
    with pytest.raises(LyapunovError):
        solve_lyapunov_matrix(np.diag([-1.0, -0.4]), np.eye(2), rho_indicator=1)


# ---------------------------------------------------------------------------
# Closed form for independent surrogate sampling
# ---------------------------------------------------------------------------


def test_scalar_closed_form_example():
    inp = MomentInputs([[1.0]], [[1.0]], [[2.0]], 1.0)
    cf = closed_form_blocks_independent(inp)
    assert cf.theta_theta[0, 0] == pytest.approx(0.25)
    assert cf.theta_mu[0, 0] == pytest.approx(0.25)
    assert cf.mu_mu[0, 0] == pytest.approx(0.75)
    direct = solve_lyapunov(jacobian_at_star(inp), np.array([[1.0, 1.0], [1.0, 2.0]]), 0, 1)
    np.testing.assert_allclose(direct.full(), cf.full(), atol=1e-12)


@pytest.mark.parametrize("rho_indicator", [0, 1])
def test_closed_form_equals_solver(rho_indicator):
    rng = np.random.default_rng(3)
    for _ in range(50):
        d, m = rng.integers(1, 6, size=2)
        inp = random_inputs(rng, int(d), int(m), float(rng.uniform(0, 10)), rho_indicator)
        cf = closed_form_blocks_independent(inp)
        sol = solve_lyapunov(jacobian_at_star(inp), inp.iid_noise_covariance(), rho_indicator, inp.d)
        assert np.linalg.norm(cf.full() - sol.full()) < 1e-8


def test_alpha_zero_estimator_block():
    rng = np.random.default_rng(4)
    for rho_ind in (0, 1):
        inp = random_inputs(rng, 3, 2, 0.0, rho_ind)
        cf = closed_form_blocks_independent(inp)
        np.testing.assert_allclose(cf.mu_mu, inp.Vf / (2 * inp.beta), atol=1e-12)


def test_loewner_monotonicity_of_estimator_block():
    rng = np.random.default_rng(5)
    for _ in range(30):
        J = random_psd(rng, 5, floor=0.2)
        a1, a2 = sorted(rng.uniform(0, 10, size=2))
        b1 = closed_form_blocks_independent(MomentInputs(J[:3, :3], J[3:, :3], J[3:, 3:], a1)).mu_mu
        b2 = closed_form_blocks_independent(MomentInputs(J[:3, :3], J[3:, :3], J[3:, 3:], a2)).mu_mu
        assert np.linalg.eigvalsh(b2 - b1).max() <= 1e-12


def test_theta_block_frobenius_monotone_in_alpha():
    rng = np.random.default_rng(6)
    alphas = [0, 0.5, 1, 2, 5, 10]
    for _ in range(20):
        J = random_psd(rng, 6, floor=0.2)
        norms = [
            np.linalg.norm(closed_form_blocks_independent(MomentInputs(J[:3, :3], J[3:, :3], J[3:, 3:], a)).theta_theta)
            for a in alphas
        ]
        assert np.all(np.diff(norms) <= 1e-12)


def test_theta_block_inverse_alpha_scaling():
    rng = np.random.default_rng(7)
    for _ in range(10):
        J = random_psd(rng, 5, floor=0.3)

        def scaled(a):
            inp = MomentInputs(J[:3, :3], J[3:, :3], J[3:, 3:], a)
            return a * np.linalg.norm(closed_form_blocks_independent(inp).theta_theta)

        assert abs(scaled(1000) - scaled(100)) / scaled(1000) < 0.05


def test_block_scalings_large_alpha():
    rng = np.random.default_rng(8)
    J = random_psd(rng, 5, floor=0.3)
    blocks = {a: closed_form_blocks_independent(MomentInputs(J[:3, :3], J[3:, :3], J[3:, 3:], a)) for a in (100.0, 1000.0)}
    # cross block shrinks like 1/alpha; the estimator block settles at R
    ratio = np.linalg.norm(blocks[1000.0].theta_mu) / np.linalg.norm(blocks[100.0].theta_mu)
    assert ratio == pytest.approx(0.1, rel=0.05)
    mm100, mm1000 = (np.linalg.norm(blocks[a].mu_mu) for a in (100.0, 1000.0))
    assert abs(mm1000 - mm100) / mm1000 < 0.05


def test_singular_score_covariance_rejected():
    with pytest.raises(np.linalg.LinAlgError):
        closed_form_blocks_independent(MomentInputs(np.zeros((2, 2)), np.zeros((1, 2)), np.eye(1), 1.0))


# ---------------------------------------------------------------------------
# Gaussian mean covariance
# ---------------------------------------------------------------------------


def test_gaussian_mean_covariance_examples():
    T = np.array([[0.3, 0.1], [0.1, 0.2]])
    np.testing.assert_array_equal(gaussian_mean_covariance(np.eye(2), T), T)
    assert gaussian_mean_covariance([[2.0]], [[0.25]])[0, 0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        gaussian_mean_covariance(np.eye(3), T)


def test_gaussian_mean_covariance_agrees_with_estimator_block():
    # For f(x) = x on a Gaussian: S = V^-1, C = -I, Vf = V.
    rng = np.random.default_rng(9)
    V = random_psd(rng, 3, floor=0.5)
    for alpha in (0.0, 1.0, 4.0):
        cf = closed_form_blocks_independent(MomentInputs(np.linalg.inv(V), -np.eye(3), V, alpha))
        np.testing.assert_allclose(gaussian_mean_covariance(V, cf.theta_theta), cf.mu_mu, atol=1e-10)


@pytest.mark.parametrize("alpha", [0.0, 1.0])
def test_gaussian_mean_covariance_vs_replicas(alpha):
    rng = np.random.default_rng(10)
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    V = Q @ np.diag([0.6, 1.0, 1.4]) @ Q.T
    spec = GaussianSpec(np.zeros(3), V)
    n, R = 20_000, 200
    _, mu = independent_surrogate_replicas(spec, alpha, n, R, rng, rho=1.0)
    empirical = n * np.cov(mu.T)
    inp = MomentInputs(np.linalg.inv(V), -np.eye(3), V, alpha, rho_indicator=1)
    theory = gaussian_mean_covariance(V, closed_form_blocks_independent(inp).theta_theta)
    assert np.linalg.norm(empirical - theory) / np.linalg.norm(theory) < 0.2


# ---------------------------------------------------------------------------
# Batch means
# ---------------------------------------------------------------------------


def test_batch_means_iid():
    x = np.random.default_rng(11).standard_normal(100_000)
    assert estimate_noise_covariance(x)[0, 0] == pytest.approx(1.0, rel=0.1)


def test_batch_means_constant_series():
    np.testing.assert_array_equal(estimate_noise_covariance(np.full((1000, 2), 3.0)), 0.0)


def test_batch_means_ar1():
    rng = np.random.default_rng(12)
    n = 10**6
    eps = rng.standard_normal(n)
    from scipy.signal import lfilter

    x = lfilter([1.0], [1.0, -0.5], eps)
    assert estimate_noise_covariance(x)[0, 0] == pytest.approx(4.0, rel=0.15)


def test_batch_means_reports_clip_and_validates():
    est = estimate_noise_covariance(np.random.default_rng(13).normal(size=(3000, 2)), full_output=True)
    assert est.batch_size == 14
    assert est.clipped >= 0
    assert estimate_noise_covariance(np.zeros(3000), batch_size=100, full_output=True).batch_size == 100
    with pytest.raises(ValueError):
        estimate_noise_covariance(np.zeros(50), batch_size=10)
    with pytest.raises(ValueError):
        estimate_noise_covariance(np.zeros(1000), batch_size=0)


# ---------------------------------------------------------------------------
# Stein check and quadrature
# ---------------------------------------------------------------------------


def test_stein_gaussian_sampled():
    t = gaussian_target(GaussianSpec([1.0, -1.0], [[1.0, 0.5], [0.5, 2.0]]))
    res = stein_check(t, 10**6, np.random.default_rng(14))
    assert not res.exact
    assert np.all(np.abs(res.mean) < 4 * res.stderr)


def test_stein_mixture_sampled():
    res = stein_check(mixture_target(two_mode_mixture_spec()), 10**6, np.random.default_rng(15))
    assert np.all(np.abs(res.mean) < 4 * res.stderr)


def test_stein_enumerated_binary():
    res = stein_check(random_quadratic_target(8, np.random.default_rng(16)))
    assert res.exact
    assert res.sup_norm < 1e-10


def test_stein_needs_samples_or_enumeration():
    with pytest.raises(ValueError):
        stein_check(gaussian_target(GaussianSpec([0.0], [[1.0]])))


def test_log_partition_standard_normal():
    sur = TiltedSurrogate(gaussian_target(GaussianSpec([0.0], [[1.0]])), np.zeros(1), 0.0)
    assert log_partition_quadrature(sur) == pytest.approx(0.5 * np.log(2 * np.pi), abs=1e-6)


def test_log_partition_shifted_gaussian_identity():
    V = np.array([[1.0, 0.3], [0.3, 0.7]])
    t = gaussian_target(GaussianSpec([0.2, -0.1], V))
    theta, alpha = np.array([1.0, 1.0]), 1.0
    z0 = log_partition_quadrature(TiltedSurrogate(t, np.zeros(2), 0.0))
    zt = log_partition_quadrature(TiltedSurrogate(t, theta, alpha))
    assert zt - z0 == pytest.approx(0.5 * alpha**2 * theta @ np.linalg.solve(V, theta), abs=1e-6)


def test_log_partition_box_doubling_stable():
    sur = TiltedSurrogate(mixture_target(two_mode_mixture_spec()), np.array([0.2, 0.1]), 0.5)
    a = log_partition_quadrature(sur, n_points=1601, half_width=6.0)
    b = log_partition_quadrature(sur, n_points=3201, half_width=12.0)
    assert abs(a - b) < 1e-8
