import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srmc.surrogate import (
    SurrogateConfigError,
    TiltedSurrogate,
    hvp_finite_difference,
    surrogate_score,
    tilted_log_density,
)
from srmc.targets import (
    GaussianSpec,
    TargetError,
    discrete_score,
    enumerate_states,
    two_mode_mixture_spec,
    gaussian_target,
    logistic_posterior_target,
    mixture_target,
    random_quadratic_target,
    synthetic_logistic_spec,
    table_target,
)


def std_normal(d=2):
    return gaussian_target(GaussianSpec(np.zeros(d), np.eye(d)))


def test_alpha_zero_is_base_log_density():
    t = mixture_target(two_mode_mixture_spec())
    sur = TiltedSurrogate(t, np.array([3.0, -1.0]), alpha=0.0)
    x = np.random.default_rng(0).normal(size=(30, 2))
    np.testing.assert_array_equal(tilted_log_density(sur, x), t.log_density(x))
    np.testing.assert_array_equal(surrogate_score(sur, x), t.score(x))


def test_zero_theta_is_base_score():
    t = mixture_target(two_mode_mixture_spec())
    sur = TiltedSurrogate(t, np.zeros(2), alpha=4.0)
    x = np.random.default_rng(1).normal(size=(10, 2))
    np.testing.assert_array_equal(surrogate_score(sur, x), t.score(x))
    assert sur.evaluate(x).grad_evals == 1


def test_tilted_standard_normal_is_shifted():
    sur = TiltedSurrogate(std_normal(), np.array([1.0, 0.0]), alpha=2.0)
    # N((2,0), I): log-density difference between (2,0) and (0,0) is +2.
    diff = tilted_log_density(sur, np.array([2.0, 0.0])) - tilted_log_density(sur, np.zeros(2))
    assert diff == pytest.approx(2.0, abs=1e-12)


def test_binary_two_state_tilt_by_enumeration():
    base = table_target(np.log([0.25, 0.75]), 1, 1)
    theta, alpha = np.array([0.4]), 1.5
    sur = TiltedSurrogate(base, theta, alpha=alpha)
    states = enumerate_states(1, 1)
    direct = np.log([0.25, 0.75]) - alpha * theta[0] * discrete_score(base, states)[:, 0]
    got = tilted_log_density(sur, states)
    assert got[1] - got[0] == pytest.approx(direct[1] - direct[0], abs=1e-14)


def test_gaussian_surrogate_score_closed_form():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(3, 3))
    V = A @ A.T + np.eye(3)
    mu = rng.normal(size=3)
    theta, alpha = rng.normal(size=3), 1.7
    sur = TiltedSurrogate(gaussian_target(GaussianSpec(mu, V)), theta, alpha)
    x = rng.normal(size=3)
    expected = -np.linalg.solve(V, x - mu - alpha * theta)
    np.testing.assert_allclose(surrogate_score(sur, x), expected, atol=1e-12)


def test_forward_difference_exact_on_quadratic():
    rng = np.random.default_rng(3)
    V = np.array([[2.0, 0.3], [0.3, 0.5]])
    t = gaussian_target(GaussianSpec(np.zeros(2), V))
    theta = rng.normal(size=2)
    analytic = TiltedSurrogate(t, theta, 0.9, hvp_mode="analytic")
    forward = TiltedSurrogate(t, theta, 0.9, hvp_mode="forward", eps=0.37)
    x = rng.normal(size=2)
    np.testing.assert_allclose(surrogate_score(forward, x), surrogate_score(analytic, x), atol=1e-10)


def test_hvp_fd_zero_direction_and_quadratic():
    V = np.array([[1.0, 0.2], [0.2, 0.7]])
    t = gaussian_target(GaussianSpec(np.ones(2), V))
    x = np.array([0.3, 0.1])
    for scheme in ("forward", "central"):
        np.testing.assert_array_equal(hvp_finite_difference(t, x, np.zeros(2), 0.1, scheme), 0.0)
        v = np.array([1.0, -2.0])
        np.testing.assert_allclose(hvp_finite_difference(t, x, v, 0.5, scheme), np.linalg.solve(V, v), atol=1e-12)


def test_logistic_central_difference_vs_analytic():
    t = logistic_posterior_target(synthetic_logistic_spec(n_obs=50, dim=5))
    rng = np.random.default_rng(4)
    for _ in range(10):
        x, v = rng.normal(size=(2, 5))
        exact = t.hvp(x, v)
        approx = hvp_finite_difference(t, x, v, 1e-3, "central")
        assert np.linalg.norm(approx - exact) / np.linalg.norm(exact) < 1e-4


def _fd_slope(target, x, exact, scheme):
    eps = np.array([0.1, 0.05, 0.025, 0.0125])
    v = np.ones(1)
    errs = [abs(hvp_finite_difference(target, x, v, e, scheme)[0] - exact) for e in eps]
    return np.polyfit(np.log(eps), np.log(errs), 1)[0]


def test_finite_difference_orders():
    from srmc.targets import TargetModel

    x = np.array([0.4])
    # U = x^2/2 + x^3/6: forward differences are first order.
    cubic = TargetModel(dim=1, log_density=lambda x: -(0.5 * x[..., 0] ** 2 + x[..., 0] ** 3 / 6), score=lambda x: -(x + 0.5 * x**2))
    assert abs(_fd_slope(cubic, x, 1.0 + x[0], "forward") - 1) < 0.3
    # Central differences are exact on a quadratic gradient, so use U = x^4/12.
    quartic = TargetModel(dim=1, log_density=lambda x: -(x[..., 0] ** 4 / 12), score=lambda x: -(x**3) / 3)
    assert abs(_fd_slope(quartic, x, x[0] ** 2, "central") - 2) < 0.3


def test_surrogate_score_is_gradient_of_tilted_log_density():
    rng = np.random.default_rng(5)
    targets = [
        mixture_target(two_mode_mixture_spec()),
        logistic_posterior_target(synthetic_logistic_spec(n_obs=40, dim=3)),
        gaussian_target(GaussianSpec(np.zeros(2), [[1.0, 0.5], [0.5, 2.0]])),
    ]
    h = 1e-5
    for t in targets:
        for _ in range(10):
            sur = TiltedSurrogate(t, rng.normal(size=t.dim), alpha=float(rng.uniform(0.1, 2)))
            x = rng.normal(size=t.dim)
            fd = np.array(
                [(tilted_log_density(sur, x + h * e) - tilted_log_density(sur, x - h * e)) / (2 * h) for e in np.eye(t.dim)]
            )
            np.testing.assert_allclose(surrogate_score(sur, x), fd, atol=1e-4)


@settings(max_examples=50, deadline=None)
@given(
    st.floats(0.01, 10),
    st.floats(0.1, 10),
    st.lists(st.floats(-3, 3), min_size=2, max_size=2),
)
def test_tilt_depends_only_on_alpha_theta_product(alpha, c, theta):
    t = mixture_target(two_mode_mixture_spec())
    theta = np.array(theta)
    x = np.array([[0.3, -0.2], [-2.0, 0.5]])
    a = tilted_log_density(TiltedSurrogate(t, theta, alpha), x)
    b = tilted_log_density(TiltedSurrogate(t, theta / c, alpha * c), x)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-9)


def test_config_errors():
    t = std_normal()
    with pytest.raises(SurrogateConfigError):
        TiltedSurrogate(t, np.zeros(3), 1.0)
    with pytest.raises(SurrogateConfigError):
        TiltedSurrogate(t, np.zeros(2), -1.0)
    no_hvp = logistic_posterior_target(synthetic_logistic_spec(n_obs=5, dim=2))
    no_hvp = type(no_hvp)(dim=2, log_density=no_hvp.log_density, score=no_hvp.score)
    with pytest.raises(SurrogateConfigError):
        TiltedSurrogate(no_hvp, np.zeros(2), 1.0, hvp_mode="analytic")
    assert TiltedSurrogate(no_hvp, np.ones(2), 0.5).hvp_mode == "forward"
    assert TiltedSurrogate(no_hvp, np.ones(2), 0.5).eps == 0.5
    assert TiltedSurrogate(no_hvp, np.ones(2), 1e-5).eps == 1e-3


def test_gradient_cost_by_mode():
    t = std_normal()
    theta = np.ones(2)
    assert TiltedSurrogate(t, theta, 1.0).evaluate(np.zeros(2)).grad_evals == 2
    assert TiltedSurrogate(t, theta, 1.0, hvp_mode="forward").evaluate(np.zeros(2)).grad_evals == 2
    assert TiltedSurrogate(t, theta, 1.0, hvp_mode="central").evaluate(np.zeros(2)).grad_evals == 3


def test_discrete_tilt_modes():
    base = random_quadratic_target(4, np.random.default_rng(6))
    theta = np.array([0.3, -0.1, 0.2, 0.0])
    x = np.array([1, 0, 1, 1])
    exact = TiltedSurrogate(base, theta, 1.0, tilt_score="exact")
    proxy = TiltedSurrogate(base, theta, 1.0, tilt_score="proxy")
    assert tilted_log_density(exact, x) == pytest.approx(base.log_density(x) - discrete_score(base, x) @ theta)
    assert tilted_log_density(proxy, x) == pytest.approx(base.log_density(x) - base.score(x) @ theta)
    table = table_target(np.zeros(16), 4, 1)
    with pytest.raises(TargetError):
        TiltedSurrogate(table, theta, 1.0, hvp_mode="forward").evaluate(x)
