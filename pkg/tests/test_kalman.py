import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from switchband import kalman
from switchband.kalman import (
    FilterError,
    closed_form_P,
    covariance_path,
    filter_step,
    initial_state,
    make_state,
    riccati_step,
    run_filter,
    sigma_of_t,
)
from switchband.model import LinearGaussianModel, PiecewiseConstant, constant_signal


def integrate(model, t_end, dt):
    n = int(round(t_end / dt))
    return covariance_path(model, dt, n)[-1, 0, 0]


def test_constant_signal_p_at_1():
    assert abs(integrate(constant_signal(horizon=10), 1.0, 1e-3) - 0.5) < 1e-6


def test_constant_signal_p_at_9():
    p9 = integrate(constant_signal(horizon=10), 9.0, 1e-3)
    assert abs(p9 - closed_form_P(1.0, 9.0)) < 1e-6
    assert abs(p9 - 0.1) < 1e-6


def test_no_information_linear_growth():
    model = LinearGaussianModel(F=0.0, A=0.0, Q=0.3, R=1.0, x0_mean=0.0, p0=2.0, horizon=5.0)
    path = covariance_path(model, 0.01)
    t = np.arange(len(path)) * 0.01
    assert np.allclose(path[:, 0, 0], 2.0 + 0.3 * t, rtol=0, atol=1e-12)


@pytest.mark.parametrize("p0,t,expected", [(1, 0, 1.0), (1, 1, 0.5), (2, 3, 1 / 3.5)])
def test_closed_form(p0, t, expected):
    assert closed_form_P(p0, t) == pytest.approx(expected, abs=1e-12)


def test_closed_form_matches_integration_2_3():
    assert integrate(constant_signal(p0=2.0, horizon=3.0), 3.0, 1e-3) == pytest.approx(0.285714, abs=1e-6)


def test_closed_form_rejects_bad_input():
    with pytest.raises(ValueError):
        closed_form_P(0.0, 1.0)


def test_rk4_order():
    model = constant_signal(horizon=1.0)
    errs = [abs(integrate(model, 1.0, dt) - 0.5) for dt in (0.1, 0.05)]
    assert 12 < errs[0] / errs[1] < 20


def test_zero_innovation_keeps_mean():
    model = constant_signal(horizon=1.0)
    st1 = filter_step(model, initial_state(model), 0.0, 0.01)
    assert st1.x_hat[0] == 0.0
    assert st1.p[0, 0] == pytest.approx(1 / 1.01, abs=1e-9)


def test_one_step_mean_update():
    model = constant_signal(horizon=1.0)
    st1 = filter_step(model, initial_state(model), 0.1, 0.01)
    # K = P A / R = 1 at the start of the step
    assert st1.x_hat[0] == pytest.approx(0.1, abs=1e-15)
    assert st1.innovation[0] == pytest.approx(0.1)


def test_gain_zero_while_a_zero():
    a = PiecewiseConstant([0.0, 0.5], [0.0, 1.0])
    model = LinearGaussianModel(F=-0.5, A=a, Q=0.2, R=1.0, x0_mean=1.0, p0=1.0, horizon=1.0)
    dt = 0.01
    states = run_filter(model, np.full(50, 0.3), dt)
    for prev, cur in zip(states[:-1], states[1:]):
        assert cur.x_hat[0] == pytest.approx(prev.x_hat[0] * (1 - 0.5 * dt), abs=1e-15)
    # dP/dt = 2FP + Q, solved exactly; the final RK4 stage samples t = 0.5 where A switches on
    t = states[-2].t
    exact = 0.2 + (1.0 - 0.2) * np.exp(-t)
    assert states[-2].p[0, 0] == pytest.approx(exact, abs=1e-10)


def test_zero_observations_f_zero_mean_constant():
    model = LinearGaussianModel(F=np.zeros((2, 2)), A=np.eye(2), Q=0.1 * np.eye(2), R=np.eye(2), x0_mean=[0.0, 0.0],
                                p0=np.eye(2), horizon=1.0)
    states = run_filter(model, np.zeros((100, 2)), 0.01)
    assert all(np.array_equal(s.x_hat, [0.0, 0.0]) for s in states)


def test_sigma_scalar_example():
    model = LinearGaussianModel(F=0.0, A=2.0, Q=0.0, R=4.0, x0_mean=0.0, p0=0.5, horizon=1.0)
    via_gain, via_cov = sigma_of_t(model, initial_state(model))
    assert via_gain[0, 0] == pytest.approx(0.25, abs=1e-15)
    assert via_cov[0, 0] == pytest.approx(0.25, abs=1e-15)


def test_sigma_zero_when_a_zero():
    model = LinearGaussianModel(F=0.0, A=0.0, Q=0.0, R=1.0, x0_mean=0.0, p0=1.0, horizon=1.0)
    assert sigma_of_t(model, initial_state(model))[0][0, 0] == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_sigma_factorisations_agree(d, m, seed):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(d, d))
    c = rng.normal(size=(m, m))
    model = LinearGaussianModel(F=np.zeros((d, d)), A=rng.normal(size=(m, d)), Q=np.zeros((d, d)),
                                R=c @ c.T + np.eye(m), x0_mean=np.zeros(d), p0=b @ b.T + np.eye(d), horizon=1.0)
    state = initial_state(model)
    for _ in range(5):
        state = filter_step(model, state, rng.normal(size=m) * 0.1, 0.01)
        g, v = sigma_of_t(model, state)
        assert np.abs(g - v).max() < 1e-10 * max(1.0, np.abs(g).max())
        assert np.allclose(state.p, state.p.T, rtol=0, atol=0)


def test_psd_loss_raises():
    model = constant_signal(p0=1.0, horizon=1000.0)
    state = make_state(model, 0.0, [0.0], np.array([[1.0]]))
    with pytest.raises(FilterError):
        riccati_step(model, state, 10.0)


def test_increment_csv_round_trip(tmp_path):
    path = tmp_path / "obs.csv"
    path.write_text("# comment\nt,dy\n0.0,0.1\n0.01,-0.2\n")
    t, dy = kalman.read_increments_csv(path)
    assert t.tolist() == [0.0, 0.01] and dy[:, 0].tolist() == [0.1, -0.2]
    (tmp_path / "bad.csv").write_text("time,y\n0,1\n")
    with pytest.raises(ValueError, match="expected header"):
        kalman.read_increments_csv(tmp_path / "bad.csv")


def test_covariance_path_matches_stepwise_rk4():
    model = LinearGaussianModel(F=[[-0.2, 0.1], [0.0, -0.4]], A=lambda t: np.array([[1.0 + t, 0.5]]),
                                Q=np.diag([0.1, 0.3]), R=0.5, x0_mean=[0, 0], p0=np.eye(2), horizon=1.0)
    dt = 0.01
    fast = covariance_path(model, dt)
    state = initial_state(model)
    for i in range(100):
        p = riccati_step(model, state, dt)
        assert np.allclose(fast[i + 1], p, rtol=1e-12, atol=1e-14)
        state = make_state(model, (i + 1) * dt, state.x_hat, p)


def test_covariance_path_psd_loss_raises():
    with pytest.raises(FilterError):
        covariance_path(constant_signal(horizon=100.0), 10.0)


def test_innovations_mean_zero_monte_carlo():
    from switchband import harness

    model = LinearGaussianModel(F=-0.5, A=1.0, Q=0.4, R=0.25, x0_mean=0.3, p0=1.0, horizon=2.0)
    dt = 1e-2
    paths = harness.simulate_paths(model, dt, 400, seed=21)
    sched = harness.filter_schedule(model, dt)
    xhat = harness.kernels.filter_mean(np.broadcast_to(model.x0_mean, (400, 1)), sched.F, sched.A, sched.k[:-1],
                                       paths.dy, dt)
    innov = (paths.dy[:, :, 0] - xhat[:, :-1, 0] * dt) / np.sqrt(dt)
    n = innov.size
    # innovation increments have variance R dt (plus O(dt) Euler error)
    assert abs(innov.mean()) < 4 * np.sqrt(0.25 / n)
    assert innov.var() == pytest.approx(0.25, rel=0.05)
