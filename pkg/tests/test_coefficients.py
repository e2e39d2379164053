import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fehmm.coefficients import (ConstantModel, DebyeModel, LaminateModel, Sinusoid, SmoothPeriodicModel, TwoPhase,
                                check_coefficients, coefficient_bounds, isotropic_constant, make_profile,
                                system_size)
from fehmm.errors import ConfigError, ScenarioError

Y = np.random.default_rng(3).random((200, 3))
X0 = np.zeros(3)


@pytest.mark.parametrize("n_e,n", [(0, 6), (1, 9), (3, 15)])
def test_system_size(n_e, n):
    assert system_size(n_e) == n


def test_two_phase_means():
    p = TwoPhase((2.0, 4.0), 0.5)
    assert p.mean == pytest.approx(3.0)
    assert p.harmonic_mean == pytest.approx(8.0 / 3.0)
    np.testing.assert_array_equal(p(np.array([0.1, 0.6, 1.1])), [2.0, 4.0, 2.0])


def test_sinusoid_harmonic_mean_closed_form():
    # 1 / mean(1 / (a + b sin)) = sqrt(a^2 - b^2)
    p = Sinusoid(3.0, 1.5, 0.2)
    assert p.harmonic_mean == pytest.approx(np.sqrt(9 - 2.25), rel=1e-10)
    assert p.bounds == (1.5, 4.5)


@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.05, 0.95))
def test_two_phase_harmonic_below_arithmetic(a, b, f):
    p = TwoPhase((a, b), f)
    assert p.harmonic_mean <= p.mean * (1 + 1e-12)
    assert min(a, b) - 1e-12 <= p.harmonic_mean


def test_make_profile_forms():
    assert make_profile({"kind": "two-phase", "values": [1, 9]}).harmonic_mean == pytest.approx(1.8)
    assert make_profile({"kind": "constant", "value": 2.5})(np.array([0.3]))[0] == 2.5
    with pytest.raises(ConfigError):
        make_profile({"kind": "spline"})
    with pytest.raises(ConfigError):
        TwoPhase((1.0, 2.0), 1.5)


def test_isotropic_constant_layout():
    m = isotropic_constant(1, eps=2.0, mu=3.0, sigma=0.5, m_p=7.0)
    np.testing.assert_array_equal(np.diag(m.M0), [2] * 3 + [7] * 3 + [3] * 3)
    np.testing.assert_array_equal(np.diag(m.R0), [0.5] * 3 + [0] * 6)
    assert m.n_e == 1 and m.n == 9 and m.n_components == 3 and m.x_independent


def test_constant_model_rejects_bad_shapes():
    with pytest.raises(ConfigError):
        ConstantModel(np.eye(5), np.zeros((5, 5)))


@pytest.mark.parametrize("model", [
    LaminateModel(TwoPhase((2.0, 4.0)), Sinusoid(1.0, 0.5)),
    LaminateModel(Sinusoid(3, 1.5), n_e=2, axis=2),
    SmoothPeriodicModel(),
    SmoothPeriodicModel(x_mod=0.3),
    DebyeModel(),
])
def test_models_are_admissible(model):
    Ms, Rs = model.M(X0, Y), model.R(X0, Y)
    assert Ms.shape == (len(Y), model.n, model.n)
    check_coefficients(Ms, Rs)
    alpha, c_m, c_r = coefficient_bounds(Ms, Rs)
    assert 0 < alpha <= c_m


@given(st.floats(0.5, 5), st.floats(0.1, 2.0), st.floats(0.0, 2.0), st.floats(0.1, 5.0))
def test_debye_damping_is_psd(eps_inf, d_eps, sigma, tau_d):
    m = DebyeModel(Sinusoid(eps_inf), Sinusoid(d_eps), Sinusoid(sigma), tau_d=tau_d)
    R = m.R(X0, Y[:3])[0]
    assert np.linalg.eigvalsh(R).min() >= -1e-10 * np.abs(R).max()
    # determinant of the (E, P) 2x2 block per direction is sigma / (tau_D d_eps)
    blk = R[np.ix_([0, 3], [0, 3])]
    assert np.linalg.det(blk) == pytest.approx(sigma / (tau_d * d_eps), rel=1e-9, abs=1e-12)


def test_smooth_periodic_x_dependence():
    m = SmoothPeriodicModel(x_mod=0.5)
    assert not m.x_independent
    assert not np.allclose(m.M(np.zeros(3), Y), m.M(np.ones(3), Y))
    with pytest.raises(ConfigError):
        SmoothPeriodicModel(amp=1.0)


def test_check_coefficients_rejects_indefinite_and_asymmetric():
    M = np.broadcast_to(np.eye(6), (4, 6, 6)).copy()
    R = np.zeros_like(M)
    M[2, 1, 1] = -1.0
    with pytest.raises(ScenarioError, match="positive definite"):
        check_coefficients(M, R)
    M[2, 1, 1] = 1.0
    M[0, 0, 1] = 0.3
    with pytest.raises(ScenarioError, match="symmetric"):
        check_coefficients(M, R)
    M[0, 0, 1] = 0.0
    R[1, 2, 2] = -0.5
    with pytest.raises(ScenarioError, match="semi-definite"):
        check_coefficients(M, R)


def test_coefficient_bounds_spectral_norm():
    M = np.broadcast_to(np.diag([1.0, 2, 3, 4, 5, 6]), (2, 6, 6))
    R = np.zeros((2, 6, 6))
    R[:, 0, 1] = 3.0
    alpha, c_m, c_r = coefficient_bounds(M, R)
    assert (alpha, c_m, c_r) == pytest.approx((1.0, 6.0, 3.0))


def test_describe_is_json_friendly():
    import json

    for m in (DebyeModel(), LaminateModel(TwoPhase((2.0, 4.0))), isotropic_constant(0)):
        json.dumps(m.describe())
