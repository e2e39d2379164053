import numpy as np
import pytest
import scipy.integrate
from hypothesis import given
from hypothesis import strategies as st

from fehmm.coefficients import LaminateModel, Sinusoid, TwoPhase
from fehmm.errors import ConfigError, DegenerateFitError
from fehmm.micro import assemble_micro_forms, build_space
from fehmm.oracles import (Laminate1DOracle, ManufacturedMaxwell, dense_mol_exponential, dense_sobolev_oracle,
                           fine_reference_correctors, fit_rate, laminate_effective, volterra_scalar_exact)


@pytest.mark.parametrize("values, expected", [((2, 4), (8 / 3, 3, 3)), ((1, 9), (1.8, 5, 5))])
def test_two_phase_effective_tensor(values, expected):
    np.testing.assert_allclose(laminate_effective(TwoPhase(values)), np.diag(expected), rtol=1e-14)


def test_effective_tensor_axis_and_guard():
    np.testing.assert_allclose(np.diag(laminate_effective(TwoPhase((2, 4)), axis=2)), [3, 3, 8 / 3])
    with pytest.raises(ConfigError):
        laminate_effective(3.0)


@pytest.mark.parametrize("profile", [TwoPhase((2, 4), 0.25), Sinusoid(3, 1.5, 0.1)])
def test_oracle_static_tensor_matches_closed_form(profile):
    oracle = Laminate1DOracle(LaminateModel(profile), samples=256)
    blocks = laminate_effective(profile)
    np.testing.assert_allclose(oracle.M0(), np.kron(np.eye(2), blocks), rtol=1e-12, atol=1e-13)


def test_oracle_generator_is_dissipative_and_cn_converges():
    oracle = Laminate1DOracle(LaminateModel(Sinusoid(3, 1.5, 0), Sinusoid(1, 0.8, 0.3)), samples=32)
    assert np.linalg.eigvals(oracle.generator).real.max() <= 1e-10
    v0 = oracle.initial_G(0)
    exact = oracle.evolve(v0, 1.0)
    e1 = np.abs(oracle.evolve(v0, 1.0, 0.1) - exact).max()
    e2 = np.abs(oracle.evolve(v0, 1.0, 0.05) - exact).max()
    assert 3.6 < e1 / e2 < 4.4
    with pytest.raises(ConfigError):
        oracle.propagator(1.0, 0.3)


def test_oracle_without_loss_has_no_memory():
    oracle = Laminate1DOracle(LaminateModel(TwoPhase((2, 4))), samples=16)
    assert np.all(oracle.kernel_values("G", [0.0, 0.5]) == 0.0)
    assert np.all(oracle.R0() == 0.0)


def test_oracle_rejects_non_layered_models():
    from fehmm.coefficients import SmoothPeriodicModel

    with pytest.raises(ConfigError):
        Laminate1DOracle(SmoothPeriodicModel())


# -- rate fits

def test_fit_rate_exact_powers():
    h = np.array([0.5, 0.25, 0.125, 0.0625])
    assert fit_rate(h, h ** 2).slope == pytest.approx(2.0, abs=1e-12)
    fit = fit_rate(h, 7 * h)
    assert fit.slope == pytest.approx(1.0, abs=1e-12)
    assert fit.intercept == pytest.approx(np.log(7))
    assert fit.residual < 1e-12
    assert fit.rows()[0] == (0.5, 3.5)


@given(st.lists(st.floats(-0.05, 0.05), min_size=4, max_size=4))
def test_fit_rate_tolerates_small_noise(noise):
    h = 2.0 ** -np.arange(1, 5)
    assert 1.85 <= fit_rate(h, h ** 2 * (1 + np.array(noise))).slope <= 2.15


def test_fit_rate_errors():
    h = [0.5, 0.25, 0.125]
    with pytest.raises(ConfigError):
        fit_rate(h[:2], [1, 2])
    with pytest.raises(ConfigError):
        fit_rate([0.5, 0.5, 0.25], [1, 2, 3])
    with pytest.raises(DegenerateFitError):
        fit_rate(h, [1e-3, 0.0, 1e-5])
    with pytest.raises(DegenerateFitError):
        fit_rate(h, [1e-3, np.nan, 1e-5])


# -- dense Sobolev propagator

def micro_forms(profile_r=Sinusoid(1, 0.5, 0.2), cells=3):
    model = LaminateModel(Sinusoid(3, 1, 0), profile_r)
    return assemble_micro_forms(build_space(cells, 1, model.n_components), model, np.zeros(3))


def test_dense_sobolev_identity_cases():
    f = micro_forms()
    w0 = f.space.remove_mean(np.random.default_rng(0).standard_normal(f.space.ndof))
    np.testing.assert_allclose(dense_sobolev_oracle(f, w0, 0.0), w0, atol=1e-12)
    lossless = micro_forms(profile_r=None)
    np.testing.assert_allclose(dense_sobolev_oracle(lossless, w0, 2.0), w0, atol=1e-12)


def test_dense_sobolev_semigroup():
    f = micro_forms()
    w0 = f.space.remove_mean(np.random.default_rng(1).standard_normal(f.space.ndof))
    two = dense_sobolev_oracle(f, dense_sobolev_oracle(f, w0, 0.3), 0.4)
    np.testing.assert_allclose(two, dense_sobolev_oracle(f, w0, 0.7), atol=1e-11)


def test_dense_oracle_size_guards():
    with pytest.raises(ConfigError):
        dense_sobolev_oracle(micro_forms(cells=7), np.zeros(2 * 7 ** 3), 1.0)
    model = LaminateModel(TwoPhase((2, 4)))
    with pytest.raises(ConfigError):
        fine_reference_correctors(model, 64, 2, 4, [0.0])
    with pytest.raises(ConfigError):
        fine_reference_correctors(model, 4, 1, 0, [0.0])


# -- manufactured solution

def test_manufactured_curls_by_finite_differences():
    p = np.random.default_rng(2).random((5, 3))
    eps = 1e-6

    def curl(fn):
        d = [(fn(p + eps * e) - fn(p - eps * e)) / (2 * eps) for e in np.eye(3)]
        return np.column_stack([d[1][:, 2] - d[2][:, 1], d[2][:, 0] - d[0][:, 2], d[0][:, 1] - d[1][:, 0]])

    np.testing.assert_allclose(ManufacturedMaxwell._curl_e(p), curl(ManufacturedMaxwell._e), atol=1e-7)
    np.testing.assert_allclose(ManufacturedMaxwell._curl_h(p), curl(ManufacturedMaxwell._h), atol=1e-7)


def test_manufactured_field_has_zero_tangential_trace():
    s = np.random.default_rng(3).random((10, 2))
    for axis in range(3):
        for side in (0.0, 1.0):
            p = np.insert(s, axis, side, axis=1)
            tangential = np.delete(ManufacturedMaxwell._e(p), axis, axis=1)
            assert np.abs(tangential).max() < 1e-15


def test_manufactured_forcing_satisfies_the_equation():
    mm = ManufacturedMaxwell()
    p = np.random.default_rng(4).random((4, 3))
    t, dt = 0.7, 1e-5
    u_dot = (mm.exact(t + dt, p) - mm.exact(t - dt, p)) / (2 * dt)
    u = mm.exact(t, p)
    conv = scipy.integrate.quad_vec(lambda s: mm.G(t - s) @ mm.exact(s, p).T, 0.0, t, epsabs=1e-13)[0].T
    curl = np.hstack([-mm._curl_h(p) * np.sin(t), mm._curl_e(p) * np.cos(t)])
    lhs = u_dot @ mm.M + u @ mm.R + conv + curl + mm.initial(p) @ mm.J(t).T
    np.testing.assert_allclose(lhs, mm.forcing(t, p), atol=1e-8)


# -- dense method of lines

def test_dense_mol_scalar_volterra():
    for t in (0.5, 1.0, 3.0):
        got = dense_mol_exponential([[1.0]], [[0.0]], [[1.0]], [[0.0]], np.array([1.0]), 1.0, t)
        assert got[0] == pytest.approx(volterra_scalar_exact(t), abs=1e-13)
    with pytest.raises(ConfigError):
        dense_mol_exponential([[1.0]], [[0.0]], [[1.0]], [[0.0]], np.array([1.0]), 1.0, 1.0, load=np.ones(1))


def test_dense_mol_source_term():
    # u' = -e^{-t} u0  =>  u = u0 e^{-t}
    got = dense_mol_exponential([[1.0]], [[0.0]], [[0.0]], [[1.0]], np.array([2.0]), 1.0, 1.5)
    assert got[0] == pytest.approx(2.0 * np.exp(-1.5), rel=1e-13)
