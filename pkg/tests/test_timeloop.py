import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fehmm.errors import ConfigError
from fehmm.macro import QuadratureRule, assemble_macro_forms, build_nedelec_space
from fehmm.mesh import build_macro_mesh
from fehmm.oracles import dense_mol_exponential, volterra_scalar_exact
from fehmm.tensors import EffectiveTensorTable
from fehmm.timeloop import DenseForms, Stepper, run, stability_bound, stability_bound_series


def macro_forms(cells=2, sigma=0.0, n_times=1, tau=0.01, kernel=0.0):
    mesh = build_macro_mesh(cells)
    space = build_nedelec_space(mesh, 0)
    rule = QuadratureRule(mesh)
    times = tau * np.arange(n_times)
    M = np.diag([2.0, 2, 2, 1, 1, 1])
    R = np.diag([sigma] * 3 + [0.0] * 3)
    G = kernel * np.exp(-times)[:, None, None] * np.diag([1.0] * 3 + [0.0] * 3)
    table = EffectiveTensorTable.uniform(M, R, times, rule.flat_points, G=G, J=0.5 * G)
    return assemble_macro_forms(space, rule, table)


def test_zero_data_stays_zero():
    f = macro_forms(n_times=11, kernel=1.0)
    traj = run(f, np.zeros(f.space.ndof), 0.01, 10)
    assert np.all(traj.u == 0.0)
    assert traj.report.ok and traj.report.complete


def test_lossless_energy_is_conserved():
    f = macro_forms()
    u0 = np.random.default_rng(0).standard_normal(f.space.ndof)
    traj = run(f, u0, 0.01, 200, store=False)
    assert np.abs(traj.energy_drift).max() <= 1e-12


def test_conductive_energy_decreases():
    f = macro_forms(sigma=1.0)
    u0 = np.random.default_rng(1).standard_normal(f.space.ndof)
    traj = run(f, u0, 0.01, 100, store=False)
    assert np.all(np.diff(traj.energy) <= 1e-14 * traj.energy[0])
    assert traj.energy[-1] < traj.energy[0]
    assert traj.report.ok


def test_direct_and_gmres_agree():
    f = macro_forms(sigma=0.5, n_times=21, kernel=0.7)
    u0 = np.random.default_rng(2).standard_normal(f.space.ndof)
    a = run(f, u0, 0.01, 20, solver="direct").final
    b = run(f, u0, 0.01, 20, solver="gmres").final
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-10 * np.abs(a).max())


def test_kernel_grid_must_cover_the_run():
    f = macro_forms(n_times=5, kernel=1.0)
    with pytest.raises(ConfigError):
        run(f, np.ones(f.space.ndof), 0.01, 10)


def test_nonpositive_step_rejected():
    with pytest.raises(ConfigError):
        Stepper(macro_forms(), 0.0)


def test_source_without_values_gives_incomplete_bound():
    f = macro_forms()
    load = np.ones(f.space.ndof)
    traj = run(f, np.zeros(f.space.ndof), 0.01, 5, source=lambda t: load)
    assert not traj.report.complete
    assert np.isnan(traj.report.bounds[1:]).all()


def volterra_forms(tau, n_steps):
    times = tau * np.arange(n_steps + 1)
    return DenseForms([[1.0]], [[0.0]], [[0.0]], np.exp(-times), np.zeros(len(times)), times)


def test_scalar_volterra_is_second_order():
    errs = []
    for tau in (0.1, 0.05, 0.025):
        n = int(round(2.0 / tau))
        traj = run(volterra_forms(tau, n), np.array([1.0]), tau, n)
        errs.append(abs(traj.final[0] - volterra_scalar_exact(2.0)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - 2.0) < 0.1)
    assert errs[-1] < 1e-4


def test_dense_system_matches_exponential_oracle():
    rng = np.random.default_rng(3)
    n = 4
    B = rng.standard_normal((n, n))
    M = B @ B.T + n * np.eye(n)
    S = rng.standard_normal((n, n))
    A = S - S.T
    R = 0.3 * np.eye(n)
    G0 = 0.4 * np.eye(n)
    J0 = 0.2 * np.eye(n)
    lam, T = 1.5, 1.0
    u0 = rng.standard_normal(n)
    ref = dense_mol_exponential(M, R + A, G0, J0, u0, lam, T)
    errs = []
    for tau in (0.02, 0.01):
        times = tau * np.arange(int(round(T / tau)) + 1)
        decay = np.exp(-lam * times)[:, None, None]
        f = DenseForms(M, R, A, decay * G0, decay * J0, times)
        errs.append(np.linalg.norm(run(f, u0, tau, len(times) - 1).final - ref))
    assert errs[1] < 1e-4
    assert 3.5 < errs[0] / errs[1] < 4.5


@given(st.floats(0.5, 5.0), st.floats(0.0, 2.0), st.floats(0.1, 3.0))
def test_bound_series_closed_form_without_kernel(alpha, g, u0):
    times = np.linspace(0.0, 2.0, 41)
    b = stability_bound_series(times, alpha, np.full(41, g), u0, np.zeros(41), np.zeros(41))
    np.testing.assert_allclose(b, times / alpha * g + u0, rtol=1e-14)


def test_bound_grows_with_the_kernel():
    times = np.linspace(0.0, 1.0, 11)
    b0 = stability_bound(1.0, 1.0, 0.0, 1.0, times, np.zeros(11), np.zeros(11))
    b1 = stability_bound(1.0, 1.0, 0.0, 1.0, times, np.ones(11), np.ones(11))
    assert b0 == pytest.approx(1.0)
    assert b1 == pytest.approx(np.exp(0.5) * 2.0, rel=1e-12)
    with pytest.raises(ConfigError):
        stability_bound(0.55, 1.0, 0.0, 1.0, times, np.zeros(11), np.zeros(11))


def test_trajectory_csv(tmp_path):
    f = macro_forms(sigma=0.2)
    traj = run(f, np.ones(f.space.ndof), 0.01, 3)
    path = traj.write_csv(tmp_path / "t.csv")
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "norm_m", "norm_l2", "bound", "energy_drift"]
    assert len(rows) == 5
    assert float(rows[-1][0]) == pytest.approx(0.03)


def test_discrete_energy_identity():
    # E^{m+1} - E^m = -tau r(u^{m+1/2}, u^{m+1/2}) with G = J = g = 0
    f = macro_forms(sigma=0.8)
    u0 = np.random.default_rng(7).standard_normal(f.space.ndof)
    tau = 0.02
    traj = run(f, u0, tau, 20)
    for m in range(20):
        mid = 0.5 * (traj.u[m] + traj.u[m + 1])
        de = traj.energy[m + 1] - traj.energy[m]
        assert de == pytest.approx(-tau * mid @ (f.R @ mid), rel=1e-11, abs=1e-11 * traj.energy[m])


def test_bound_without_initial_data_ignores_the_source_kernel():
    times = np.linspace(0.0, 1.0, 11)
    G = np.full(11, 0.5)
    b = stability_bound(1.0, 2.0, 3.0, 0.0, times, np.full(11, 7.0), G)
    c_g = 0.25 * 1.0 ** 2 / 2.0  # int_0^1 int_0^s 0.5 dr ds / alpha
    assert b == pytest.approx(np.exp(c_g) * 1.0 / 2.0 * 3.0, rel=1e-12)
