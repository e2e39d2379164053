import csv
import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fehmm.coefficients import (ConstantModel, DebyeModel, LaminateModel, Sinusoid, SmoothPeriodicModel, TwoPhase,
                                isotropic_constant)
from fehmm.errors import ConfigError
from fehmm.oracles import Laminate1DOracle, laminate_effective
from fehmm.tensors import (TENSOR_CSV_COLUMNS, EffectiveTensorTable, TensorCache, build_tensor_table, export_csv,
                           micro_bounds, micro_checks, micro_tensors, read_table, stable_hash, table_bound_checks,
                           write_table)

TWO_PHASE = LaminateModel(TwoPhase((2.0, 4.0)), TwoPhase((0.5, 2.0)))
TIMES = 0.1 * np.arange(11)


@pytest.fixture(scope="module")
def debye_result():
    return micro_tensors(DebyeModel(), (0.0, 0.0, 0.0), 4, 1, TIMES)


def test_constant_model_is_reproduced(rng):
    a = rng.standard_normal((9, 9))
    M = a @ a.T + 9 * np.eye(9)
    R = np.diag(rng.random(9))
    r = micro_tensors(ConstantModel(M, R), (0, 0, 0), 3, 1, TIMES)
    np.testing.assert_allclose(r.M_H, M, atol=1e-12)
    np.testing.assert_allclose(r.R_H, R, atol=1e-12)
    assert np.abs(r.G_H).max() <= 1e-12 and np.abs(r.J_H).max() <= 1e-12


def test_two_phase_laminate_matches_analytic_tensor():
    r = micro_tensors(TWO_PHASE, (0, 0, 0), 4, 1, TIMES)
    eff = laminate_effective(TWO_PHASE.m_profile, axis=0)  # diag(8/3, 3, 3)
    np.testing.assert_allclose(eff, np.diag([8 / 3, 3, 3]))
    np.testing.assert_allclose(r.M_H[:3, :3], eff, atol=1e-10)
    np.testing.assert_allclose(r.M_H[3:, 3:], eff, atol=1e-10)


def test_two_phase_laminate_kernels_match_oracle():
    # aligned interfaces: the discrete correctors are exact, so only the shared CN step remains
    r = micro_tensors(TWO_PHASE, (0, 0, 0), 4, 1, TIMES)
    orc = Laminate1DOracle(TWO_PHASE, samples=64)
    np.testing.assert_allclose(r.R_H, orc.R0(), atol=1e-10)
    np.testing.assert_allclose(r.G_H, orc.kernel_values("G", TIMES, 0.1), atol=1e-9)
    np.testing.assert_allclose(r.J_H, orc.kernel_values("N", TIMES, 0.1), atol=1e-9)


def test_debye_invariants(debye_result):
    r = debye_result
    checks = micro_checks(r)
    assert all(ok for ok, _ in checks.values()), {k: d for k, (ok, d) in checks.items() if not ok}
    assert np.abs(r.G_H).max() > 1e-3  # memory is genuinely present
    np.testing.assert_allclose(r.M_H, r.M_H.T, atol=1e-14)


def test_j0_identity_and_n_gap(debye_result):
    assert debye_result.j0_gap <= 1e-10
    assert debye_result.n_minus_m_gap <= 1e-10


@given(st.floats(1.0, 4.0), st.floats(0.2, 0.9), st.floats(0.0, 0.9), st.floats(0.1, 3.0))
def test_bounds_hold_for_random_debye(eps, amp, sig, tau_d):
    m = DebyeModel(Sinusoid(eps, amp * eps), Sinusoid(1.0, 0.5), Sinusoid(sig + 0.05, sig * 0.5), tau_d=tau_d)
    r = micro_tensors(m, (0, 0, 0), 3, 1, 0.2 * np.arange(4))
    b = micro_bounds(r.alpha, r.C_M, r.C_R)
    assert np.abs(r.R_H).max() <= b["R_H"] + 1e-9
    assert np.abs(r.G_H).max() <= b["G_H"] + 1e-9
    assert np.abs(r.J_H).max() <= b["J_H"] + 1e-9
    assert np.linalg.eigvalsh(r.M_H).min() >= r.alpha - 1e-9


def test_micro_bounds_formulae():
    b = micro_bounds(2.0, 3.0, 4.0)
    assert b["w_M"] == pytest.approx(np.sqrt(3))
    assert b["w_G0"] == pytest.approx(2 * 2 * np.sqrt(3))
    assert b["R_H"] == pytest.approx(24.0)
    assert b["G_H"] == pytest.approx(4 * 4 * 3)
    assert b["J_H"] == pytest.approx(12.0)


def test_stable_hash_is_order_independent():
    assert stable_hash({"a": 1, "b": [1, 2]}) == stable_hash({"b": [1, 2], "a": 1})
    assert stable_hash({"a": 1}) != stable_hash({"a": 2})
    assert len(stable_hash({})) == 64


def _table(x_dependent=False, jobs=1):
    model = SmoothPeriodicModel(x_mod=0.4) if x_dependent else isotropic_constant(0, 2.0, 1.0, 0.5)
    pts = np.array([[0.25, 0.5, 0.5], [0.75, 0.5, 0.5]])
    return build_tensor_table(model, pts, (3, 3, 3), 1, 0.1 * np.arange(4), key="ab" * 32, jobs=jobs)


def test_table_x_independent_shares_one_tensor():
    t = _table()
    assert t.n_unique == 1 and list(t.index) == [0, 0]
    assert {"alpha", "C_M", "C_R"} <= t.meta.keys()


def test_table_parallel_equals_serial():
    a, b = _table(True, 1), _table(True, 2)
    assert a.n_unique == 2 and a.equals(b)
    assert not np.allclose(a.M[0], a.M[1])


def test_table_validation():
    with pytest.raises(ConfigError):
        EffectiveTensorTable(np.arange(3.0), np.zeros((1, 6, 6)), np.zeros((1, 6, 6)), np.zeros((1, 2, 6, 6)),
                             np.zeros((1, 3, 6, 6)), np.zeros(1, dtype=int), np.zeros((1, 3)))
    with pytest.raises(ConfigError, match="out of range"):
        EffectiveTensorTable(np.zeros(1), np.eye(6)[None], np.zeros((1, 6, 6)), np.zeros((1, 1, 6, 6)),
                             np.zeros((1, 1, 6, 6)), np.array([0, 3]), np.zeros((2, 3)))


def test_table_bound_checks_pass():
    assert all(v[0] for v in table_bound_checks(_table(True)).values())


def test_roundtrip_and_cache(tmp_path, caplog):
    t = _table(True)
    p = write_table(tmp_path / "t.fett", t)
    assert read_table(p).equals(t)
    cache = TensorCache(tmp_path / "cache")
    assert cache.get(t.key) is None
    built = []
    got, hit = cache.get_or_build(t.key, lambda: built.append(1) or t)
    assert not hit and built == [1]
    got, hit = cache.get_or_build(t.key, lambda: built.append(1) or t)
    assert hit and built == [1] and got.equals(t)
    assert got.meta["model"]["model"] == "smooth-periodic"
    # corrupt the entry: it is ignored with a warning and rebuilt
    path = cache.path(t.key)
    raw = bytearray(path.read_bytes())
    raw[100] ^= 0xFF
    path.write_bytes(bytes(raw))
    with caplog.at_level(logging.WARNING):
        assert cache.get(t.key) is None
    assert "corrupt" in caplog.text
    # stale entry: stored under a different key
    cache.put(t)
    path.rename(cache.path("cd" * 32))
    assert cache.get("cd" * 32) is None
    assert len(cache.entries()) == 1 and cache.clear() == 1 and cache.entries() == []


def test_export_csv(tmp_path):
    t = _table()
    p = export_csv(t, tmp_path / "t.csv")
    with open(p) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == TENSOR_CSV_COLUMNS
    assert len(rows) == 1 + t.n_unique * t.n_times * 36
    first = dict(zip(rows[0], rows[1]))
    assert float(first["M"]) == pytest.approx(2.0) and float(first["R"]) == pytest.approx(0.5)


def test_kernels_decay_for_spd_damping():
    from dataclasses import dataclass

    from fehmm.coefficients import CoefficientModel
    from fehmm.tensors import micro_checks

    @dataclass
    class Damped(CoefficientModel):
        n_e: int = 0
        name: str = "damped"

        def M(self, x, y):
            a = 3 + 1.5 * np.sin(2 * np.pi * y[:, 0]) + 0.5 * np.cos(2 * np.pi * y[:, 1])
            return a[:, None, None] * np.eye(6)[None]

        def R(self, x, y):
            b = 1 + 0.8 * np.sin(2 * np.pi * (y[:, 0] + 0.3)) * np.cos(2 * np.pi * y[:, 2])
            return b[:, None, None] * np.eye(6)[None]

    res = micro_tensors(Damped(), (0, 0, 0), 4, 1, 0.05 * np.arange(41))
    assert res.r_min_eig > 0
    checks = micro_checks(res)
    assert checks["G_H_monotone"][0] and checks["J_H_monotone"][0]
