import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fehmm.errors import ConfigError
from fehmm.macro import (QuadratureRule, assemble_macro_forms, build_nedelec_space, nedelec_interpolate,
                         nedelec_reference)
from fehmm.mesh import build_macro_mesh
from fehmm.quadrature import gauss_3d
from fehmm.tensors import EffectiveTensorTable


def in_space(p):
    """A field in the lowest-order Nedelec space of a brick (x-component in Q_{0,1,1}, etc.)."""
    x, y, z = p.T
    return np.column_stack([1 + y + y * z, 2 * x - z, 3 + x * y])


def in_space_curl(p):
    x, y, z = p.T
    return np.column_stack([x + 1, np.zeros_like(x), 1 - z])


def h_only(fn, n):
    def f(p):
        out = np.zeros((len(p), n))
        out[:, -3:] = fn(p)
        return out

    return f


def forms_for(cells, M, R=None, n_e=0, times=(0.0,)):
    mesh = build_macro_mesh(cells)
    space = build_nedelec_space(mesh, n_e)
    rule = QuadratureRule(mesh)
    R = np.zeros_like(M) if R is None else R
    table = EffectiveTensorTable.uniform(M, R, np.asarray(times, float), rule.flat_points)
    return assemble_macro_forms(space, rule, table)


def test_reference_basis_tangential_moments():
    # the moment of basis i along edge j is delta_ij on the unit cube
    s, w = np.polynomial.legendre.leggauss(3)
    s = 0.5 * (s + 1)
    w = 0.5 * w
    starts = []
    for axis in range(3):
        others = [d for d in range(3) if d != axis]
        for a, b in ((0, 0), (1, 0), (0, 1), (1, 1)):
            p = np.zeros(3)
            p[others[0]], p[others[1]] = a, b
            starts.append((axis, p))
    moments = np.zeros((12, 12))
    for j, (axis, p0) in enumerate(starts):
        pts = p0[None] + s[:, None] * np.eye(3)[axis][None]
        vals, _ = nedelec_reference(pts)
        moments[:, j] = w @ vals[:, :, axis]
    np.testing.assert_allclose(moments, np.eye(12), atol=1e-14)


def test_reference_curl_matches_finite_difference():
    p = np.array([[0.3, 0.6, 0.2]])
    eps = 1e-6
    _, curl = nedelec_reference(p)
    def val(q):
        return nedelec_reference(q)[0][0]
    d = [(val(p + eps * e) - val(p - eps * e)) / (2 * eps) for e in np.eye(3)]  # d[k][i, c] = d_k phi_i,c
    fd = np.stack([d[1][:, 2] - d[2][:, 1], d[2][:, 0] - d[0][:, 2], d[0][:, 1] - d[1][:, 0]], axis=1)
    np.testing.assert_allclose(curl[0], fd, atol=1e-8)


def test_pec_dofs():
    mesh = build_macro_mesh(3)
    space = build_nedelec_space(mesh, 1)
    assert space.ndof == 3 * mesh.n_edges - int(mesh.boundary_edge_mask.sum())
    sl = space.block_slices()
    assert [len(b) for b in sl] == [mesh.n_edges - mesh.boundary_edge_mask.sum(), mesh.n_edges, mesh.n_edges]
    with pytest.raises(NotImplementedError):
        build_nedelec_space(mesh, 0, order=2)


@given(st.integers(1, 3), st.integers(0, 10_000))
def test_interpolation_is_exact_on_the_space(cells, seed):
    mesh = build_macro_mesh((cells, cells + 1, 2))
    space = build_nedelec_space(mesh, 0)
    u = nedelec_interpolate(space, h_only(in_space, 6))
    pts = np.random.default_rng(seed).random((20, 3))
    np.testing.assert_allclose(space.evaluate(u, pts)[:, 3:], in_space(pts), atol=1e-12)
    np.testing.assert_allclose(space.evaluate_curl(u, pts)[:, 3:], in_space_curl(pts), atol=1e-12)
    np.testing.assert_allclose(space.evaluate(u, pts)[:, :3], 0.0)


def test_interpolation_error_is_first_order():
    def smooth(p):
        return np.hstack([np.zeros((len(p), 3)), np.column_stack([np.sin(p[:, 1] * 2), np.cos(p[:, 2] + p[:, 0]),
                                                                  p[:, 0] ** 2 * p[:, 1]])])
    errs = []
    for n in (2, 4, 8):
        mesh = build_macro_mesh(n)
        space = build_nedelec_space(mesh, 0)
        rule = QuadratureRule(mesh, 3)
        d = space.evaluate(space.interpolate(smooth), rule.flat_points) - smooth(rule.flat_points)
        errs.append(np.sqrt(np.sum(rule.flat_weights * np.sum(d ** 2, axis=1))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 0.9)


def test_mass_matrix_integrates_space_fields_exactly():
    f = forms_for(2, np.diag([2.0, 2, 2, 1, 1, 1]))
    u = f.space.interpolate(h_only(in_space, 6))
    # independent reference: 5-point Gauss on the whole cube
    p, w = gauss_3d(5)
    exact = np.sum(w * np.sum(in_space(p) ** 2, axis=1))
    assert u @ (f.gram @ u) == pytest.approx(exact, rel=1e-13)
    assert f.m_norm(u) ** 2 == pytest.approx(exact, rel=1e-13)  # mu = 1 on H
    assert f.l2_norm(u) ** 2 == pytest.approx(exact, rel=1e-13)


def test_curl_pairing_is_skew_and_consistent():
    f = forms_for(3, np.eye(9), n_e=1)
    assert f.skew_defect() <= 1e-14
    rng = np.random.default_rng(4)
    u = rng.standard_normal(f.space.ndof)
    assert abs(u @ (f.A @ u)) <= 1e-12 * (u @ u)
    # H rows against an E field equal (curl E, Psi_H): test with E = 0, H arbitrary vs E arbitrary, H = 0
    sl = f.space.block_slices()
    assert f.A[sl[1]][:, sl[1]].nnz == 0  # P does not enter the curl pairing
    assert abs(f.A[sl[0]][:, sl[0]]).max() == 0 if f.A[sl[0]][:, sl[0]].nnz else True


def test_curl_pairing_against_integration_by_parts():
    # (curl Phi_E, Psi_H) for Phi_E with zero tangential trace equals (Phi_E, curl Psi_H)
    f = forms_for(2, np.eye(6))
    rng = np.random.default_rng(5)
    u = rng.standard_normal(f.space.ndof)
    sl = f.space.block_slices()
    uE = np.zeros_like(u)
    uE[sl[0]] = u[sl[0]]
    vH = np.zeros_like(u)
    vH[sl[1]] = rng.standard_normal(len(sl[1]))
    lhs = vH @ (f.A @ uE)
    rule = QuadratureRule(f.space.mesh, 3)
    pts, w = rule.flat_points, rule.flat_weights
    E = f.space.evaluate(uE, pts)[:, :3]
    curl_H = f.space.evaluate_curl(vH, pts)[:, 3:]
    assert lhs == pytest.approx(np.sum(w * np.sum(E * curl_H, axis=1)), rel=1e-12)


def test_test_against_is_adjoint_of_at_points():
    f = forms_for(2, np.eye(6))
    rng = np.random.default_rng(6)
    v = rng.standard_normal(f.space.ndof)
    vals = rng.standard_normal((f.rule.n_points, 6))
    assert v @ f.test_against(vals) == pytest.approx(np.sum(f.weights[:, None] * vals * f.at_points(v)), rel=1e-12)


def test_weighted_forms_follow_the_tensors():
    M = np.diag([2.0, 2, 2, 3, 3, 3])
    R = np.diag([0.5, 0.5, 0.5, 0, 0, 0])
    f = forms_for(2, M, R)
    sl = f.space.block_slices()
    gE = f.gram[sl[0]][:, sl[0]]
    np.testing.assert_allclose((f.M[sl[0]][:, sl[0]] - 2 * gE).toarray(), 0, atol=1e-14)
    np.testing.assert_allclose((f.R[sl[0]][:, sl[0]] - 0.5 * gE).toarray(), 0, atol=1e-14)
    assert f.R[sl[1]][:, sl[1]].nnz == 0 or abs(f.R[sl[1]][:, sl[1]]).max() == 0


def test_missing_tensor_is_named():
    mesh = build_macro_mesh(2)
    space = build_nedelec_space(mesh, 0)
    rule = QuadratureRule(mesh)
    pts = rule.flat_points.copy()
    pts[5] += 0.01
    table = EffectiveTensorTable.uniform(np.eye(6), np.zeros((6, 6)), [0.0], pts)
    with pytest.raises(ConfigError, match="index 5"):
        assemble_macro_forms(space, rule, table)
    with pytest.raises(ConfigError, match="covers"):
        assemble_macro_forms(space, rule, EffectiveTensorTable.uniform(np.eye(6), np.zeros((6, 6)), [0.0], pts[:3]))
    with pytest.raises(ConfigError, match="n = 9"):
        assemble_macro_forms(space, rule, EffectiveTensorTable.uniform(np.eye(9), np.zeros((9, 9)), [0.0], pts))


def test_matrix_market_export(tmp_path):
    f = forms_for(1, np.eye(6))
    files = f.export_matrix_market(tmp_path / "mm")
    assert sorted(p.name for p in files) == ["A.mtx", "G0.mtx", "M.mtx", "R.mtx"]
    import scipy.io

    np.testing.assert_allclose(scipy.io.mmread(str(tmp_path / "mm" / "M.mtx")).toarray(), f.M.toarray())
