"""Lowest-order Nedelec (first kind) edge elements on the macro brick mesh.

The unknown has 2 + N_E vector components [E, P_1..P_NE, H]; each lives in the edge
element space, the E component with PEC (its boundary edges are removed). All forms
are built from a sparse evaluation operator P that maps free coefficients to the
n-vector field at every macro quadrature point, so e.g. m^H = P^T diag(gamma_q M^H(x_q)) P.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import ConfigError
from .mesh import _LOCAL_PAIRS, BrickMesh
from .quadrature import gauss_1d, gauss_3d

log = logging.getLogger(__name__)


def nedelec_reference(pts):
    """Reference edge functions on [0,1]^3 in cell_edges order.

    Returns values (m, 12, 3) and curls (m, 12, 3) for unit edge lengths; physical
    fields follow by dividing value component a by h_a and curl component a by the
    product of the two other h.
    """
    pts = np.asarray(pts, dtype=float)
    m = len(pts)
    vals = np.zeros((m, 12, 3))
    curls = np.zeros((m, 12, 3))
    lin = [lambda t: 1.0 - t, lambda t: t]
    dlin = [-1.0, 1.0]
    for axis in range(3):
        p, q = [d for d in range(3) if d != axis]
        for loc, (a, b) in enumerate(_LOCAL_PAIRS):
            e = 4 * axis + loc
            fp, fq = lin[a](pts[:, p]), lin[b](pts[:, q])
            vals[:, e, axis] = fp * fq
            # curl of f(x_p, x_q) e_axis = d_q f e_p - d_p f e_q, with orientation (axis, p, q) cyclic
            sign = 1.0 if (p - axis) % 3 == 1 else -1.0
            curls[:, e, p] = sign * fp * dlin[b]
            curls[:, e, q] = -sign * dlin[a] * fq
    return vals, curls


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss rule on every cell: points (n_cells, n_q, 3), weights (n_cells, n_q)."""

    mesh: BrickMesh
    npts: int = 2

    @cached_property
    def ref(self):
        return gauss_3d(self.npts)

    @property
    def n_per_cell(self):
        return self.npts ** 3

    @cached_property
    def points(self):
        pts, _ = self.ref
        return self.mesh.cell_origins[:, None, :] + pts[None] * self.mesh.h

    @cached_property
    def weights(self):
        _, w = self.ref
        return np.broadcast_to(w * self.mesh.cell_volume, (self.mesh.n_cells, len(w))).copy()

    @property
    def flat_points(self):
        return self.points.reshape(-1, 3)

    @property
    def flat_weights(self):
        return self.weights.ravel()

    @property
    def n_points(self):
        return self.mesh.n_cells * self.n_per_cell

    def integrate_reference(self, f):
        """Reference-cell quadrature of f(points (m,3)) -> values (m,)."""
        pts, w = self.ref
        return float(np.dot(w, f(pts)))


class NedelecSpace:
    """Order-1 Nedelec space for n_components vector fields; component 0 carries PEC."""

    def __init__(self, mesh, n_components, order=1):
        if order != 1:
            raise NotImplementedError("only lowest-order Nedelec elements are implemented")
        if mesh.boundary_kind != "pec":
            raise ConfigError("NedelecSpace needs a macro mesh with PEC boundary")
        if n_components < 2:
            raise ConfigError("need at least the E and H components")
        self.mesh = mesh
        self.order = order
        self.n_components = int(n_components)
        self.n_edges = mesh.n_edges
        self.n_raw = self.n_components * self.n_edges
        free = np.ones(self.n_raw, dtype=bool)
        free[:self.n_edges] = ~mesh.boundary_edge_mask
        self.free_mask = free
        self.free_dofs = np.flatnonzero(free)
        self.ndof = int(free.sum())
        self.raw_to_free = np.full(self.n_raw, -1, dtype=np.int64)
        self.raw_to_free[self.free_dofs] = np.arange(self.ndof)

    @property
    def n(self):
        return 3 * self.n_components

    @property
    def n_e(self):
        return self.n_components - 2

    def block_slices(self):
        """Free-DOF index arrays per component."""
        comp = self.free_dofs // self.n_edges
        return [np.flatnonzero(comp == c) for c in range(self.n_components)]

    def expand(self, u):
        """Free coefficients -> raw (constrained entries zero)."""
        out = np.zeros(self.n_raw)
        out[self.free_dofs] = u
        return out

    def restrict(self, raw):
        return np.asarray(raw)[self.free_dofs]

    # -- evaluation ----------------------------------------------------------

    def _scalar_operators(self, cell, local):
        """Sparse value and curl operators (3m x n_edges) for one scalar vector field."""
        h = self.mesh.h
        vals, curls = nedelec_reference(local)
        vals = vals / h[None, None, :]
        curls = curls * (h[None, None, :] / np.prod(h))
        m = len(cell)
        edges = self.mesh.cell_edges[cell]  # (m, 12)
        rows = (3 * np.arange(m)[:, None, None] + np.arange(3)[None, None, :]).repeat(12, axis=1)
        cols = np.broadcast_to(edges[:, :, None], (m, 12, 3))
        shape = (3 * m, self.n_edges)
        B = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape)
        C = sp.csr_matrix((curls.ravel(), (rows.ravel(), cols.ravel())), shape=shape)
        B.eliminate_zeros()
        C.eliminate_zeros()
        return B, C

    def _lift(self, scalar_op, components=None):
        """Scalar (3m x n_edges) operator -> (m n x ndof) operator on the free DOFs."""
        comps = range(self.n_components) if components is None else components
        coo = scalar_op.tocoo()
        pt, d = coo.row // 3, coo.row % 3
        rows, cols, data = [], [], []
        for c in comps:
            rows.append(pt * self.n + 3 * c + d)
            cols.append(self.raw_to_free[c * self.n_edges + coo.col])
            data.append(coo.data)
        rows, cols, data = map(np.concatenate, (rows, cols, data))
        keep = cols >= 0
        m = scalar_op.shape[0] // 3
        return sp.csr_matrix((data[keep], (rows[keep], cols[keep])), shape=(m * self.n, self.ndof))

    def operators_at(self, points):
        """Value and curl operators (m n x ndof) at physical points."""
        cell, local = self.mesh.locate(points)
        B, C = self._scalar_operators(cell, local)
        return self._lift(B), self._lift(C)

    def operators_on_rule(self, rule):
        n_c, n_q = rule.points.shape[:2]
        cell = np.repeat(np.arange(n_c), n_q)
        local = np.tile(rule.ref[0], (n_c, 1))
        B, C = self._scalar_operators(cell, local)
        return B, C

    def evaluate(self, u, points):
        B, _ = self.operators_at(points)
        return (B @ u).reshape(len(points), self.n)

    def evaluate_curl(self, u, points):
        _, C = self.operators_at(points)
        return (C @ u).reshape(len(points), self.n)

    def interpolate(self, fn, raw=False):
        """Edge DOFs = tangential line integrals of fn (points (m,3) -> (m, n)), 3-point Gauss."""
        mesh = self.mesh
        s, w = gauss_1d(self.order + 2)
        tails = mesh.vertices[mesh.edges[:, 0]]
        axis = mesh.edge_axis
        length = mesh.h[axis]
        pts = tails[:, None, :] + s[None, :, None] * (length[:, None, None] * np.eye(3)[axis][:, None, :])
        vals = np.asarray(fn(pts.reshape(-1, 3)), dtype=float).reshape(self.n_edges, len(s), self.n)
        out = np.empty(self.n_raw)
        for c in range(self.n_components):
            tang = vals[np.arange(self.n_edges), :, 3 * c + axis]
            out[c * self.n_edges:(c + 1) * self.n_edges] = length * (tang @ w)
        return out if raw else self.restrict(out)


def build_nedelec_space(mesh, n_e=0, order=1):
    return NedelecSpace(mesh, 2 + int(n_e), order)


def nedelec_interpolate(space, fn):
    return space.interpolate(fn)


# -- forms --------------------------------------------------------------------

def _block_diag(blocks):
    """Sparse block diagonal from (Q, n, n)."""
    q, n, _ = blocks.shape
    return sp.bsr_matrix((blocks, np.arange(q), np.arange(q + 1)), shape=(q * n, q * n)).tocsr()


@dataclass
class MacroForms:
    """Assembled operators on the free DOFs plus what the time loop needs for kernel terms."""

    space: NedelecSpace
    rule: QuadratureRule
    table: object
    P: sp.csr_matrix = field(repr=False)
    M: sp.csr_matrix = field(repr=False)
    R: sp.csr_matrix = field(repr=False)
    A: sp.csr_matrix = field(repr=False)
    G0: sp.csr_matrix = field(repr=False)
    gram: sp.csr_matrix = field(repr=False)

    @property
    def weights(self):
        return self.rule.flat_weights

    def at_points(self, u):
        """Field values (Q, n) at the macro quadrature points."""
        return (self.P @ u).reshape(self.rule.n_points, self.space.n)

    def test_against(self, values):
        """Load vector Psi -> sum_q gamma_q values_q . Psi(x_q) for values (Q, n)."""
        return self.P.T @ (self.weights[:, None] * values).ravel()

    def weighted_mass(self, blocks):
        """P^T diag(gamma_q blocks_q) P for blocks (Q, n, n)."""
        return (self.P.T @ _block_diag(self.weights[:, None, None] * blocks) @ self.P).tocsr()

    def kernel_matrix(self, m):
        """g^H form at time node m (assembled on demand)."""
        t = self.table
        return self.weighted_mass(t.G[t.index, m])

    def source_matrix(self, m):
        t = self.table
        return self.weighted_mass(t.J[t.index, m])

    def m_norm(self, u):
        return float(np.sqrt(max(u @ (self.M @ u), 0.0)))

    def l2_norm(self, u):
        return float(np.sqrt(max(u @ (self.gram @ u), 0.0)))

    def skew_defect(self):
        d = self.A + self.A.T
        return float(abs(d).max()) if d.nnz else 0.0

    def export_matrix_market(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        out = []
        for name in ("M", "R", "A", "G0"):
            p = directory / f"{name}.mtx"
            scipy.io.mmwrite(str(p), getattr(self, name))
            out.append(p)
        return out


def assemble_macro_forms(space, rule, table):
    """m^H, r^H, g^H(0) via quadrature with the tabulated tensors; a_H by exact 2-point Gauss."""
    if table.n != space.n:
        raise ConfigError(f"tensor table has n = {table.n}, macro space has n = {space.n}")
    pts = rule.flat_points
    if table.n_points != len(pts):
        raise ConfigError(f"tensor table covers {table.n_points} points, rule has {len(pts)}")
    gap = np.abs(table.points - pts).max(axis=1)
    if np.any(gap > 1e-12):
        bad = int(np.argmax(gap))
        raise ConfigError(f"no tensor for macro quadrature point {pts[bad].tolist()} (index {bad})")
    B, C = space.operators_on_rule(rule)
    P = space._lift(B)
    w = rule.flat_weights
    idx = table.index
    n = space.n

    def wmass(blocks):
        return (P.T @ _block_diag(w[:, None, None] * blocks) @ P).tocsr()

    M = wmass(table.M[idx])
    R = wmass(table.R[idx]) if np.any(table.R) else sp.csr_matrix((space.ndof, space.ndof))
    G0 = wmass(table.G[idx, 0]) if np.any(table.G[:, 0]) else sp.csr_matrix((space.ndof, space.ndof))
    gram = wmass(np.broadcast_to(np.eye(n), (len(w), n, n)))
    # curl pairing: E and H blocks built separately so that skew-symmetry is a genuine check
    last = space.n_components - 1
    BE, CE = space._lift(B, [0]), space._lift(C, [0])
    BH, CH = space._lift(B, [last]), space._lift(C, [last])
    W = sp.diags(np.repeat(w, n))
    # rows E: -(curl Phi_H, Psi_E); rows H: (curl Phi_E, Psi_H). Shifting H values onto E slots:
    shift = _component_shift(len(w), n, src=last, dst=0)
    A = (-(BE.T @ W @ (shift @ CH)) + (BH.T @ W @ (shift.T @ CE))).tocsr()
    A.eliminate_zeros()
    return MacroForms(space, rule, table, P, M, R, A, G0, gram)


def _component_shift(q, n, src, dst):
    """Permutation-like map moving component ``src`` rows onto component ``dst`` rows."""
    base = np.arange(q) * n
    rows = (base[:, None] + 3 * dst + np.arange(3)).ravel()
    cols = (base[:, None] + 3 * src + np.arange(3)).ravel()
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(q * n, q * n))
