"""Periodic Lagrange Q_k finite elements on the unit cell and the cell problems.

The unknown of every cell problem is an N-component periodic field w (N = n/3);
its gradient is the n-vector [grad w_1, ..., grad w_N]. Fields are stored as flat
vectors, component-major: entry c * n_scalar + i is the value of component c at
scalar node i.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import check_coefficients, coefficient_bounds
from .errors import ConfigError, InvariantViolation, NumericalError
from .mesh import BrickMesh, build_micro_mesh
from .quadrature import gauss_3d, tensor_basis

log = logging.getLogger(__name__)

CG_RTOL = 1e-11
SOBOLEV_CG_RTOL = 1e-13
DIRECT_LIMIT = 20000
CONTRACTION_SLACK = 1e-12


class PeriodicLagrangeSpace:
    """Q_k Lagrange space with periodic identification, N scalar components."""

    def __init__(self, mesh, order, n_components):
        if not isinstance(mesh, BrickMesh) or mesh.boundary_kind != "periodic":
            raise ConfigError("PeriodicLagrangeSpace needs a periodic micro mesh")
        if order not in (1, 2):
            raise ConfigError(f"Lagrange order must be 1 or 2, got {order}")
        self.mesh = mesh
        self.order = order
        self.n_components = int(n_components)
        self.lattice = tuple(order * n for n in mesh.cells_per_axis)
        self.n_scalar = int(np.prod(self.lattice))
        self.ndof = self.n_components * self.n_scalar
        self.h = mesh.h
        self.det_j = mesh.cell_volume
        pts, wts = gauss_3d(order + 1)
        self.ref_points = pts
        self.quad_weights = wts * self.det_j
        self.basis_values, ref_grads = tensor_basis(order, pts)
        self.basis_grads = ref_grads / self.h[None, :, None]

    @property
    def n(self):
        return 3 * self.n_components

    @property
    def n_local(self):
        return (self.order + 1) ** 3

    @cached_property
    def cell_dofs(self):
        """(n_cells, n_local) scalar node ids, local order x-fastest."""
        k = self.order
        Kx, Ky, Kz = self.lattice
        i, j, kk = self.mesh.cell_index.T
        cols = []
        for c in range(k + 1):
            for b in range(k + 1):
                for a in range(k + 1):
                    cols.append(((k * i + a) % Kx) + Kx * (((k * j + b) % Ky) + Ky * ((k * kk + c) % Kz)))
        out = np.column_stack(cols)
        out.setflags(write=False)
        return out

    @cached_property
    def node_coords(self):
        Kx, Ky, Kz = self.lattice
        z, y, x = np.meshgrid(np.arange(Kz) / Kz, np.arange(Ky) / Ky, np.arange(Kx) / Kx, indexing="ij")
        return np.column_stack([x.ravel(), y.ravel(), z.ravel()])

    @cached_property
    def quad_points(self):
        """(n_cells, n_q, 3) physical quadrature points."""
        return self.mesh.cell_origins[:, None, :] + self.ref_points[None] * self.h

    @cached_property
    def mean_weights(self):
        """Integral of each scalar basis function; e . w = integral of w."""
        local = (self.quad_weights[:, None] * self.basis_values).sum(axis=0)
        vals = np.broadcast_to(local, self.cell_dofs.shape).ravel()
        return np.bincount(self.cell_dofs.ravel(), weights=vals, minlength=self.n_scalar)

    @cached_property
    def _scalar_pattern(self):
        cd = self.cell_dofs
        nl = self.n_local
        rows = np.repeat(cd, nl, axis=1).ravel()
        cols = np.tile(cd, (1, nl)).ravel()
        return rows, cols

    def split(self, w):
        return np.asarray(w).reshape(self.n_components, self.n_scalar)

    def mean(self, w):
        """Per-component mean over the unit cell."""
        return self.split(w) @ self.mean_weights

    def remove_mean(self, w):
        w = self.split(np.array(w, dtype=float, copy=True))
        w -= (w @ self.mean_weights)[:, None]
        return w.ravel()

    def grad_at_quad(self, w):
        """(n_cells, n_q, n) gradient of field w at all quadrature points."""
        wc = self.split(w)
        out = np.empty((self.mesh.n_cells, len(self.quad_weights), self.n))
        for c in range(self.n_components):
            loc = wc[c][self.cell_dofs]
            out[:, :, 3 * c:3 * c + 3] = np.einsum("ea,qda->eqd", loc, self.basis_grads)
        return out

    def eval_grad(self, w, points):
        """Gradient of w at arbitrary points (m, 3) of the (periodically extended) cell."""
        pts = np.mod(np.asarray(points, dtype=float), 1.0)
        cell, local = self.mesh.locate(pts)
        _, ref = tensor_basis(self.order, local)
        grads = ref / self.h[None, :, None]
        dofs = self.cell_dofs[cell]
        wc = self.split(w)
        out = np.empty((len(pts), self.n))
        for c in range(self.n_components):
            out[:, 3 * c:3 * c + 3] = np.einsum("mda,ma->md", grads, wc[c][dofs])
        return out

    def eval(self, w, points):
        pts = np.mod(np.asarray(points, dtype=float), 1.0)
        cell, local = self.mesh.locate(pts)
        vals, _ = tensor_basis(self.order, local)
        dofs = self.cell_dofs[cell]
        wc = self.split(w)
        return np.stack([np.einsum("ma,ma->m", vals, wc[c][dofs]) for c in range(self.n_components)], axis=1)

    def assemble(self, samples):
        """Sparse matrix of (phi, psi) -> sum_q w  samples grad phi . grad psi.

        ``samples`` has shape (n_cells, n_q, n, n); entry [(c,a),(d,b)] uses block (c, d).
        """
        rows0, cols0 = self._scalar_pattern
        G = self.basis_grads
        data, rows, cols = [], [], []
        for c in range(self.n_components):
            for d in range(self.n_components):
                block = samples[:, :, 3 * c:3 * c + 3, 3 * d:3 * d + 3]
                if not np.any(block):
                    continue
                tmp = np.einsum("eqij,qjb->eqib", block, G, optimize=True)
                ke = np.einsum("q,qia,eqib->eab", self.quad_weights, G, tmp, optimize=True)
                data.append(ke.ravel())
                rows.append(rows0 + c * self.n_scalar)
                cols.append(cols0 + d * self.n_scalar)
        if not data:
            return sp.csr_matrix((self.ndof, self.ndof))
        mat = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(self.ndof, self.ndof))
        mat.sum_duplicates()
        return mat

    def load(self, flux, cancel_tol=1e-12):
        """Vector of v -> -integral(flux . grad v), flux given at quadrature points (n_cells, n_q, n).

        A vector that is pure cancellation (norm below ``cancel_tol`` times the norm of the summed
        absolute element contributions) is returned as exact zero; periodicity makes such loads
        vanish in exact arithmetic.
        """
        out = np.zeros(self.ndof)
        gross = np.zeros(self.ndof)
        flat = self.cell_dofs.ravel()
        for c in range(self.n_components):
            loc = -np.einsum("q,eqd,qda->ea", self.quad_weights, flux[:, :, 3 * c:3 * c + 3], self.basis_grads)
            sl = slice(c * self.n_scalar, (c + 1) * self.n_scalar)
            out[sl] = np.bincount(flat, weights=loc.ravel(), minlength=self.n_scalar)
            gross[sl] = np.bincount(flat, weights=np.abs(loc).ravel(), minlength=self.n_scalar)
        if np.linalg.norm(out) <= cancel_tol * np.linalg.norm(gross):
            out[:] = 0.0
        return out

    def integrate(self, values):
        """Integral over the cell of a quantity sampled at quadrature points (n_cells, n_q, ...)."""
        return np.tensordot(values, self.quad_weights, axes=([1], [0])).sum(axis=0)


def build_space(cells_per_axis, order, n_components):
    mesh, _ = build_micro_mesh(cells_per_axis)
    return PeriodicLagrangeSpace(mesh, order, n_components)


# -- forms and solvers ---------------------------------------------------------

@dataclass
class MicroForms:
    """Assembled weighted forms m and r on one micro problem (macro point ``x``)."""

    space: PeriodicLagrangeSpace
    x: np.ndarray
    M_samples: np.ndarray = field(repr=False)
    R_samples: np.ndarray = field(repr=False)
    K_m: sp.csr_matrix = field(repr=False)
    K_r: sp.csr_matrix = field(repr=False)
    alpha: float
    C_M: float
    C_R: float
    solver: str = "cg"

    @property
    def n(self):
        return self.space.n

    def load_M(self, j):
        """v -> -integral(M e_j . grad v)."""
        return self.space.load(self.M_samples[:, :, :, j])

    def load_R(self, phi_grad):
        """v -> -integral(R phi . grad v) for phi given at quadrature points."""
        return self.space.load(np.einsum("eqij,eqj->eqi", self.R_samples, phi_grad))

    def m_inner(self, u, v):
        return float(u @ (self.K_m @ v))

    def m_norm(self, w):
        return float(np.sqrt(max(self.m_inner(w, w), 0.0)))

    def r_inner(self, u, v):
        return float(v @ (self.K_r @ u))

    @cached_property
    def grad_gram(self):
        """Plain gradient Gram matrix (M = identity)."""
        s = self.space
        eye = np.broadcast_to(np.eye(s.n), self.M_samples.shape)
        return s.assemble(eye)

    @cached_property
    def _solver_m(self):
        return ZeroMeanSolver(self.K_m, self.space, self.solver)

    def solve_m(self, b):
        """Solve m(w, v) = b(v) on the zero-mean space."""
        return self._solver_m.solve(b)


def assemble_micro_forms(space, model, x=(0.0, 0.0, 0.0), solver="cg", check=True):
    x = np.asarray(x, dtype=float)
    pts = space.quad_points.reshape(-1, 3)
    nq = len(space.quad_weights)
    Ms = model.M(x, pts)
    Rs = model.R(x, pts)
    if Ms.shape[-1] != space.n:
        raise ConfigError(f"model has n = {Ms.shape[-1]} but the space carries n = {space.n}")
    if check:
        check_coefficients(Ms, Rs)
    alpha, c_m, c_r = coefficient_bounds(Ms, Rs)
    Ms = Ms.reshape(space.mesh.n_cells, nq, space.n, space.n)
    Rs = Rs.reshape(space.mesh.n_cells, nq, space.n, space.n)
    return MicroForms(space, x, Ms, Rs, space.assemble(Ms), space.assemble(Rs), alpha, c_m, c_r, solver)


class ZeroMeanSolver:
    """Solves K w = b on the zero-mean subspace (K annihilates componentwise constants).

    ``cg``: Jacobi-preconditioned conjugate gradients on K + rho sum_c e_c e_c^T, which is SPD
    and whose solution has zero mean whenever b sums to zero per component.
    ``direct``: sparse LU with one node pinned per component, followed by mean removal.
    """

    def __init__(self, K, space, method="cg", rtol=CG_RTOL):
        if method not in ("cg", "direct"):
            raise ConfigError(f"unknown micro solver {method!r}")
        self.K = sp.csr_matrix(K)
        self.space = space
        self.method = method
        self.rtol = rtol
        ns, nc = space.n_scalar, space.n_components
        e = space.mean_weights / np.linalg.norm(space.mean_weights)
        self._e = e
        diag = self.K.diagonal()
        self._rho = float(np.mean(diag)) if diag.size else 1.0
        if method == "cg":
            jac = diag + self._rho * np.tile(e * e, nc)
            self._precond = spla.LinearOperator(self.K.shape, matvec=lambda r: r / jac, dtype=float)

            def matvec(x):
                xs = x.reshape(nc, ns)
                return self.K @ x + (self._rho * np.outer(xs @ e, e)).ravel()

            self._op = spla.LinearOperator(self.K.shape, matvec=matvec, dtype=float)
        else:
            keep = np.ones(space.ndof, dtype=bool)
            keep[np.arange(nc) * ns] = False
            self._keep = keep
            reduced = self.K[keep][:, keep].tocsc()
            try:
                self._lu = spla.splu(reduced)
            except RuntimeError as exc:
                raise NumericalError(f"micro factorisation failed: {exc}") from exc

    def solve(self, b, x0=None):
        b = np.asarray(b, dtype=float)
        if not np.any(b):
            return np.zeros_like(b)
        if self.method == "direct":
            x = np.zeros_like(b)
            x[self._keep] = self._lu.solve(b[self._keep])
            return self.space.remove_mean(x)
        maxiter = 10 * self.space.ndof
        x, info = spla.cg(self._op, b, x0=x0, rtol=self.rtol, atol=0.0, maxiter=maxiter, M=self._precond)
        if info != 0:
            res = np.linalg.norm(self._op.matvec(x) - b) / np.linalg.norm(b)
            raise NumericalError(f"CG did not converge within {maxiter} iterations (relative residual {res:.3e})")
        return self.space.remove_mean(x)


# -- cell problems -------------------------------------------------------------

def unit_gradient(space, j):
    """Constant field e_j at all quadrature points."""
    g = np.zeros((space.mesh.n_cells, len(space.quad_weights), space.n))
    g[:, :, j] = 1.0
    return g


def solve_corrector_M(forms, j):
    """w with m(w, v) = -integral(M e_j . grad v) for all v."""
    if not 0 <= j < forms.n:
        raise ConfigError(f"corrector index {j} out of range 0..{forms.n - 1}")
    return forms.solve_m(forms.load_M(j))


def solve_initial_G(forms, j, w_M):
    """Initial value of the damping corrector: m(w, v) = -integral(R (e_j + grad w_M) . grad v)."""
    phi = unit_gradient(forms.space, j) + forms.space.grad_at_quad(w_M)
    return forms.solve_m(forms.load_R(phi))


def solve_initial_N(forms, j):
    """w with integral(M (e_j - grad w) . grad v) = 0, i.e. m(w, v) = +integral(M e_j . grad v)."""
    return forms.solve_m(-forms.load_M(j))


class SobolevPropagator:
    """Crank-Nicolson stepper for m(dw/dt, v) + r(w, v) = 0 with a fixed step tau.

    Each step solves (K_m + tau/2 K_r) w_new = (K_m - tau/2 K_r) w_old. Small systems are
    factorised once; larger symmetric ones use CG warm-started from w_old with a tolerance
    tight enough that solver error stays below the contraction slack.
    """

    def __init__(self, forms, tau, method="auto"):
        if tau <= 0:
            raise ConfigError("micro time step must be positive")
        self.forms = forms
        self.tau = float(tau)
        self.trivial = forms.K_r.nnz == 0 or not np.any(forms.K_r.data)
        if self.trivial:
            return
        lhs = (forms.K_m + 0.5 * tau * forms.K_r).tocsr()
        if method == "auto":
            symmetric = abs(lhs - lhs.T).max() <= 1e-14 * abs(lhs).max()
            method = "direct" if forms.space.ndof <= DIRECT_LIMIT or not symmetric else "cg"
        self.method = method
        self._lhs = ZeroMeanSolver(lhs, forms.space, method, rtol=SOBOLEV_CG_RTOL)
        self._rhs = (forms.K_m - 0.5 * tau * forms.K_r).tocsr()

    def step(self, w):
        if self.trivial or not np.any(w):
            return np.array(w, copy=True)
        return self._lhs.solve(self._rhs @ w, x0=w)


def sobolev_evolve(forms, w0, tau, n_steps, store=True, observer=None, check=True, method="auto",
                   propagator=None):
    """Crank-Nicolson trajectory of the Sobolev equation started at w0.

    Returns (trajectory or None, m-norms per level). ``observer(m, w)`` is called at every level.
    The m-norm is asserted to be non-increasing up to a 1e-12 relative slack.
    """
    prop = propagator
    if prop is None:
        prop = _LazyPropagator(forms, tau, method)
    elif abs(prop.tau - tau) > 1e-15 * tau:
        raise ConfigError("propagator step does not match tau")
    w = np.array(w0, dtype=float, copy=True)
    norms = np.empty(n_steps + 1)
    norms[0] = forms.m_norm(w)
    traj = np.empty((n_steps + 1, w.size)) if store else None
    if store:
        traj[0] = w
    if observer is not None:
        observer(0, w)
    for m in range(1, n_steps + 1):
        w = prop.step(w)
        norms[m] = forms.m_norm(w)
        if check and norms[m] > norms[m - 1] * (1.0 + CONTRACTION_SLACK) + 1e-300:
            raise InvariantViolation(
                f"Sobolev m-norm increased at step {m}: {norms[m - 1]:.17g} -> {norms[m]:.17g}")
        if store:
            traj[m] = w
        if observer is not None:
            observer(m, w)
    return traj, norms


class _LazyPropagator:
    """Builds the (possibly expensive) propagator only when a non-zero state must be stepped."""

    def __init__(self, forms, tau, method="auto"):
        self.forms, self.tau, self.method = forms, float(tau), method
        self._prop = None

    def step(self, w):
        if not np.any(w):
            return np.array(w, copy=True)
        if self._prop is None:
            self._prop = SobolevPropagator(self.forms, self.tau, self.method)
        return self._prop.step(w)


@dataclass
class CorrectorSet:
    """Discrete correctors for one micro problem; index 0 of every array is j."""

    w_M: np.ndarray
    w_G0: np.ndarray
    w_N0: np.ndarray
    times: np.ndarray
    norms_M: np.ndarray
    norms_G: np.ndarray  # (n_times, n)
    norms_N: np.ndarray
    w_G: np.ndarray = None  # (n_times, n, ndof) when stored
    w_N: np.ndarray = None


def solve_static_correctors(forms):
    """w^M_j for all j, shape (n, ndof)."""
    return np.stack([solve_corrector_M(forms, j) for j in range(forms.n)])


def solve_cell_problems(forms, times, store_trajectories=False, observer=None, check=True, w_M=None):
    """All correctors for j = 1..n on a uniform time grid starting at 0.

    ``observer(family, j, m, w)`` is called for every time level of the G and N families.
    Precomputed static correctors may be passed as ``w_M``.
    """
    times = np.asarray(times, dtype=float)
    n = forms.n
    ndof = forms.space.ndof
    n_steps = len(times) - 1
    tau = times[1] - times[0] if n_steps > 0 else 1.0
    if n_steps > 0 and not np.allclose(np.diff(times), tau, rtol=1e-10, atol=1e-14):
        raise ConfigError("micro time grid must be uniform")
    if w_M is None:
        w_M = solve_static_correctors(forms)
    w_G0 = np.zeros((n, ndof))
    w_N0 = np.zeros((n, ndof))
    for j in range(n):
        w_G0[j] = solve_initial_G(forms, j, w_M[j])
        w_N0[j] = solve_initial_N(forms, j)
    norms_M = np.array([forms.m_norm(w) for w in w_M])
    norms_G = np.empty((n_steps + 1, n))
    norms_N = np.empty((n_steps + 1, n))
    store = (np.empty((n_steps + 1, n, ndof)), np.empty((n_steps + 1, n, ndof))) if store_trajectories else (None, None)
    prop = _LazyPropagator(forms, tau) if n_steps > 0 else None
    for fam, inits, norms, traj in (("G", w_G0, norms_G, store[0]), ("N", w_N0, norms_N, store[1])):
        for j in range(n):
            def obs(m, w, fam=fam, j=j, traj=traj):
                if traj is not None:
                    traj[m, j] = w
                if observer is not None:
                    observer(fam, j, m, w)
            _, nrm = sobolev_evolve(forms, inits[j], tau, n_steps, store=False, observer=obs, check=check,
                                    propagator=prop) \
                if n_steps > 0 else (None, np.array([forms.m_norm(inits[j])]))
            if n_steps == 0:
                obs(0, inits[j])
            norms[:, j] = nrm
    return CorrectorSet(w_M, w_G0, w_N0, times, norms_M, norms_G, norms_N, store[0], store[1])


def micro_h1_error(coarse_space, w_coarse, fine_space, w_fine):
    """||grad(w_coarse - w_fine)||_{L2(Y)} with the coarse field injected into the fine mesh."""
    nc = np.array(coarse_space.mesh.cells_per_axis)
    nf = np.array(fine_space.mesh.cells_per_axis)
    if np.any(nf % nc) or coarse_space.n_components != fine_space.n_components:
        raise ConfigError(f"meshes are not nested: coarse {tuple(nc)} vs fine {tuple(nf)}")
    pts = fine_space.quad_points.reshape(-1, 3)
    g_f = fine_space.grad_at_quad(w_fine).reshape(len(pts), -1)
    g_c = coarse_space.eval_grad(w_coarse, pts)
    wts = np.tile(fine_space.quad_weights, fine_space.mesh.n_cells)
    return float(np.sqrt(np.sum(wts * np.sum((g_c - g_f) ** 2, axis=1))))
