"""Independent reference computations.

Nothing here goes through the macro assembly or the tensor table code; the laminate oracle
does not use finite elements at all.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .coefficients import TwoPhase
from .errors import ConfigError, DegenerateFitError
from .micro import assemble_micro_forms, build_space, solve_cell_problems

FINE_DOF_LIMIT = 2_000_000
DENSE_DOF_LIMIT = 500


# -- analytic laminate ----------------------------------------------------------

def laminate_effective(profile, axis=0):
    """3x3 effective tensor of a scalar layered coefficient a(y_axis) I_3."""
    if not (hasattr(profile, "harmonic_mean") and hasattr(profile, "mean")):
        raise ConfigError("laminate_effective needs a scalar profile with mean and harmonic mean")
    d = np.full(3, float(profile.mean))
    d[axis] = float(profile.harmonic_mean)
    return np.diag(d)


class Laminate1DOracle:
    """Exact-in-structure reduction of the cell problems for coefficients depending on y_axis only.

    For such coefficients every corrector depends on s = y_axis alone, and its gradient is S v(s)
    with S (n x N) picking slot 3c + axis for component c. The periodic cell problems reduce to
    algebraic relations with one constant multiplier per component:

        static:     A v = lam - S^T M e_j,            avg v = 0
        evolution:  A v' = lam(t) - B v,             avg v = 0
    with A = S^T M S and B = S^T R S. Averages use K midpoint samples, which is exact for
    piecewise constant profiles aligned with the sample cells and spectrally accurate for smooth ones.
    """

    def __init__(self, model, samples=1024, smooth=None):
        axis = model.lamination_axis()
        if axis is None:
            raise ConfigError("Laminate1DOracle needs a layered coefficient model")
        self.model = model
        self.axis = axis
        self.K = int(samples)
        self.n = model.n
        self.N = model.n_components
        self.s = (np.arange(self.K) + 0.5) / self.K
        y = np.zeros((self.K, 3))
        y[:, axis] = self.s
        x0 = np.zeros(3)
        self.Ms = model.M(x0, y)
        self.Rs = model.R(x0, y)
        S = np.zeros((self.n, self.N))
        for c in range(self.N):
            S[3 * c + axis, c] = 1.0
        self.S = S
        self.A = np.einsum("ac,kab,bd->kcd", S, self.Ms, S)
        self.B = np.einsum("ac,kab,bd->kcd", S, self.Rs, S)
        self.Ainv = np.linalg.inv(self.A)
        self.Ainv_mean_inv = np.linalg.inv(self.Ainv.mean(axis=0))
        if smooth is None:
            smooth = not _has_jumps(model)
        self.smooth = smooth

    # correctors as gradient profiles v (K, N)

    def _project(self, rhs):
        """v = A^{-1}(lam + rhs) with lam chosen so that avg v = 0; rhs (K, N)."""
        a_rhs = np.einsum("kcd,kd->kc", self.Ainv, rhs)
        lam = -self.Ainv_mean_inv @ a_rhs.mean(axis=0)
        return np.einsum("kcd,d->kc", self.Ainv, lam) + a_rhs

    def static(self, j):
        return self._project(-np.einsum("ac,ka->kc", self.S, self.Ms[:, :, j]))

    def phi(self, j):
        """Corrected gradient e_j + S v^M_j, shape (K, n)."""
        out = self.static(j) @ self.S.T
        out[:, j] += 1.0
        return out

    def initial_G(self, j):
        return self._project(-np.einsum("ac,kab,kb->kc", self.S, self.Rs, self.phi(j)))

    def initial_N(self, j):
        return -self.static(j)

    @property
    def generator(self):
        """Dense matrix L of v' = L v on the stacked (K N) vector."""
        if not hasattr(self, "_gen"):
            K, N = self.K, self.N
            cols = []
            eye = np.eye(K * N)
            for c in range(K * N):
                v = eye[c].reshape(K, N)
                cols.append(self._project(-np.einsum("kcd,kd->kc", self.B, v)).ravel())
            self._gen = np.column_stack(cols)
        return self._gen

    def propagator(self, t, tau=None):
        """exp(L t), or the Crank-Nicolson power with step tau if given."""
        L = self.generator
        if tau is None:
            return scipy.linalg.expm(L * t)
        steps = int(round(t / tau))
        if abs(steps * tau - t) > 1e-9 * max(1.0, t):
            raise ConfigError("t must be a multiple of tau")
        I = np.eye(L.shape[0])
        step = np.linalg.solve(I - 0.5 * tau * L, I + 0.5 * tau * L)
        return np.linalg.matrix_power(step, steps)

    def evolve(self, v0, t, tau=None):
        return (self.propagator(t, tau) @ v0.ravel()).reshape(self.K, self.N)

    def trajectory(self, v0, times, tau=None):
        """v at each of the given times (uniform grid starting at 0)."""
        times = np.asarray(times, dtype=float)
        if len(times) < 2:
            return v0[None].copy()
        dt = times[1] - times[0]
        P = self.propagator(dt, tau)
        out = np.empty((len(times),) + v0.shape)
        out[0] = v0
        cur = v0.ravel()
        for m in range(1, len(times)):
            cur = P @ cur
            out[m] = cur.reshape(v0.shape)
        return out

    # averaged tensors

    def M0(self):
        phi = np.stack([self.phi(j) for j in range(self.n)])
        return np.einsum("ika,kab,jkb->ij", phi, self.Ms, phi) / self.K

    def R0(self):
        phi = np.stack([self.phi(j) for j in range(self.n)])
        return np.einsum("ika,kab,jkb->ij", phi, self.Rs, phi) / self.K

    def kernel_values(self, family, times, tau=None):
        """G0(t) (family 'G') or J0(t) (family 'N') at the given times, shape (n_t, n, n)."""
        times = np.asarray(times, dtype=float)
        phi = np.stack([self.phi(i) for i in range(self.n)])
        rphi = np.einsum("kab,ika->ikb", self.Rs, phi)  # R^T phi_i
        out = np.empty((len(times), self.n, self.n))
        for j in range(self.n):
            v0 = self.initial_G(j) if family == "G" else self.initial_N(j)
            traj = self.trajectory(v0, times, tau)
            grads = traj @ self.S.T  # (n_t, K, n)
            out[:, :, j] = np.einsum("ikb,mkb->mi", rphi, grads) / self.K
        return out

    def gradient_at(self, v, points):
        """Full n-vector gradient S v(s) at arbitrary points (m, 3)."""
        s = np.mod(np.asarray(points, dtype=float)[:, self.axis], 1.0)
        if self.smooth:
            vals = _fourier_interp(v, self.s, s)
        else:
            vals = v[np.minimum((s * self.K).astype(np.int64), self.K - 1)]
        return vals @ self.S.T

    def m_error(self, forms, w_h, v):
        """m-norm of grad(w_h) - S v over the micro cell of ``forms``."""
        space = forms.space
        pts = space.quad_points.reshape(-1, 3)
        diff = space.grad_at_quad(w_h).reshape(len(pts), -1) - self.gradient_at(v, pts)
        Ms = forms.M_samples.reshape(len(pts), space.n, space.n)
        wts = np.tile(space.quad_weights, space.mesh.n_cells)
        return float(np.sqrt(max(np.sum(wts * np.einsum("pa,pab,pb->p", diff, Ms, diff)), 0.0)))


def _has_jumps(model):
    profiles = [getattr(model, a, None) for a in ("m_profile", "r_profile", "eps_inf", "d_eps", "sigma")]
    return any(isinstance(p, TwoPhase) for p in profiles)


def _fourier_interp(samples, grid, s):
    """Trigonometric interpolation of 1-periodic samples on a uniform midpoint grid."""
    K = len(grid)
    coef = np.fft.rfft(samples, axis=0) / K
    k = np.arange(coef.shape[0])
    shift = np.exp(-2j * np.pi * k * grid[0])
    coef = coef * shift[:, None]
    weights = np.full(coef.shape[0], 2.0)
    weights[0] = 1.0
    if K % 2 == 0:
        weights[-1] = 1.0
    phase = np.exp(2j * np.pi * np.outer(s, k))
    return np.real(phase @ (weights[:, None] * coef))


# -- finite element references ---------------------------------------------------

def fine_reference_correctors(model, cells, order, factor, times, x=(0.0, 0.0, 0.0), store_trajectories=False):
    """Corrector set on the mesh refined by ``factor``; returns (forms, CorrectorSet)."""
    if factor < 1 or int(factor) != factor:
        raise ConfigError("refinement factor must be a positive integer")
    fine = tuple(int(c) * int(factor) for c in np.broadcast_to(cells, (3,)))
    ndof = model.n_components * int(np.prod(fine)) * order ** 3
    if ndof > FINE_DOF_LIMIT:
        raise ConfigError(f"fine reference would need {ndof} DOFs (limit {FINE_DOF_LIMIT})")
    space = build_space(fine, order, model.n_components)
    forms = assemble_micro_forms(space, model, x)
    return forms, solve_cell_problems(forms, times, store_trajectories=store_trajectories)


def dense_sobolev_oracle(forms, w0, t):
    """exp(-S t) w0 for the Sobolev generator S = K_m^{-1} K_r on the zero-mean space."""
    space = forms.space
    if space.ndof > DENSE_DOF_LIMIT:
        raise ConfigError(f"dense oracle limited to {DENSE_DOF_LIMIT} DOFs, got {space.ndof}")
    ns, nc = space.n_scalar, space.n_components
    keep = np.ones(space.ndof, dtype=bool)
    keep[np.arange(nc) * ns] = False
    Km = forms.K_m.toarray()[np.ix_(keep, keep)]
    Kr = forms.K_r.toarray()[np.ix_(keep, keep)]
    w0 = space.split(np.asarray(w0, dtype=float))
    pinned = (w0 - w0[:, :1]).ravel()
    S = np.linalg.solve(Km, Kr)
    out = np.zeros(space.ndof)
    out[keep] = scipy.linalg.expm(-S * t) @ pinned[keep]
    return space.remove_mean(out)


# -- rate fits ----------------------------------------------------------------

@dataclass
class RateFit:
    h: np.ndarray
    errors: np.ndarray
    slope: float
    intercept: float
    residual: float

    def rows(self):
        return list(zip(self.h.tolist(), self.errors.tolist()))


def fit_rate(h, errors):
    """Least-squares slope of log(error) against log(h)."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.size < 3 or h.size != e.size:
        raise ConfigError("rate fit needs at least three (h, error) pairs")
    if np.any(h <= 0) or not (np.all(np.diff(h) > 0) or np.all(np.diff(h) < 0)):
        raise ConfigError("mesh sizes must be positive and strictly monotone")
    if np.any(~np.isfinite(e)) or np.any(e <= 0):
        raise DegenerateFitError("errors must be positive for a log-log fit")
    X = np.column_stack([np.log(h), np.ones_like(h)])
    coef, *_ = np.linalg.lstsq(X, np.log(e), rcond=None)
    resid = float(np.linalg.norm(X @ coef - np.log(e)))
    return RateFit(h, e, float(coef[0]), float(coef[1]), resid)


# -- manufactured macro solution ---------------------------------------------------

@dataclass(frozen=True)
class ManufacturedMaxwell:
    """Smooth exact solution of the effective system with constant tensors (N_E = 0).

    E = cos(t) e(x), H = sin(t) h(x) with e tangentially zero on the unit cube boundary and every
    component varying along its own axis (so edge elements are not accidentally superconvergent),
    G(t) = exp(-t) g_E I_E, J(t) = exp(-t) j_E I_E. The forcing g is derived in closed form.
    """

    eps: float = 2.0
    mu: float = 1.0
    sigma: float = 0.5
    g_e: float = 0.3
    j_e: float = 0.2

    @property
    def M(self):
        return np.diag([self.eps] * 3 + [self.mu] * 3)

    @property
    def R(self):
        return np.diag([self.sigma] * 3 + [0.0] * 3)

    def G(self, t):
        return np.exp(-np.asarray(t, float))[..., None, None] * np.diag([self.g_e] * 3 + [0.0] * 3)

    def J(self, t):
        return np.exp(-np.asarray(t, float))[..., None, None] * np.diag([self.j_e] * 3 + [0.0] * 3)

    @staticmethod
    def _e(p):
        sx, sy, sz = np.sin(np.pi * p.T)
        fx, fy, fz = 2.0 + np.cos(np.pi * p.T)
        return np.column_stack([fx * sy * sz, fy * sz * sx, fz * sx * sy])

    @staticmethod
    def _curl_e(p):
        sx, sy, sz = np.sin(np.pi * p.T)
        cx, cy, cz = np.cos(np.pi * p.T)
        fx, fy, fz = 2.0 + cx, 2.0 + cy, 2.0 + cz
        return np.pi * np.column_stack([sx * (fz * cy - fy * cz), sy * (fx * cz - fz * cx), sz * (fy * cx - fx * cy)])

    @staticmethod
    def _h(p):
        sx, sy, sz = np.sin(np.pi * p.T)
        cx, cy, cz = np.cos(np.pi * p.T)
        return np.column_stack([sx * cy, sy * cz, sz * cx])

    @staticmethod
    def _curl_h(p):
        sx, sy, sz = np.sin(np.pi * p.T)
        return np.pi * np.column_stack([sy * sz, sz * sx, sx * sy])

    def exact(self, t, p):
        p = np.asarray(p, dtype=float)
        return np.hstack([np.cos(t) * self._e(p), np.sin(t) * self._h(p)])

    def initial(self, p):
        return self.exact(0.0, p)

    def forcing(self, t, p):
        p = np.asarray(p, dtype=float)
        e, h = self._e(p), self._h(p)
        conv = 0.5 * (np.cos(t) + np.sin(t) - np.exp(-t))
        g_E = ((-self.eps * np.sin(t) + self.sigma * np.cos(t) + self.g_e * conv + self.j_e * np.exp(-t)) * e
               - np.sin(t) * self._curl_h(p))
        g_H = self.mu * np.cos(t) * h + np.cos(t) * self._curl_e(p)
        return np.hstack([g_E, g_H])


# -- dense method of lines -----------------------------------------------------------

def dense_mol_exponential(M, RA, G0, J0, u0, lam, t, load=None):
    """Solution at time t of M u' + RA u + int_0^t e^{-lam (t-s)} G0 u(s) ds = -e^{-lam t} J0 u0.

    The memory is carried by z(t) = int_0^t e^{-lam (t-s)} u(s) ds (z' = u - lam z) and the source
    by y = e^{-lam t}; the augmented linear system is propagated with a dense matrix exponential.
    ``load`` is not supported (zero forcing) to keep the oracle exact.
    """
    if load is not None:
        raise ConfigError("dense MOL oracle supports zero forcing only")
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if 2 * n + 1 > 4 * DENSE_DOF_LIMIT:
        raise ConfigError("system too large for the dense oracle")
    Minv = np.linalg.inv(M)
    K = np.zeros((2 * n + 1, 2 * n + 1))
    K[:n, :n] = -Minv @ np.asarray(RA, float)
    K[:n, n:2 * n] = -Minv @ np.asarray(G0, float)
    K[:n, 2 * n] = -Minv @ (np.asarray(J0, float) @ u0)
    K[n:2 * n, :n] = np.eye(n)
    K[n:2 * n, n:2 * n] = -lam * np.eye(n)
    K[2 * n, 2 * n] = -lam
    X0 = np.concatenate([u0, np.zeros(n), [1.0]])
    return (scipy.linalg.expm(K * t) @ X0)[:n]


def volterra_scalar_exact(t):
    """u' = -int_0^t e^{-(t-s)} u(s) ds, u(0) = 1."""
    t = np.asarray(t, dtype=float)
    w = np.sqrt(3.0) / 2.0
    return np.exp(-0.5 * t) * (np.cos(w * t) + np.sin(w * t) / np.sqrt(3.0))
