"""Crank-Nicolson time stepping of the macro system with a trapezoidal memory term.

    m(u', Psi) + r(u, Psi) + int_0^t g(t - s; u(s), Psi) ds + a(u, Psi) = (g_H(t), Psi)_H - (J(t) u_0, Psi)_H

The convolution at t_m is C^m = tau [G_m u^0 / 2 + sum_{i=1}^{m-1} G_{m-i} u^i + G_0 u^m / 2], so the
implicit matrix is M + tau/2 (R + A) + tau^2/4 G_0 and is factorised once.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
import scipy.sparse.linalg as spla

from .errors import ConfigError, NumericalError

log = logging.getLogger(__name__)


@dataclass
class MacroState:
    """Current coefficients, time level and the stored field history at quadrature points."""

    u: np.ndarray
    m: int
    tau: float
    history: np.ndarray = field(repr=False)  # (n_levels, Q, n) values at quadrature points

    @property
    def t(self):
        return self.m * self.tau


DIRECT_LIMIT = 6000
GMRES_RTOL = 1e-12


class Stepper:
    """Holds the implicit solver and the kernel/source data for one (forms, tau).

    ``solver``: 'direct' (sparse LU, factorised once), 'gmres' (Jacobi-preconditioned, warm
    started from u^m) or 'auto' (direct up to DIRECT_LIMIT unknowns).
    """

    def __init__(self, forms, tau, source=None, solver="auto"):
        if tau <= 0:
            raise ConfigError("time step must be positive")
        self.forms = forms
        self.tau = float(tau)
        table = forms.table
        self.table = table
        self.source = source
        self.with_kernel = not table.kernel_vanishes
        self.with_extra = not table.source_vanishes
        half = 0.5 * tau
        lhs = forms.M + half * (forms.R + forms.A)
        if self.with_kernel:
            lhs = lhs + (0.25 * tau * tau) * forms.G0
        self.rhs_matrix = (forms.M - half * (forms.R + forms.A)).tocsr()
        if solver == "auto":
            solver = "direct" if forms.space.ndof <= DIRECT_LIMIT else "gmres"
        if solver not in ("direct", "gmres"):
            raise ConfigError(f"unknown macro solver {solver!r}")
        self.solver = solver
        if solver == "direct":
            try:
                self._lu = spla.splu(lhs.tocsc())
            except RuntimeError as exc:
                raise NumericalError(f"macro factorisation failed: {exc}") from exc
        else:
            self._lhs = lhs.tocsr()
            diag = self._lhs.diagonal()
            if np.any(diag <= 0):
                raise NumericalError("implicit matrix has a non-positive diagonal entry")
            self._precond = spla.LinearOperator(self._lhs.shape, matvec=lambda r: r / diag, dtype=float)
        self._groups = [np.flatnonzero(table.index == u) for u in range(table.n_unique)]
        self._single = table.n_unique == 1

    def _solve(self, rhs, guess, m):
        if self.solver == "direct":
            return self._lu.solve(rhs)
        x, info = spla.gmres(self._lhs, rhs, x0=guess, rtol=GMRES_RTOL, atol=0.0, restart=100,
                             maxiter=50, M=self._precond)
        if info != 0:
            res = np.linalg.norm(self._lhs @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
            raise NumericalError(f"GMRES failed at step {m} (relative residual {res:.3e})")
        return x

    def _check_grid(self, m):
        if m >= self.table.n_times:
            raise ConfigError(f"tensor table has {self.table.n_times} time nodes, step needs node {m}")

    def _kernel_sum(self, coeffs, history, m_new):
        """Point values sum_i coeffs[i] G(t_{m_new - i}) V^i for i = 0..len(coeffs)-1."""
        k = len(coeffs)
        lags = m_new - np.arange(k)
        out = np.empty(history.shape[1:])
        for u, pts in enumerate(self._groups):
            Gw = coeffs[:, None, None] * self.table.G[u, lags]
            V = history[:k] if self._single else history[:k, pts]
            val = np.tensordot(V, Gw, axes=([0, 2], [0, 2]))  # (Q_u, n)
            if self._single:
                out = val
            else:
                out[pts] = val
        return out

    def explicit_convolution(self, state):
        """Vector of the convolution at t_{m+1} without its implicit G_0 u^{m+1} / 2 part."""
        m1 = state.m + 1
        self._check_grid(m1)
        coeffs = np.full(m1, self.tau)
        coeffs[0] *= 0.5
        vals = self._kernel_sum(coeffs, state.history, m1)
        return self.forms.test_against(vals)

    def extra_source(self, m, v0):
        t = self.table
        vals = np.empty_like(v0)
        for u, pts in enumerate(self._groups):
            vals[pts] = v0[pts] @ t.J[u, m].T
        return self.forms.test_against(vals)

    def load(self, m):
        if self.source is None:
            return None
        return self.source(m * self.tau)

    def initial_state(self, u0):
        u0 = np.asarray(u0, dtype=float)
        n_levels = self.table.n_times if self.with_kernel else 1
        hist = np.zeros((n_levels,) + (self.forms.rule.n_points, self.forms.space.n))
        hist[0] = self.forms.at_points(u0)
        state = MacroState(u0.copy(), 0, self.tau, hist)
        self._v0 = hist[0].copy()
        self._conv_prev = np.zeros_like(u0)
        self._load_prev = self.load(0)
        self._extra_prev = self.extra_source(0, self._v0) if self.with_extra else None
        return state

    def step(self, state):
        """Advance one step; returns the new state (history updated in place)."""
        m1 = state.m + 1
        rhs = self.rhs_matrix @ state.u
        half = 0.5 * self.tau
        if self.with_kernel:
            conv_exp = self.explicit_convolution(state)
            rhs -= half * (conv_exp + self._conv_prev)
        load_new = self.load(m1)
        if load_new is not None:
            rhs += half * (load_new + self._load_prev)
        if self.with_extra:
            self._check_grid(m1)
            extra_new = self.extra_source(m1, self._v0)
            rhs -= half * (extra_new + self._extra_prev)
            self._extra_prev = extra_new
        u_new = self._solve(rhs, state.u, m1)
        if not np.all(np.isfinite(u_new)):
            raise NumericalError(f"non-finite values at step {m1}")
        if self.with_kernel:
            self._conv_prev = conv_exp + half * (self.forms.G0 @ u_new)
            state.history[m1] = self.forms.at_points(u_new)
        self._load_prev = load_new
        state.u = u_new
        state.m = m1
        return state


def step(state, stepper):
    return stepper.step(state)


@dataclass
class StabilityReport:
    times: np.ndarray
    norms: np.ndarray
    bounds: np.ndarray

    @property
    def complete(self):
        """False when the bound could not be evaluated (source given without its point values)."""
        return bool(np.all(np.isfinite(self.bounds)))

    @property
    def violations(self):
        return np.flatnonzero(self.norms > self.bounds * (1 + 1e-12) + 1e-300)

    @property
    def ok(self):
        return self.violations.size == 0


def stability_bound_series(times, alpha, g_norms, u0_norm, J_norms, G_norms):
    """Bound e^{C_G(t)} [t/alpha sup|g| + (1 + |J|_{L1}/alpha) |u_0|] at every grid time."""
    times = np.asarray(times, dtype=float)
    g_sup = np.maximum.accumulate(np.asarray(g_norms, dtype=float))
    j_int = scipy.integrate.cumulative_trapezoid(J_norms, times, initial=0.0)
    g_int = scipy.integrate.cumulative_trapezoid(G_norms, times, initial=0.0)
    c_g = scipy.integrate.cumulative_trapezoid(g_int, times, initial=0.0) / alpha
    return np.exp(c_g) * (times / alpha * g_sup + (1.0 + j_int / alpha) * u0_norm)


def stability_bound(t, alpha, g_norm, u0_norm, times, J_norms, G_norms):
    """Bound at time t (a grid node) with a constant-in-time source norm."""
    times = np.asarray(times, dtype=float)
    k = int(np.argmin(np.abs(times - t)))
    if abs(times[k] - t) > 1e-12 * max(1.0, abs(t)):
        raise ConfigError(f"t = {t} is not a grid node")
    series = stability_bound_series(times[:k + 1], alpha, np.full(k + 1, g_norm), u0_norm,
                                    np.asarray(J_norms)[:k + 1], np.asarray(G_norms)[:k + 1])
    return float(series[-1])


def tensor_sup_norms(table, kind):
    """max over points of the spectral norm of G or J at every time node."""
    arr = table.G if kind == "G" else table.J
    return np.linalg.norm(arr, ord=2, axis=(-2, -1)).max(axis=0)


def _norm_series(table, kind, n_steps):
    """Sup norms on the run grid; vanishing tensors may be tabulated at fewer nodes."""
    norms = tensor_sup_norms(table, kind)[:n_steps + 1]
    if norms.size < n_steps + 1:
        if np.any(norms):
            raise ConfigError(f"{kind} tabulated at {norms.size} nodes, run needs {n_steps + 1}")
        norms = np.zeros(n_steps + 1)
    return norms


def source_norm(forms, values):
    """m^H quadrature norm of a field sampled at the macro quadrature points (Q, n)."""
    t = forms.table
    Mv = np.einsum("qab,qb->qa", t.M[t.index], values)
    return float(np.sqrt(max(np.sum(forms.weights * np.sum(Mv * values, axis=1)), 0.0)))


@dataclass
class Trajectory:
    times: np.ndarray
    u: np.ndarray  # (n_levels, ndof) or None when not stored
    norms_m: np.ndarray
    norms_l2: np.ndarray
    report: StabilityReport
    final: np.ndarray

    @property
    def energy(self):
        return 0.5 * self.norms_m ** 2

    @property
    def energy_drift(self):
        e0 = self.energy[0]
        return (self.energy - e0) / e0 if e0 > 0 else np.zeros_like(self.energy)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "norm_m", "norm_l2", "bound", "energy_drift"])
            for row in zip(self.times, self.norms_m, self.norms_l2, self.report.bounds, self.energy_drift):
                w.writerow([repr(float(v)) for v in row])
        return path


def run(forms, u0, tau, n_steps, source=None, source_values=None, store=True, callback=None, solver="auto"):
    """Integrate n_steps steps from u0.

    ``source(t)`` returns the load vector (g_H(t), .)_H; ``source_values(t)`` returns g at the quadrature
    points and is only used for the stability bound.
    """
    stepper = Stepper(forms, tau, source, solver)
    state = stepper.initial_state(u0)
    times = tau * np.arange(n_steps + 1)
    norms_m = np.empty(n_steps + 1)
    norms_l2 = np.empty(n_steps + 1)
    traj = np.empty((n_steps + 1, forms.space.ndof)) if store else None
    norms_m[0] = forms.m_norm(state.u)
    norms_l2[0] = forms.l2_norm(state.u)
    if store:
        traj[0] = state.u
    if callback is not None:
        callback(state)
    for _ in range(n_steps):
        stepper.step(state)
        norms_m[state.m] = forms.m_norm(state.u)
        norms_l2[state.m] = forms.l2_norm(state.u)
        if store:
            traj[state.m] = state.u
        if callback is not None:
            callback(state)
    table = forms.table
    alpha = table.meta.get("alpha", float(min(np.linalg.eigvalsh(Mu).min() for Mu in table.M)))
    if source_values is not None:
        g_norms = np.array([source_norm(forms, source_values(t)) for t in times])
    elif source is None:
        g_norms = np.zeros(n_steps + 1)
    else:
        g_norms = np.full(n_steps + 1, np.nan)
    bounds = stability_bound_series(times, alpha, g_norms, norms_m[0],
                                    _norm_series(table, "J", n_steps), _norm_series(table, "G", n_steps))
    report = StabilityReport(times, norms_m, bounds)
    if not report.ok:
        log.warning("stability bound violated at %d time nodes", report.violations.size)
    return Trajectory(times, traj, norms_m, norms_l2, report, state.u.copy())


class _DenseRule:
    n_points = 1


class _DenseSpace:
    def __init__(self, ndof):
        self.n = ndof
        self.ndof = ndof


class DenseForms:
    """Adapter running the stepper on a small dense system.

    The whole system is treated as one 'quadrature point' with unit weight, so kernel and
    source matrices are the tabulated (n_times, ndof, ndof) stacks themselves.
    """

    def __init__(self, M, R, A, G_stack, J_stack, times):
        import scipy.sparse as sp

        from .tensors import EffectiveTensorTable

        M = np.atleast_2d(np.asarray(M, dtype=float))
        n = M.shape[0]
        self.space = _DenseSpace(n)
        self.rule = _DenseRule()
        self.M = sp.csr_matrix(M)
        self.R = sp.csr_matrix(np.atleast_2d(np.asarray(R, dtype=float)))
        self.A = sp.csr_matrix(np.atleast_2d(np.asarray(A, dtype=float)))
        G_stack = np.asarray(G_stack, dtype=float).reshape(len(times), n, n)
        J_stack = np.asarray(J_stack, dtype=float).reshape(len(times), n, n)
        self.G0 = sp.csr_matrix(G_stack[0])
        self.gram = sp.identity(n, format="csr")
        alpha = float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())
        self.table = EffectiveTensorTable(np.asarray(times, float), M[None], np.asarray(R, float).reshape(1, n, n),
                                          G_stack[None], J_stack[None], np.zeros(1, dtype=np.int64),
                                          np.zeros((1, 3)), meta={"alpha": alpha})
        self.weights = np.ones(1)

    def at_points(self, u):
        return np.asarray(u, dtype=float).reshape(1, -1)

    def test_against(self, values):
        return np.asarray(values, dtype=float).ravel()

    def m_norm(self, u):
        return float(np.sqrt(max(u @ (self.M @ u), 0.0)))

    def l2_norm(self, u):
        return float(np.linalg.norm(u))
