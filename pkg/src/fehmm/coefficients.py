"""Locally periodic coefficient models M(x, y) and R(x, y).

Every model maps a macro point ``x`` (3,) and micro points ``y`` (m, 3) in the
unit cell to stacks of n x n matrices, n = 3 (2 + N_E). The field is ordered
[E (3), P (3 N_E), H (3)].
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ScenarioError

TWO_PI = 2.0 * np.pi


def system_size(n_e):
    return 3 * (2 + n_e)


# -- scalar 1-periodic profiles ---------------------------------------------

@dataclass(frozen=True)
class TwoPhase:
    """Piecewise constant: values[0] on [0, fraction), values[1] on [fraction, 1)."""

    values: tuple
    fraction: float = 0.5

    def __post_init__(self):
        if len(self.values) != 2 or not 0.0 < self.fraction < 1.0:
            raise ConfigError("TwoPhase needs two values and a fraction in (0, 1)")

    def __call__(self, t):
        t = np.mod(np.asarray(t, dtype=float), 1.0)
        return np.where(t < self.fraction, self.values[0], self.values[1])

    @property
    def mean(self):
        return self.fraction * self.values[0] + (1 - self.fraction) * self.values[1]

    @property
    def harmonic_mean(self):
        return 1.0 / (self.fraction / self.values[0] + (1 - self.fraction) / self.values[1])

    @property
    def bounds(self):
        return min(self.values), max(self.values)

    def describe(self):
        return {"kind": "two-phase", "values": list(self.values), "fraction": self.fraction}


@dataclass(frozen=True)
class Sinusoid:
    """mean + amplitude * sin(2 pi (t + phase))."""

    mean: float
    amplitude: float = 0.0
    phase: float = 0.0

    def __call__(self, t):
        return self.mean + self.amplitude * np.sin(TWO_PI * (np.asarray(t, dtype=float) + self.phase))

    @property
    def harmonic_mean(self):
        return float(np.sqrt(self.mean**2 - self.amplitude**2))

    @property
    def bounds(self):
        return self.mean - abs(self.amplitude), self.mean + abs(self.amplitude)

    def describe(self):
        return {"kind": "sinusoid", "mean": self.mean, "amplitude": self.amplitude, "phase": self.phase}


def make_profile(desc):
    """Build a profile from a plain dict (config / JSON form)."""
    kind = desc.get("kind")
    if kind == "two-phase":
        return TwoPhase(tuple(float(v) for v in desc["values"]), float(desc.get("fraction", 0.5)))
    if kind == "sinusoid":
        return Sinusoid(float(desc["mean"]), float(desc.get("amplitude", 0.0)), float(desc.get("phase", 0.0)))
    if kind == "constant":
        return Sinusoid(float(desc["value"]), 0.0)
    raise ConfigError(f"unknown profile kind {kind!r}")


# -- models -------------------------------------------------------------------

class CoefficientModel:
    """Base class. Subclasses implement ``M`` and ``R``."""

    n_e = 0
    x_independent = True
    name = "abstract"

    @property
    def n(self):
        return system_size(self.n_e)

    @property
    def n_components(self):
        return self.n // 3

    def M(self, x, y):
        raise NotImplementedError

    def R(self, x, y):
        raise NotImplementedError

    def lamination_axis(self):
        """Axis along which the coefficients vary, or None if not a laminate."""
        return None

    def describe(self):
        return {"model": self.name, "n_e": self.n_e}

    def sample_bounds(self, x, y):
        """(alpha, C_M, C_R) from samples at micro points y (m, 3)."""
        Ms = self.M(x, y)
        Rs = self.R(x, y)
        return coefficient_bounds(Ms, Rs)


def coefficient_bounds(Ms, Rs):
    sym = 0.5 * (Ms + np.swapaxes(Ms, -1, -2))
    ev = np.linalg.eigvalsh(sym)
    c_r = float(np.max(np.linalg.norm(Rs, ord=2, axis=(-2, -1)))) if Rs.size else 0.0
    return float(ev.min()), float(ev.max()), c_r


def check_coefficients(Ms, Rs, rtol=1e-12):
    """Raise ScenarioError unless M is symmetric positive definite and R is PSD."""
    scale = max(1.0, float(np.max(np.abs(Ms))))
    asym = float(np.max(np.abs(Ms - np.swapaxes(Ms, -1, -2))))
    if asym > rtol * scale:
        raise ScenarioError(f"M is not symmetric at a quadrature point (asymmetry {asym:.3e})")
    lam = np.linalg.eigvalsh(0.5 * (Ms + np.swapaxes(Ms, -1, -2)))
    if lam.min() <= 0.0:
        bad = tuple(int(i) for i in np.unravel_index(np.argmin(lam.min(axis=-1)), lam.shape[:-1]))
        raise ScenarioError(f"M is not positive definite at sample {bad} (min eigenvalue {lam.min():.3e})")
    rs = 0.5 * (Rs + np.swapaxes(Rs, -1, -2))
    rscale = max(1.0, float(np.max(np.abs(Rs)))) if Rs.size else 1.0
    rmin = float(np.linalg.eigvalsh(rs).min()) if Rs.size else 0.0
    if rmin < -rtol * rscale * 10:
        raise ScenarioError(f"R is not positive semi-definite (min eigenvalue of symmetric part {rmin:.3e})")


@dataclass
class ConstantModel(CoefficientModel):
    M0: np.ndarray
    R0: np.ndarray
    name: str = "constant"

    def __post_init__(self):
        self.M0 = np.asarray(self.M0, dtype=float)
        self.R0 = np.asarray(self.R0, dtype=float)
        n = self.M0.shape[0]
        if self.M0.shape != (n, n) or self.R0.shape != (n, n) or n % 3 or n < 6:
            raise ConfigError(f"constant model needs n x n matrices with n = 3(2+N_E), got {self.M0.shape}")
        self.n_e = n // 3 - 2

    def M(self, x, y):
        return np.broadcast_to(self.M0, (len(y),) + self.M0.shape).copy()

    def R(self, x, y):
        return np.broadcast_to(self.R0, (len(y),) + self.R0.shape).copy()

    def describe(self):
        return {"model": self.name, "n_e": self.n_e, "M": self.M0.tolist(), "R": self.R0.tolist()}


def _conductivity_pattern(n_e):
    """Unit weight on the E block only."""
    d = np.zeros(system_size(n_e))
    d[:3] = 1.0
    return np.diag(d)


@dataclass
class LaminateModel(CoefficientModel):
    """M = a(y_axis) I_n and R = b(y_axis) diag(I_3, 0): isotropic layered medium."""

    m_profile: object
    r_profile: object = None
    axis: int = 0
    n_e: int = 0
    name: str = "laminate"

    def __post_init__(self):
        if self.axis not in (0, 1, 2):
            raise ConfigError("lamination axis must be 0, 1 or 2")
        if self.r_profile is None:
            self.r_profile = Sinusoid(0.0)
        self._pattern = _conductivity_pattern(self.n_e)

    def lamination_axis(self):
        return self.axis

    def M(self, x, y):
        a = self.m_profile(np.asarray(y)[:, self.axis])
        return a[:, None, None] * np.eye(self.n)[None]

    def R(self, x, y):
        b = self.r_profile(np.asarray(y)[:, self.axis])
        return b[:, None, None] * self._pattern[None]

    def describe(self):
        return {"model": self.name, "n_e": self.n_e, "axis": self.axis,
                "m_profile": self.m_profile.describe(), "r_profile": self.r_profile.describe()}


@dataclass
class SmoothPeriodicModel(CoefficientModel):
    """Genuinely 3D periodic coefficients (N_E = 0), optionally slowly varying in x.

    The E block is anisotropic with a small off-diagonal coupling, mu varies in y_2 and the
    conductivity acts on E only. ``x_mod`` scales eps linearly in x_1.
    """

    eps0: float = 2.0
    mu0: float = 1.0
    sigma0: float = 1.0
    amp: float = 0.5
    x_mod: float = 0.0
    name: str = "smooth-periodic"

    def __post_init__(self):
        if not 0 <= self.amp < 1:
            raise ConfigError("smooth-periodic amplitude must lie in [0, 1)")
        self.n_e = 0
        self.x_independent = self.x_mod == 0.0

    def _eps(self, x, y):
        s = np.sin(TWO_PI * y[:, 0]) * np.cos(TWO_PI * y[:, 1]) + 0.5 * np.sin(TWO_PI * (y[:, 2] + y[:, 0]))
        scale = 1.0 + self.x_mod * float(np.asarray(x)[0])
        return self.eps0 * scale * (1.0 + self.amp * s / 1.5)

    def M(self, x, y):
        y = np.asarray(y)
        e = self._eps(x, y)
        mu = self.mu0 * (1.0 + 0.5 * self.amp * np.cos(TWO_PI * y[:, 1]))
        out = np.zeros((len(y), 6, 6))
        # anisotropic but symmetric E block
        out[:, 0, 0] = e
        out[:, 1, 1] = e * (1.0 + 0.25 * self.amp * np.sin(TWO_PI * y[:, 2]))
        out[:, 2, 2] = e
        out[:, 0, 1] = out[:, 1, 0] = 0.05 * self.amp * e * np.sin(TWO_PI * y[:, 0])
        for d in range(3, 6):
            out[:, d, d] = mu
        return out

    def R(self, x, y):
        y = np.asarray(y)
        s = self.sigma0 * 0.5 * (1.0 + np.cos(TWO_PI * y[:, 2])) * (1.0 + 0.5 * np.sin(TWO_PI * y[:, 0]))
        out = np.zeros((len(y), 6, 6))
        for d in range(3):
            out[:, d, d] = s
        return out

    def describe(self):
        return {"model": self.name, "n_e": 0, "eps0": self.eps0, "mu0": self.mu0,
                "sigma0": self.sigma0, "amp": self.amp, "x_mod": self.x_mod}


@dataclass
class DebyeModel(CoefficientModel):
    """Debye orientation polarisation (N_E = 1), symmetrised first-order form.

    With tau_D dP/dt = d_eps E - P, the unknown (E, P, H) satisfies M u' + R u + A u = g with
    M = diag(eps_inf, 1/d_eps, mu) and
    R = [[sigma + d_eps/tau_D, -1/tau_D], [-1/tau_D, 1/(tau_D d_eps)]] on the (E, P) blocks,
    which is symmetric positive semi-definite (determinant sigma / (tau_D d_eps)).
    eps_inf, d_eps and sigma are layered profiles along ``axis``.
    """

    eps_inf: object = field(default_factory=lambda: Sinusoid(2.0, 0.8))
    d_eps: object = field(default_factory=lambda: Sinusoid(1.0, 0.5, 0.25))
    sigma: object = field(default_factory=lambda: Sinusoid(0.5, 0.4, 0.1))
    tau_d: float = 1.0
    mu: float = 1.0
    axis: int = 0
    name: str = "debye"

    def __post_init__(self):
        self.n_e = 1
        if self.tau_d <= 0 or self.mu <= 0:
            raise ConfigError("Debye relaxation time and permeability must be positive")

    def lamination_axis(self):
        return self.axis

    def M(self, x, y):
        t = np.asarray(y)[:, self.axis]
        out = np.zeros((len(t), 9, 9))
        ei = self.eps_inf(t)
        de = self.d_eps(t)
        for d in range(3):
            out[:, d, d] = ei
            out[:, 3 + d, 3 + d] = 1.0 / de
            out[:, 6 + d, 6 + d] = self.mu
        return out

    def R(self, x, y):
        t = np.asarray(y)[:, self.axis]
        out = np.zeros((len(t), 9, 9))
        de = self.d_eps(t)
        sg = self.sigma(t)
        for d in range(3):
            out[:, d, d] = sg + de / self.tau_d
            out[:, d, 3 + d] = out[:, 3 + d, d] = -1.0 / self.tau_d
            out[:, 3 + d, 3 + d] = 1.0 / (self.tau_d * de)
        return out

    def describe(self):
        return {"model": self.name, "n_e": 1, "axis": self.axis, "eps_inf": self.eps_inf.describe(),
                "d_eps": self.d_eps.describe(), "sigma": self.sigma.describe(),
                "tau_d": self.tau_d, "mu": self.mu}


def isotropic_constant(n_e=0, eps=1.0, mu=1.0, sigma=0.0, m_p=1.0):
    """Block-diagonal constant model: eps I_3, m_p I_{3N_E}, mu I_3; R = sigma on E."""
    n = system_size(n_e)
    d = np.full(n, m_p, dtype=float)
    d[:3] = eps
    d[-3:] = mu
    r = np.zeros(n)
    r[:3] = sigma
    return ConstantModel(np.diag(d), np.diag(r))
