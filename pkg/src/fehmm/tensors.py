"""HMM effective tensors M^H, R^H, G^H(t), J^H(t) from discrete correctors.

With Phi_i = e_i + grad w^M_i at the micro quadrature points:

    M^H_ij = avg M Phi_j . Phi_i            R^H_ij = avg R Phi_j . Phi_i
    G^H_ij(t) = avg R grad w^G_j(t) . Phi_i   J^H_ij(t) = avg R grad w^N_j(t) . Phi_i

The time-dependent entries are linear functionals of the corrector, so they are computed
on the fly as L @ w with L_i(w) = integral (R^T Phi_i) . grad w, without storing trajectories.
"""

import csv
import hashlib
import json
import logging
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvariantViolation
from .micro import (assemble_micro_forms, build_space, solve_cell_problems, solve_static_correctors,
                    unit_gradient)

log = logging.getLogger(__name__)

MAGIC = b"FEHMMTT1"
VERSION = 1
_HEADER = struct.Struct("<8sI64sIIII")
BOUND_TOL = 1e-9


def stable_hash(obj):
    """sha256 hex digest of a JSON-able description (sorted keys, fixed float repr)."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(blob.encode()).hexdigest()


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o)}")


# -- averages on one micro problem --------------------------------------------

def corrected_gradients(forms, w_M):
    """Phi_i at all quadrature points, shape (n, n_cells, n_q, n)."""
    s = forms.space
    return np.stack([unit_gradient(s, i) + s.grad_at_quad(w_M[i]) for i in range(forms.n)])


def _average_pairing(forms, C, phi):
    """avg C Phi_j . Phi_i for samples C (n_cells, n_q, n, n)."""
    cphi = np.einsum("eqab,jeqb->jeqa", C, phi, optimize=True)
    return np.einsum("q,ieqa,jeqa->ij", forms.space.quad_weights, phi, cphi, optimize=True)


def compute_M_H(forms, w_M, symmetrize=True, check=True):
    phi = corrected_gradients(forms, w_M)
    mh = _average_pairing(forms, forms.M_samples, phi)
    asym = float(np.max(np.abs(mh - mh.T)))
    if check and asym > 1e-12 * max(1.0, float(np.max(np.abs(mh)))):
        raise InvariantViolation(f"M^H is not symmetric before symmetrisation (gap {asym:.3e})")
    if symmetrize:
        mh = 0.5 * (mh + mh.T)
    if check:
        lam = float(np.linalg.eigvalsh(mh).min())
        if lam < forms.alpha - BOUND_TOL:
            raise InvariantViolation(f"min eigenvalue of M^H is {lam:.12g}, below alpha = {forms.alpha:.12g}")
    return mh


def compute_R_H(forms, w_M, check=True):
    rh = _average_pairing(forms, forms.R_samples, corrected_gradients(forms, w_M))
    if check:
        bound = 4.0 * forms.C_R * forms.C_M / forms.alpha
        if np.max(np.abs(rh)) > bound + BOUND_TOL:
            raise InvariantViolation(f"|R^H| = {np.max(np.abs(rh)):.6g} exceeds 4 C_R C_M / alpha = {bound:.6g}")
    return rh


def kernel_functionals(forms, w_M):
    """Matrix L (n, ndof) with (L w)_i = avg R grad w . Phi_i."""
    phi = corrected_gradients(forms, w_M)
    rt_phi = np.einsum("eqba,ieqb->ieqa", forms.R_samples, phi, optimize=True)
    return np.stack([-forms.space.load(rt_phi[i]) for i in range(forms.n)])


def compute_G_H(L, w_G):
    """G^H(t_m) from corrector values w_G (n_times, n, ndof) -> (n_times, n, n)."""
    return np.einsum("id,mjd->mij", L, w_G)


compute_J_H = compute_G_H


@dataclass
class MicroResult:
    """Effective tensors and diagnostics for one macro point."""

    M_H: np.ndarray
    R_H: np.ndarray
    G_H: np.ndarray
    J_H: np.ndarray
    alpha: float
    C_M: float
    C_R: float
    norms_M: np.ndarray
    norms_G: np.ndarray
    norms_N: np.ndarray
    n_minus_m_gap: float
    j0_gap: float
    correctors: object = field(default=None, repr=False)
    r_min_eig: float = 0.0  # smallest eigenvalue of sym(R) over the bound samples


def bound_sample_points(space, extra=24):
    """Quadrature points plus a uniform lattice used for conservative coefficient bounds."""
    g = (np.arange(extra) + 0.5) / extra
    z, y, x = np.meshgrid(g, g, g, indexing="ij")
    lattice = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
    return np.vstack([space.quad_points.reshape(-1, 3), lattice])


def micro_tensors(model, x, cells, order, times, solver="cg", check=True, keep_correctors=False):
    """Solve all cell problems at macro point x and return a MicroResult."""
    space = build_space(cells, order, model.n_components)
    forms = assemble_micro_forms(space, model, x, solver=solver, check=check)
    y_b = bound_sample_points(space)
    alpha, c_m, c_r = model.sample_bounds(np.asarray(x, float), y_b)
    Rs = model.R(np.asarray(x, float), y_b)
    r_min = float(np.linalg.eigvalsh(0.5 * (Rs + np.swapaxes(Rs, -1, -2))).min())
    forms.alpha = min(forms.alpha, alpha)
    forms.C_M = max(forms.C_M, c_m)
    forms.C_R = max(forms.C_R, c_r)
    n = forms.n
    times = np.asarray(times, dtype=float)
    G = np.zeros((len(times), n, n))
    J = np.zeros((len(times), n, n))
    w_M = solve_static_correctors(forms)
    L = kernel_functionals(forms, w_M)

    def observer(fam, j, m, w):
        (G if fam == "G" else J)[m, :, j] = L @ w

    cs = solve_cell_problems(forms, times, store_trajectories=keep_correctors, observer=observer,
                             check=check, w_M=w_M)
    mh = compute_M_H(forms, cs.w_M, check=check)
    rh = compute_R_H(forms, cs.w_M, check=check)
    j0_direct = -L @ cs.w_M.T
    j0_gap = float(np.max(np.abs(J[0] - j0_direct)))
    scale_n = max(1.0, float(np.max(np.abs(cs.w_M))))
    gap = float(np.max(np.abs(cs.w_N0 + cs.w_M))) / scale_n
    res = MicroResult(mh, rh, G, J, forms.alpha, forms.C_M, forms.C_R, cs.norms_M, cs.norms_G, cs.norms_N,
                      gap, j0_gap, cs if keep_correctors else None, r_min)
    if check:
        check_micro_result(res)
    return res


def micro_bounds(alpha, c_m, c_r):
    """Bounds for corrector norms and tensor entries on the unit cell."""
    return {
        "w_M": np.sqrt(c_m),
        "w_G0": 2.0 * (c_r / alpha) * np.sqrt(c_m),
        "w_N0": np.sqrt(c_m),
        "R_H": 4.0 * c_r * c_m / alpha,
        "G_H": 4.0 * (c_r / alpha) ** 2 * c_m,
        "J_H": 2.0 * c_r * c_m / alpha,
    }


def micro_checks(res):
    """Named (passed, detail) pairs for every corrector and tensor invariant."""
    b = micro_bounds(res.alpha, res.C_M, res.C_R)
    tol = BOUND_TOL
    out = {}
    out["corrector_M_bound"] = (res.norms_M.max() <= b["w_M"] + tol, f"{res.norms_M.max():.6g} <= {b['w_M']:.6g}")
    g0 = res.norms_G[0].max()
    out["corrector_G0_bound"] = (g0 <= b["w_G0"] + tol, f"{g0:.6g} <= {b['w_G0']:.6g}")
    n0 = res.norms_N[0].max()
    out["corrector_N0_bound"] = (n0 <= b["w_N0"] + tol, f"{n0:.6g} <= {b['w_N0']:.6g}")
    out["N0_equals_minus_M"] = (res.n_minus_m_gap <= 1e-10, f"gap {res.n_minus_m_gap:.3e}")
    out["J0_identity"] = (res.j0_gap <= 1e-10, f"gap {res.j0_gap:.3e}")
    for fam, norms in (("G", res.norms_G), ("N", res.norms_N)):
        inc = np.diff(norms, axis=0) - 1e-12 * norms[:-1]
        worst = float(inc.max()) if inc.size else -np.inf
        out[f"contraction_{fam}"] = (worst <= 1e-300, f"max increase {max(worst, 0.0):.3e}")
    lam = float(np.linalg.eigvalsh(res.M_H).min())
    out["M_H_min_eig"] = (lam >= res.alpha - tol, f"{lam:.6g} >= {res.alpha:.6g}")
    asym = float(np.max(np.abs(res.M_H - res.M_H.T)))
    out["M_H_symmetric"] = (asym <= 1e-12, f"max asymmetry {asym:.2e}")
    for name, arr in (("R_H", res.R_H), ("G_H", res.G_H), ("J_H", res.J_H)):
        v = float(np.max(np.abs(arr)))
        out[f"{name}_bound"] = (v <= b[name] + tol, f"{v:.6g} <= {b[name]:.6g}")
    if res.r_min_eig > 0.0:
        # SPD damping: the kernel decays in Frobenius norm on the grid
        for name, arr in (("G_H", res.G_H), ("J_H", res.J_H)):
            f = np.linalg.norm(arr, axis=(1, 2))
            inc = float(np.max(np.diff(f) - 1e-10 * f[:-1])) if f.size > 1 else -np.inf
            out[f"{name}_monotone"] = (inc <= 0.0, f"max increase {max(inc, 0.0):.2e}")
    rs = 0.5 * (res.R_H + res.R_H.T)
    rmin = float(np.linalg.eigvalsh(rs).min())
    out["R_H_psd"] = (rmin >= -1e-10 * max(1.0, np.abs(rs).max()), f"min eig {rmin:.3e}")
    return {k: (bool(v[0]), v[1]) for k, v in out.items()}


def check_micro_result(res):
    failed = {k: d for k, (ok, d) in micro_checks(res).items() if not ok}
    if failed:
        raise InvariantViolation("micro invariants violated: " + "; ".join(f"{k} ({d})" for k, d in failed.items()))


# -- table over macro quadrature points ----------------------------------------

@dataclass
class EffectiveTensorTable:
    """Unique tensors plus a point -> tensor index map.

    ``M`` and ``R`` have shape (U, n, n); ``G`` and ``J`` (U, n_times, n, n); ``index`` (Q,).
    """

    times: np.ndarray
    M: np.ndarray
    R: np.ndarray
    G: np.ndarray
    J: np.ndarray
    index: np.ndarray
    points: np.ndarray
    key: str = "0" * 64
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        u, n = self.M.shape[0], self.M.shape[1]
        nt = len(self.times)
        if self.R.shape != (u, n, n) or self.G.shape != (u, nt, n, n) or self.J.shape != (u, nt, n, n):
            raise ConfigError("inconsistent tensor table shapes")
        if len(self.index) != len(self.points):
            raise ConfigError("tensor table index and points disagree in length")
        if len(self.index) and (self.index.min() < 0 or self.index.max() >= u):
            raise ConfigError("tensor table index out of range")

    @property
    def n(self):
        return self.M.shape[1]

    @property
    def n_times(self):
        return len(self.times)

    @property
    def n_points(self):
        return len(self.index)

    @property
    def n_unique(self):
        return self.M.shape[0]

    @property
    def kernel_vanishes(self):
        return not np.any(self.G)

    @property
    def source_vanishes(self):
        return not np.any(self.J)

    def at(self, q):
        u = self.index[q]
        return self.M[u], self.R[u], self.G[u], self.J[u]

    def equals(self, other):
        return (self.key == other.key and all(np.array_equal(getattr(self, a), getattr(other, a))
                for a in ("times", "M", "R", "G", "J", "index", "points")))

    @classmethod
    def uniform(cls, M, R, times, points, G=None, J=None, key="0" * 64, meta=None):
        """Same tensors at every point; G/J default to zero."""
        M = np.asarray(M, float)
        n = M.shape[0]
        nt = len(times)
        G = np.zeros((nt, n, n)) if G is None else np.asarray(G, float)
        J = np.zeros((nt, n, n)) if J is None else np.asarray(J, float)
        return cls(np.asarray(times, float), M[None], np.asarray(R, float)[None], G[None], J[None],
                   np.zeros(len(points), dtype=np.int64), np.asarray(points, float), key, dict(meta or {}))


def _micro_job(args):
    model, x, cells, order, times, solver, check = args
    r = micro_tensors(model, x, cells, order, times, solver, check)
    r.correctors = None
    return r


def build_tensor_table(model, points, cells, order, times, key="0" * 64, jobs=1, solver="cg", check=True):
    """Tensor table for all macro quadrature points (one solve if the model is x-independent)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    times = np.asarray(times, dtype=float)
    if model.x_independent:
        xs, index = points[:1] if len(points) else np.zeros((1, 3)), np.zeros(len(points), dtype=np.int64)
    else:
        xs, index = points, np.arange(len(points), dtype=np.int64)
    args = [(model, x, tuple(cells), order, times, solver, check) for x in xs]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_micro_job, args))
    else:
        results = [_micro_job(a) for a in args]
    meta = {
        "order": order, "cells": list(cells), "h": 1.0 / max(cells),
        "tau": float(times[1] - times[0]) if len(times) > 1 else 0.0,
        "alpha": min(r.alpha for r in results), "C_M": max(r.C_M for r in results),
        "C_R": max(r.C_R for r in results),
        "norms_M_max": max(float(r.norms_M.max()) for r in results),
        "norms_G0_max": max(float(r.norms_G[0].max()) for r in results),
        "norms_N0_max": max(float(r.norms_N[0].max()) for r in results),
        "n_minus_m_gap": max(r.n_minus_m_gap for r in results),
        "model": model.describe(),
    }
    return EffectiveTensorTable(times, np.stack([r.M_H for r in results]), np.stack([r.R_H for r in results]),
                                np.stack([r.G_H for r in results]), np.stack([r.J_H for r in results]),
                                index, points, key, meta)


def table_bound_checks(table):
    """Bound checks on the whole table using the alpha, C_M, C_R recorded in its metadata."""
    m = table.meta
    b = micro_bounds(m["alpha"], m["C_M"], m["C_R"])
    lam = min(float(np.linalg.eigvalsh(Mu).min()) for Mu in table.M)
    return {
        "M_H_min_eig": (lam >= m["alpha"] - BOUND_TOL, lam, m["alpha"]),
        "R_H_bound": (np.abs(table.R).max() <= b["R_H"] + BOUND_TOL, float(np.abs(table.R).max()), b["R_H"]),
        "G_H_bound": (np.abs(table.G).max() <= b["G_H"] + BOUND_TOL, float(np.abs(table.G).max()), b["G_H"]),
        "J_H_bound": (np.abs(table.J).max() <= b["J_H"] + BOUND_TOL, float(np.abs(table.J).max()), b["J_H"]),
    }


# -- persistence --------------------------------------------------------------

def write_table(path, table):
    path = Path(path)
    n, nt, u, q = table.n, table.n_times, table.n_unique, table.n_points
    body = bytearray(_HEADER.pack(MAGIC, VERSION, table.key.encode("ascii"), n, nt, u, q))
    for arr, dt in ((table.times, "<f8"), (table.M, "<f8"), (table.R, "<f8"), (table.G, "<f8"),
                    (table.J, "<f8"), (table.index, "<i8"), (table.points, "<f8")):
        body += np.ascontiguousarray(arr, dtype=dt).tobytes()
    meta = json.dumps(table.meta, sort_keys=True, default=_json_default).encode()
    body += struct.pack("<I", len(meta)) + meta
    body += hashlib.sha256(body).digest()
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(bytes(body))
    os.replace(tmp, path)
    return path


def read_table(path):
    """Read a table file; raises ValueError on any corruption."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + 36 or hashlib.sha256(raw[:-32]).digest() != raw[-32:]:
        raise ValueError("checksum mismatch or truncated file")
    magic, version, key, n, nt, u, q = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC or version != VERSION:
        raise ValueError(f"bad magic/version {magic!r}/{version}")
    off = _HEADER.size

    def take(count, dt, shape):
        nonlocal off
        arr = np.frombuffer(raw, dtype=dt, count=count, offset=off).reshape(shape)
        off += arr.nbytes
        return arr.astype(dt[1:] if dt.startswith("<") else dt)

    times = take(nt, "<f8", (nt,))
    M = take(u * n * n, "<f8", (u, n, n))
    R = take(u * n * n, "<f8", (u, n, n))
    G = take(u * nt * n * n, "<f8", (u, nt, n, n))
    J = take(u * nt * n * n, "<f8", (u, nt, n, n))
    index = take(q, "<i8", (q,))
    points = take(3 * q, "<f8", (q, 3))
    (mlen,) = struct.unpack_from("<I", raw, off)
    meta = json.loads(raw[off + 4:off + 4 + mlen].decode())
    return EffectiveTensorTable(times, M, R, G, J, index, points, key.decode("ascii"), meta)


class TensorCache:
    """Directory of tensor tables keyed by scenario hash."""

    suffix = ".fett"

    def __init__(self, directory):
        self.dir = Path(directory)

    def path(self, key):
        return self.dir / f"{key}{self.suffix}"

    def put(self, table):
        self.dir.mkdir(parents=True, exist_ok=True)
        return write_table(self.path(table.key), table)

    def get(self, key):
        """Stored table for ``key`` or None (missing, corrupt or stale)."""
        p = self.path(key)
        if not p.exists():
            return None
        try:
            table = read_table(p)
        except (ValueError, struct.error, json.JSONDecodeError) as exc:
            log.warning("ignoring corrupt cache entry %s: %s", p, exc)
            return None
        if table.key != key:
            log.warning("ignoring stale cache entry %s", p)
            return None
        return table

    def get_or_build(self, key, builder):
        table = self.get(key)
        if table is not None:
            log.info("tensor cache hit %s", key[:12])
            return table, True
        table = builder()
        table.key = key
        self.put(table)
        return table, False

    def entries(self):
        if not self.dir.exists():
            return []
        return sorted(self.dir.glob(f"*{self.suffix}"))

    def clear(self):
        removed = 0
        for p in self.entries():
            p.unlink()
            removed += 1
        return removed


TENSOR_CSV_COLUMNS = ["tensor", "t", "i", "j", "M", "R", "G", "J", "bound_R", "bound_G", "bound_J"]


def export_csv(table, path):
    """One row per (unique tensor, time node, i, j)."""
    m = table.meta
    if {"alpha", "C_M", "C_R"} <= m.keys():
        b = micro_bounds(m["alpha"], m["C_M"], m["C_R"])
        bounds = (b["R_H"], b["G_H"], b["J_H"])
    else:
        bounds = (float("nan"),) * 3
    n = table.n
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TENSOR_CSV_COLUMNS)
        for u in range(table.n_unique):
            for k, t in enumerate(table.times):
                for i in range(n):
                    for j in range(n):
                        w.writerow([u, repr(float(t)), i, j, repr(float(table.M[u, i, j])),
                                    repr(float(table.R[u, i, j])), repr(float(table.G[u, k, i, j])),
                                    repr(float(table.J[u, k, i, j])), *map(repr, bounds)])
    return path
