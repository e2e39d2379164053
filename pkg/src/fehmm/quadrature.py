"""Tensor Gauss rules and 1D Lagrange bases on the reference interval [0, 1]."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_1d(npts):
    """Gauss-Legendre points/weights mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def gauss_3d(npts):
    """Tensor Gauss rule on [0,1]^3, x-fastest ordering.

    Returns points (npts**3, 3) and weights (npts**3,).
    """
    x, w = gauss_1d(npts)
    gz, gy, gx = np.meshgrid(x, x, x, indexing="ij")
    wz, wy, wx = np.meshgrid(w, w, w, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    wts = (wx * wy * wz).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def lagrange_1d(order, t):
    """Values and derivatives of the equispaced 1D Lagrange basis at t.

    Returns two arrays of shape (len(t), order + 1).
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    nodes = np.linspace(0.0, 1.0, order + 1)
    vals = np.ones((t.size, order + 1))
    ders = np.zeros((t.size, order + 1))
    for a in range(order + 1):
        others = [b for b in range(order + 1) if b != a]
        denom = np.prod([nodes[a] - nodes[b] for b in others])
        for b in others:
            vals[:, a] *= t - nodes[b]
        for skip in others:
            term = np.ones(t.size)
            for b in others:
                if b != skip:
                    term *= t - nodes[b]
            ders[:, a] += term
        vals[:, a] /= denom
        ders[:, a] /= denom
    return vals, ders


def tensor_basis(order, pts):
    """Q_order tensor Lagrange basis on the unit cube at points (m, 3).

    Local node ordering is x-fastest over the (order+1)^3 lattice. Returns
    values (m, nloc) and reference gradients (m, 3, nloc).
    """
    pts = np.asarray(pts, dtype=float)
    vx, dx = lagrange_1d(order, pts[:, 0])
    vy, dy = lagrange_1d(order, pts[:, 1])
    vz, dz = lagrange_1d(order, pts[:, 2])
    # (m, c, b, a) -> flattened with a (x index) fastest
    val = np.einsum("mc,mb,ma->mcba", vz, vy, vx)
    gx = np.einsum("mc,mb,ma->mcba", vz, vy, dx)
    gy = np.einsum("mc,mb,ma->mcba", vz, dy, vx)
    gz = np.einsum("mc,mb,ma->mcba", dz, vy, vx)
    m = pts.shape[0]
    nloc = (order + 1) ** 3
    grads = np.stack([gx.reshape(m, nloc), gy.reshape(m, nloc), gz.reshape(m, nloc)], axis=1)
    return val.reshape(m, nloc), grads
