"""Structured brick meshes for the macro domain and the periodic micro cell.

Numbering conventions (all x-fastest):

* vertex (i, j, k) -> i + (nx+1) * (j + (ny+1) * k)
* x-edges (i, j, k), i < nx            -> i + nx * (j + (ny+1) * k)
* y-edges (i, j, k), j < ny            -> off_y + i + (nx+1) * (j + ny * k)
* z-edges (i, j, k), k < nz            -> off_z + i + (nx+1) * (j + (ny+1) * k)

Edges are oriented along the positive coordinate axis, so orientation is
globally consistent without sign bookkeeping.
"""

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError

# local cell edges: 4 x-edges indexed by (dj, dk), then y-edges (di, dk), then z-edges (di, dj)
_LOCAL_PAIRS = ((0, 0), (1, 0), (0, 1), (1, 1))


def _as_triple(v, name, kind=int):
    arr = np.broadcast_to(np.asarray(v, dtype=kind), (3,)).copy()
    return arr


@dataclass(frozen=True)
class BrickMesh:
    cells_per_axis: tuple
    origin: tuple
    extent: tuple
    boundary_kind: str = "pec"  # "pec" or "periodic"

    def __post_init__(self):
        n = _as_triple(self.cells_per_axis, "cells_per_axis")
        if np.any(n < 1):
            raise ConfigError(f"cells_per_axis must be >= 1 per axis, got {tuple(n)}")
        ext = _as_triple(self.extent, "extent", float)
        if np.any(ext <= 0) or not np.all(np.isfinite(ext)):
            raise ConfigError(f"extent must be positive, got {tuple(ext)}")
        if self.boundary_kind not in ("pec", "periodic"):
            raise ConfigError(f"unknown boundary kind {self.boundary_kind!r}")
        object.__setattr__(self, "cells_per_axis", tuple(int(x) for x in n))
        object.__setattr__(self, "origin", tuple(float(x) for x in _as_triple(self.origin, "origin", float)))
        object.__setattr__(self, "extent", tuple(float(x) for x in ext))

    # -- sizes -------------------------------------------------------------
    @property
    def h(self):
        return np.array(self.extent) / np.array(self.cells_per_axis)

    @property
    def n_cells(self):
        nx, ny, nz = self.cells_per_axis
        return nx * ny * nz

    @property
    def n_vertices(self):
        nx, ny, nz = self.cells_per_axis
        return (nx + 1) * (ny + 1) * (nz + 1)

    @property
    def edge_counts(self):
        nx, ny, nz = self.cells_per_axis
        return (nx * (ny + 1) * (nz + 1), (nx + 1) * ny * (nz + 1), (nx + 1) * (ny + 1) * nz)

    @property
    def n_edges(self):
        return sum(self.edge_counts)

    @property
    def face_counts(self):
        nx, ny, nz = self.cells_per_axis
        return ((nx + 1) * ny * nz, nx * (ny + 1) * nz, nx * ny * (nz + 1))

    @property
    def n_faces(self):
        return sum(self.face_counts)

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    # -- geometry ----------------------------------------------------------
    @cached_property
    def vertices(self):
        nx, ny, nz = self.cells_per_axis
        axes = [self.origin[d] + self.h[d] * np.arange(n + 1) for d, n in enumerate((nx, ny, nz))]
        z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        v = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
        v.setflags(write=False)
        return v

    @cached_property
    def cell_index(self):
        """(n_cells, 3) integer lattice index (i, j, k) of each cell."""
        nx, ny, nz = self.cells_per_axis
        k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        idx = np.column_stack([i.ravel(), j.ravel(), k.ravel()])
        idx.setflags(write=False)
        return idx

    @cached_property
    def cell_origins(self):
        return np.asarray(self.origin) + self.cell_index * self.h

    def vertex_id(self, i, j, k):
        nx, ny, _ = self.cells_per_axis
        return i + (nx + 1) * (j + (ny + 1) * k)

    @cached_property
    def cells(self):
        """(n_cells, 8) vertex ids, local order x-fastest over {0,1}^3."""
        i, j, k = self.cell_index.T
        cols = [self.vertex_id(i + a, j + b, k + c) for c in (0, 1) for b in (0, 1) for a in (0, 1)]
        out = np.column_stack(cols)
        out.setflags(write=False)
        return out

    def edge_id(self, axis, i, j, k):
        nx, ny, nz = self.cells_per_axis
        ex, ey, _ = self.edge_counts
        if axis == 0:
            return i + nx * (j + (ny + 1) * k)
        if axis == 1:
            return ex + i + (nx + 1) * (j + ny * k)
        return ex + ey + i + (nx + 1) * (j + (ny + 1) * k)

    @cached_property
    def edges(self):
        """(n_edges, 2) vertex pairs (tail, head); head = tail + one step along the axis."""
        nx, ny, nz = self.cells_per_axis
        out = np.empty((self.n_edges, 2), dtype=np.int64)
        for axis in range(3):
            shape = [nx + 1, ny + 1, nz + 1]
            shape[axis] -= 1
            k, j, i = np.meshgrid(np.arange(shape[2]), np.arange(shape[1]), np.arange(shape[0]), indexing="ij")
            i, j, k = i.ravel(), j.ravel(), k.ravel()
            ids = self.edge_id(axis, i, j, k)
            step = [0, 0, 0]
            step[axis] = 1
            out[ids, 0] = self.vertex_id(i, j, k)
            out[ids, 1] = self.vertex_id(i + step[0], j + step[1], k + step[2])
        out.setflags(write=False)
        return out

    @cached_property
    def edge_axis(self):
        ex, ey, ez = self.edge_counts
        return np.repeat(np.arange(3), [ex, ey, ez])

    @cached_property
    def cell_edges(self):
        """(n_cells, 12) global edge ids; x-, then y-, then z-edges, each in _LOCAL_PAIRS order."""
        i, j, k = self.cell_index.T
        cols = []
        for a, b in _LOCAL_PAIRS:
            cols.append(self.edge_id(0, i, j + a, k + b))
        for a, b in _LOCAL_PAIRS:
            cols.append(self.edge_id(1, i + a, j, k + b))
        for a, b in _LOCAL_PAIRS:
            cols.append(self.edge_id(2, i + a, j + b, k))
        out = np.column_stack(cols)
        out.setflags(write=False)
        return out

    @cached_property
    def faces(self):
        """(n_faces, 4) vertex ids; x-normal faces, then y-normal, then z-normal."""
        nx, ny, nz = self.cells_per_axis
        blocks = []
        for axis in range(3):
            shape = [nx, ny, nz]
            shape[axis] += 1
            k, j, i = np.meshgrid(np.arange(shape[2]), np.arange(shape[1]), np.arange(shape[0]), indexing="ij")
            i, j, k = i.ravel(), j.ravel(), k.ravel()
            t1, t2 = [d for d in range(3) if d != axis]
            corners = []
            for b in (0, 1):
                for a in (0, 1):
                    off = [0, 0, 0]
                    off[t1] += a
                    off[t2] += b
                    corners.append(self.vertex_id(i + off[0], j + off[1], k + off[2]))
            blocks.append(np.column_stack(corners))
        out = np.vstack(blocks)
        out.setflags(write=False)
        return out

    @cached_property
    def face_axis(self):
        return np.repeat(np.arange(3), self.face_counts)

    @cached_property
    def boundary_tags(self):
        """Per-face tag: '' (interior), 'pec', or 'periodic-<axis>-<pair id>'."""
        tags = np.full(self.n_faces, "", dtype=object)
        nx, ny, nz = self.cells_per_axis
        n = (nx, ny, nz)
        start = 0
        for axis in range(3):
            shape = list(n)
            shape[axis] += 1
            k, j, i = np.meshgrid(np.arange(shape[2]), np.arange(shape[1]), np.arange(shape[0]), indexing="ij")
            pos = (i.ravel(), j.ravel(), k.ravel())[axis]
            count = int(np.prod(shape))
            ids = np.arange(start, start + count)
            on_bnd = (pos == 0) | (pos == n[axis])
            if self.boundary_kind == "pec":
                tags[ids[on_bnd]] = "pec"
            else:
                # pair id = index of the face within its boundary plane
                t = [d for d in range(3) if d != axis]
                tr = [(i.ravel(), j.ravel(), k.ravel())[d] for d in t]
                pair = tr[0] + n[t[0]] * tr[1]
                for f in ids[on_bnd]:
                    tags[f] = f"periodic-{axis}-{pair[f - start]}"
            start += count
        tags.setflags(write=False)
        return tags

    @cached_property
    def boundary_edge_mask(self):
        """True for edges lying in the domain boundary."""
        nx, ny, nz = self.cells_per_axis
        n = (nx, ny, nz)
        mask = np.zeros(self.n_edges, dtype=bool)
        for axis in range(3):
            shape = [nx + 1, ny + 1, nz + 1]
            shape[axis] -= 1
            k, j, i = np.meshgrid(np.arange(shape[2]), np.arange(shape[1]), np.arange(shape[0]), indexing="ij")
            idx = (i.ravel(), j.ravel(), k.ravel())
            ids = self.edge_id(axis, *idx)
            on = np.zeros(ids.size, dtype=bool)
            for d in range(3):
                if d != axis:
                    on |= (idx[d] == 0) | (idx[d] == n[d])
            mask[ids] = on
        mask.setflags(write=False)
        return mask

    def locate(self, points):
        """Cell id and local coordinates in [0,1]^3 for each point (m, 3)."""
        p = (np.asarray(points, dtype=float) - np.asarray(self.origin)) / self.h
        n = np.array(self.cells_per_axis)
        idx = np.clip(np.floor(p).astype(np.int64), 0, n - 1)
        local = p - idx
        cell = idx[:, 0] + n[0] * (idx[:, 1] + n[1] * idx[:, 2])
        return cell, local

    def write_vtk(self, path, point_data=None, cell_data=None, title="fehmm mesh"):
        """Legacy ASCII VTK structured grid."""
        path = Path(path)
        nx, ny, nz = self.cells_per_axis
        lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET STRUCTURED_GRID",
                 f"DIMENSIONS {nx + 1} {ny + 1} {nz + 1}", f"POINTS {self.n_vertices} double"]
        lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in self.vertices]
        for header, count, data in (("POINT_DATA", self.n_vertices, point_data),
                                    ("CELL_DATA", self.n_cells, cell_data)):
            if not data:
                continue
            lines.append(f"{header} {count}")
            for name, values in data.items():
                values = np.asarray(values, dtype=float)
                if values.ndim == 1:
                    lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                    lines += [f"{v:.17g}" for v in values]
                else:
                    lines.append(f"VECTORS {name} double")
                    lines += [" ".join(f"{c:.17g}" for c in row) for row in values]
        path.write_text("\n".join(lines) + "\n")
        return path


@dataclass(frozen=True)
class PeriodicMap:
    """Identification of opposite boundary vertices of a periodic brick mesh.

    ``pairs[axis]`` holds (slave, master) vertex pairs for that axis; ``master``
    is the composed map vertex -> representative (corner vertices end up at a
    single master).
    """

    mesh: BrickMesh
    pairs: tuple = field(repr=False)
    master: np.ndarray = field(repr=False)

    @property
    def n_free(self):
        return int(np.unique(self.master).size)

    def apply(self, vertex_ids):
        return self.master[np.asarray(vertex_ids)]

    @cached_property
    def free_index(self):
        """Vertex id -> contiguous index in [0, n_free)."""
        reps, inv = np.unique(self.master, return_inverse=True)
        return inv


def build_macro_mesh(cells_per_axis, origin=(0.0, 0.0, 0.0), extent=(1.0, 1.0, 1.0)):
    return BrickMesh(tuple(np.broadcast_to(cells_per_axis, (3,))), origin, extent, "pec")


def build_micro_mesh(cells_per_axis):
    """Unit-cube mesh with periodic identification on all three axis pairs."""
    n = np.broadcast_to(np.asarray(cells_per_axis, dtype=int), (3,))
    if np.any(n < 2):
        raise ConfigError(f"periodic micro mesh needs >= 2 cells per axis, got {tuple(n)}")
    mesh = BrickMesh(tuple(n), (0.0, 0.0, 0.0), (1.0, 1.0, 1.0), "periodic")
    nx, ny, nz = mesh.cells_per_axis
    k, j, i = np.meshgrid(np.arange(nz + 1), np.arange(ny + 1), np.arange(nx + 1), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    ids = mesh.vertex_id(i, j, k)
    pairs = []
    for axis, (idx, nn) in enumerate(((i, nx), (j, ny), (k, nz))):
        slaves = ids[idx == nn]
        step = [0, 0, 0]
        step[axis] = nn
        si, sj, sk = i[idx == nn], j[idx == nn], k[idx == nn]
        masters = mesh.vertex_id(si - step[0], sj - step[1], sk - step[2])
        pairs.append(np.column_stack([slaves, masters]))
    master = mesh.vertex_id(i % nx, j % ny, k % nz)
    master.setflags(write=False)
    return mesh, PeriodicMap(mesh, tuple(pairs), master)
