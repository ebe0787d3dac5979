"""Structured triangular meshes and barycentric projection onto sites."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import pdist

BARY_TOL = 1e-10


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    nodes: np.ndarray  # (N, 2)
    triangles: np.ndarray  # (T, 3) int, counter-clockwise
    boundary_margin: float = 0.0

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        tri = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError("nodes must be an (N, 2) array")
        if tri.ndim != 2 or tri.shape[1] != 3:
            raise MeshError("triangles must be a (T, 3) array")
        if tri.size and (tri.min() < 0 or tri.max() >= len(nodes)):
            raise MeshError("triangle references a node index out of range")
        nodes.setflags(write=False)
        tri.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tri)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def area(self) -> float:
        return float(np.abs(self.signed_areas()).sum())

    def save(self, path) -> None:
        """Write the plain-text mesh format (0-based triangle indices)."""
        lines = [f"nodes {self.n_nodes} triangles {self.n_triangles}"]
        lines += [f"{x!r} {y!r}" for x, y in self.nodes.tolist()]
        lines += [f"{i} {j} {k}" for i, j, k in self.triangles.tolist()]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Mesh":
        rows = Path(path).read_text().split("\n")
        head = rows[0].split()
        if len(head) != 4 or head[0] != "nodes" or head[2] != "triangles":
            raise MeshError(f"{path}: bad header {rows[0]!r}")
        n, t = int(head[1]), int(head[3])
        nodes = np.array([list(map(float, r.split())) for r in rows[1:1 + n]]).reshape(n, 2)
        tri = np.array([list(map(int, r.split())) for r in rows[1 + n:1 + n + t]]).reshape(t, 3)
        return cls(nodes, tri)


def build_mesh(sites, target_edge: float, extension: float | None = None) -> Mesh:
    """Right-triangle split of a regular lattice over the sites' bounding box.

    The box is grown by ``extension`` on every side (default: 0.2 times the
    larger box side). Lattice spacing along each axis is at most
    ``target_edge``.
    """
    sites = np.asarray(sites, dtype=float)
    if sites.ndim != 2 or sites.shape[1] != 2 or len(sites) < 3:
        raise MeshError("need at least 3 two-dimensional sites")
    if not target_edge > 0:
        raise MeshError("target_edge must be positive")
    lo = sites.min(axis=0)
    hi = sites.max(axis=0)
    width, height = hi - lo
    if width <= 0 or height <= 0:
        raise MeshError("sites have a degenerate (zero-area) bounding box")
    centered = sites - sites.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= 1e-12 * sv[0]:
        raise MeshError("sites are collinear")
    if extension is None:
        extension = 0.2 * max(width, height)
    if extension < 0:
        raise MeshError("extension must be non-negative")
    lo = lo - extension
    hi = hi + extension

    # 1e-9 slack keeps e.g. 1.0 / 0.5 from rounding up to 3 intervals
    nx = max(1, math.ceil((hi[0] - lo[0]) / target_edge - 1e-9))
    ny = max(1, math.ceil((hi[1] - lo[1]) / target_edge - 1e-9))
    xs = np.linspace(lo[0], hi[0], nx + 1)
    ys = np.linspace(lo[1], hi[1], ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    nodes = np.column_stack([gx.ravel(), gy.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    a = (j * (nx + 1) + i).ravel()
    b = a + 1
    c = a + nx + 1
    d = c + 1
    tri = np.empty((2 * a.size, 3), dtype=np.int64)
    tri[0::2] = np.column_stack([a, b, d])
    tri[1::2] = np.column_stack([a, d, c])
    return Mesh(nodes, tri, float(extension))


def barycentric(mesh: Mesh, points: np.ndarray, chunk: int = 256):
    """Containing triangle and barycentric weights for each point.

    Returns ``(tri_index, weights)``; ``tri_index`` is -1 for points outside
    the mesh.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    p = mesh.nodes[mesh.triangles]
    v0 = p[:, 0]
    e1 = p[:, 1] - v0
    e2 = p[:, 2] - v0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    lo = p.min(axis=1) - BARY_TOL
    hi = p.max(axis=1) + BARY_TOL

    out_tri = np.full(len(points), -1, dtype=np.int64)
    out_w = np.zeros((len(points), 3))
    for start in range(0, len(points), chunk):
        q = points[start:start + chunk]
        inbox = ((q[:, None, 0] >= lo[None, :, 0]) & (q[:, None, 0] <= hi[None, :, 0])
                 & (q[:, None, 1] >= lo[None, :, 1]) & (q[:, None, 1] <= hi[None, :, 1]))
        rows, cols = np.nonzero(inbox)
        d = q[rows] - v0[cols]
        l1 = (d[:, 0] * e2[cols, 1] - d[:, 1] * e2[cols, 0]) / det[cols]
        l2 = (e1[cols, 0] * d[:, 1] - e1[cols, 1] * d[:, 0]) / det[cols]
        l0 = 1.0 - l1 - l2
        ok = (l0 >= -BARY_TOL) & (l1 >= -BARY_TOL) & (l2 >= -BARY_TOL)
        rows, cols = rows[ok], cols[ok]
        w = np.column_stack([l0[ok], l1[ok], l2[ok]])
        # first containing triangle per point (rows are sorted by np.nonzero)
        first = np.unique(rows, return_index=True)[1]
        out_tri[start + rows[first]] = cols[first]
        out_w[start + rows[first]] = w[first]
    return out_tri, out_w


@dataclass(frozen=True)
class Projector:
    A: sp.csr_matrix  # (n_sites, n_nodes)

    @property
    def shape(self):
        return self.A.shape

    def __matmul__(self, other):
        return self.A @ other


def project(mesh: Mesh, sites) -> Projector:
    """Sparse barycentric interpolation matrix from mesh nodes to sites."""
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    tri, w = barycentric(mesh, sites)
    outside = np.flatnonzero(tri < 0)
    if outside.size:
        i = int(outside[0])
        raise MeshError(f"site {i} at {tuple(sites[i])} lies outside the mesh")
    w = np.clip(w, 0.0, None)
    w[w < 1e-12] = 0.0
    w /= w.sum(axis=1, keepdims=True)
    cols = mesh.triangles[tri]
    rows = np.repeat(np.arange(len(sites)), 3)
    A = sp.csr_matrix((w.ravel(), (rows, cols.ravel())), shape=(len(sites), mesh.n_nodes))
    A.eliminate_zeros()
    A.sort_indices()
    return Projector(A)


def max_domain_range(sites) -> float:
    """Largest pairwise Euclidean distance between sites."""
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    if len(sites) < 2:
        raise ValueError("need at least 2 sites")
    # the diameter is attained on the convex hull; avoid O(n^2) for big inputs
    if len(sites) > 2000:
        from scipy.spatial import ConvexHull

        sites = sites[ConvexHull(sites).vertices]
    return float(pdist(sites).max())
