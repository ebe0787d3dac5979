"""SPDE approximation of a Matern(nu=1) field on a triangular mesh.

The precision follows the alpha=2 finite-element construction

    Q = t2 * (k^4 C + 2 k^2 G + G C^-1 G),    k = 1/rho,  t2 = 1/(4 pi k^2)

with C the lumped mass matrix and G the stiffness matrix, so the field has
unit marginal variance away from the (Neumann) boundary and correlation
(d/rho) K1(d/rho).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import linalg
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.special import k1

from .mesh import Mesh

log = logging.getLogger(__name__)

try:  # CHOLMOD is optional; the banded LAPACK path is always available
    from sksparse.cholmod import CholmodNotPositiveDefiniteError, analyze

    HAVE_CHOLMOD = True
except ImportError:  # pragma: no cover - depends on the environment
    HAVE_CHOLMOD = False


class FactorizationError(ArithmeticError):
    """Raised when a matrix handed to :func:`factorize` is not SPD."""


def matern_correlation(d, rho: float, r: float = 1.0, same_site=None):
    """Matern(nu=1) correlation with a nugget share ``1 - r``.

    ``d`` may be an array. ``same_site`` defaults to ``d == 0``.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    if not rho > 0:
        raise ValueError("rho must be positive")
    x = d / rho
    # x K1(x) = 1 + O(x^2 log x); below 1e-10 the correction is under 1e-19
    small = x < 1e-10
    with np.errstate(invalid="ignore", over="ignore"):
        spatial = np.where(small, 1.0, x * k1(np.where(small, 1.0, x)))
    # k1 underflows to 0 for x > ~700, x*k1 stays finite
    spatial = np.nan_to_num(spatial, nan=0.0)
    if same_site is None:
        same_site = d == 0
    out = r * spatial + (1.0 - r) * np.asarray(same_site, dtype=float)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class FemMatrices:
    C: sp.csc_matrix  # lumped (diagonal) mass
    G: sp.csc_matrix  # stiffness

    @property
    def c_diag(self) -> np.ndarray:
        return self.C.diagonal()


def assemble_fem(mesh: Mesh) -> FemMatrices:
    """Piecewise-linear mass (lumped) and stiffness matrices."""
    p = mesh.nodes[mesh.triangles]
    area2 = mesh.signed_areas() * 2.0
    bad = np.flatnonzero(np.abs(area2) < 1e-14)
    if bad.size:
        raise ValueError(f"triangle {int(bad[0])} is degenerate (zero area)")
    area = np.abs(area2) / 2.0
    # edge opposite each vertex, rotated by 90 degrees, is area2 * grad(phi)
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    K = np.einsum("tid,tjd->tij", e, e) / (4.0 * area[:, None, None])

    n = mesh.n_nodes
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    G = sp.csc_matrix((K.ravel(), (rows, cols)), shape=(n, n))
    G = ((G + G.T) * 0.5).tocsc()
    c = np.bincount(mesh.triangles.ravel(), weights=np.repeat(area / 3.0, 3), minlength=n)
    return FemMatrices(sp.diags(c, format="csc"), G)


def _structure(M) -> sp.csc_matrix:
    M = sp.csc_matrix(M, copy=True)
    M.data[:] = 1.0
    return M


class PrecisionOperator:
    """Maps a range ``rho`` to the sparse precision ``Q_rho``.

    Every returned matrix shares one sparsity pattern (the structural union
    of C, G and G C^-1 G), so symbolic factorizations can be reused.
    ``scaling`` is ``"analytic"`` or ``"empirical"``; the latter further
    rescales Q so the median node variance equals 1 (dense inverse, small
    meshes only).
    """

    def __init__(self, fem: FemMatrices, scaling: str = "analytic"):
        if scaling not in ("analytic", "empirical"):
            raise ValueError(f"unknown scaling {scaling!r}")
        self.fem = fem
        self.scaling = scaling
        C, G = fem.C, fem.G
        gcg = G @ sp.diags(1.0 / fem.c_diag) @ G
        sC, sG = _structure(C), _structure(G)
        pat = _structure(sC + sG + sG @ sG).tocsc()
        pat.sort_indices()
        self.pattern = pat
        n = pat.shape[0]
        coo = pat.tocoo()
        self._keys = coo.col.astype(np.int64) * n + coo.row
        order = np.argsort(self._keys, kind="stable")
        assert np.all(order == np.arange(len(order)))  # csc order == key order
        self._c = self.embed(C)
        self._g = self.embed(G)
        self._gcg = self.embed(gcg)

    @classmethod
    def from_mesh(cls, mesh: Mesh, scaling: str = "analytic") -> "PrecisionOperator":
        return cls(assemble_fem(mesh), scaling)

    @property
    def n(self) -> int:
        return self.pattern.shape[0]

    def embed(self, M) -> np.ndarray:
        """Data vector of ``M`` laid out on the shared pattern."""
        M = sp.coo_matrix(M)
        n = self.n
        keys = M.col.astype(np.int64) * n + M.row
        idx = np.searchsorted(self._keys, keys)
        idx = np.minimum(idx, len(self._keys) - 1)
        if not np.all(self._keys[idx] == keys):
            raise ValueError("matrix has entries outside the precision pattern")
        out = np.zeros(len(self._keys))
        np.add.at(out, idx, M.data)
        return out

    def with_data(self, data: np.ndarray) -> sp.csc_matrix:
        return sp.csc_matrix((data, self.pattern.indices, self.pattern.indptr),
                             shape=self.pattern.shape)

    def data(self, rho: float) -> np.ndarray:
        if not rho > 0:
            raise ValueError("rho must be positive")
        kappa = 1.0 / rho
        t2 = 1.0 / (4.0 * math.pi * kappa**2)
        d = t2 * (kappa**4 * self._c + 2.0 * kappa**2 * self._g + self._gcg)
        if self.scaling == "empirical":
            v = np.diag(np.linalg.inv(self.with_data(d).toarray()))
            d = d * float(np.median(v))
        return d

    def __call__(self, rho: float) -> sp.csc_matrix:
        return build_precision(self, rho)


def build_precision(op: PrecisionOperator, rho: float) -> sp.csc_matrix:
    return op.with_data(op.data(rho))


def _banded_symbolic(Q: sp.csc_matrix):
    """RCM ordering, bandwidth and scatter indices into LAPACK upper band storage.

    Computed from the stored structure, so explicit zeros count as entries.
    """
    n = Q.shape[0]
    struct = sp.csc_matrix((np.ones(len(Q.data)), Q.indices, Q.indptr), shape=Q.shape)
    perm = reverse_cuthill_mckee(struct, symmetric_mode=True)
    iperm = np.argsort(perm)
    col = np.repeat(np.arange(n), np.diff(Q.indptr))
    rows, cols = iperm[Q.indices], iperm[col]
    keep = rows <= cols
    bw = int(np.max(cols[keep] - rows[keep])) if keep.any() else 0
    flat = (bw + rows[keep] - cols[keep]) * n + cols[keep]
    return perm, bw, keep, flat


class SparseFactor:
    """Cholesky factor of a sparse SPD matrix.

    ``backend`` is ``"cholmod"`` (scikit-sparse, AMD ordering) or
    ``"banded"`` (reverse Cuthill-McKee ordering, LAPACK banded Cholesky). ``None`` picks CHOLMOD when installed.
    """

    def __init__(self, Q, backend: str | None = None, symbolic=None):
        Q = sp.csc_matrix(Q)
        if Q.shape[0] != Q.shape[1]:
            raise FactorizationError("matrix is not square")
        self.n = Q.shape[0]
        if backend is None:
            backend = "cholmod" if HAVE_CHOLMOD else "banded"
        if backend == "cholmod" and not HAVE_CHOLMOD:
            raise ImportError("scikit-sparse is not installed")
        self.backend = backend
        if backend == "cholmod":
            self._init_cholmod(Q, symbolic)
        elif backend == "banded":
            self._init_banded(Q, symbolic)
        else:
            raise ValueError(f"unknown backend {backend!r}")

    # -- CHOLMOD --------------------------------------------------------
    def _init_cholmod(self, Q, symbolic):
        if symbolic is None:
            symbolic = analyze(Q, mode="simplicial", ordering_method="amd")
        try:
            self._f = symbolic.cholesky(Q)
        except CholmodNotPositiveDefiniteError as exc:
            raise FactorizationError(str(exc)) from exc
        self.symbolic = symbolic
        with np.errstate(invalid="ignore", divide="ignore"):
            self._logdet = float(self._f.logdet())
        if not np.isfinite(self._logdet):
            raise FactorizationError("non-finite log-determinant")

    # -- banded LAPACK --------------------------------------------------
    def _init_banded(self, Q, symbolic):
        if symbolic is None:
            symbolic = _banded_symbolic(Q)
        perm, bw, keep, flat = symbolic
        if len(Q.data) != len(keep):
            raise ValueError("matrix pattern differs from the symbolic analysis")
        ab = np.zeros((bw + 1) * self.n)
        ab[flat] = Q.data[keep]
        try:
            self._U = linalg.cholesky_banded(ab.reshape(bw + 1, self.n), lower=False,
                                             check_finite=False)
        except linalg.LinAlgError as exc:
            raise FactorizationError(str(exc)) from exc
        self.symbolic = symbolic
        self._perm = perm
        self._iperm = np.argsort(perm)
        self._bw = bw
        self._logdet = 2.0 * float(np.log(self._U[bw]).sum())

    # -- shared API -----------------------------------------------------
    def logdet(self) -> float:
        return self._logdet

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.backend == "cholmod":
            return self._f(b)
        x = linalg.cho_solve_banded((self._U, False), b[self._perm], check_finite=False)
        return x[self._iperm]

    def solve_Lt(self, z):
        """``x`` with ``L' x = z`` in original ordering, where ``Q = L L'``.

        For standard normal ``z`` the result has covariance ``Q^-1``.
        """
        z = np.asarray(z, dtype=float)
        if self.backend == "cholmod":
            x = self._f.solve_Lt(z, use_LDLt_decomposition=False)
            return self._f.apply_Pt(x)
        # banded: Qp = U'U, so U is the transposed lower factor
        x = linalg.solve_banded((0, self._bw), self._U, z, check_finite=False)
        return x[self._iperm]

    def sample(self, rng, mean=None):
        """One draw from N(mean, Q^-1)."""
        x = self.solve_Lt(rng.standard_normal(self.n))
        return x if mean is None else x + mean


def factorize(Q, backend: str | None = None, symbolic=None) -> SparseFactor:
    return SparseFactor(Q, backend=backend, symbolic=symbolic)


def sample_gmrf(factor: SparseFactor, rng) -> np.ndarray:
    return factor.sample(rng)
