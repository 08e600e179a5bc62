"""Assembly of stiffness, mass and load terms, sparse row access, and SPAI.

The bilinear form is a(u, v) = diffusion * int grad(u).grad(v) + reaction *
int u v. 1D element matrices are integrated exactly in rational arithmetic
once per degree, so interior stiffness entries come out bit-exact (2/h on
the diagonal, -1/h off it, for the k=1 pure-diffusion case). Loads use
Gauss-Legendre quadrature with enough points to be exact for polynomial
data up to degree 8.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import polynomial as npoly

from .errors import ValidationError
from .mesh import BasisSpec, Mesh

MAX_POLY_DEGREE = 8
_CALLABLE_QUAD_POINTS = 12


# ---------------------------------------------------------------------------
# exact reference elements (1D, degree 1..3)

def _frac_polymul(a, b):
    out = [Fraction(0)] * (len(a) + len(b) - 1)
    for i, ai in enumerate(a):
        for j, bj in enumerate(b):
            out[i + j] += ai * bj
    return out


def _frac_polyder(a):
    return [i * a[i] for i in range(1, len(a))] or [Fraction(0)]


def _frac_polyint01(a):
    # integral over the reference interval [0, 1]
    return sum(c / (i + 1) for i, c in enumerate(a))


@lru_cache(maxsize=None)
def _reference_lagrange(k: int):
    """Coefficient lists (low->high, Fractions) of the k+1 nodal polynomials
    on [0,1] with nodes j/k."""
    ts = [Fraction(j, k) for j in range(k + 1)]
    polys = []
    for j in range(k + 1):
        p = [Fraction(1)]
        for m in range(k + 1):
            if m == j:
                continue
            denom = ts[j] - ts[m]
            p = _frac_polymul(p, [-ts[m] / denom, Fraction(1) / denom])
        polys.append(p)
    return polys


@lru_cache(maxsize=None)
def _reference_matrices(k: int):
    """Exact reference stiffness and mass matrices on [0,1].

    On a physical element of length h the contributions are K/h * diffusion
    and M*h * reaction.
    """
    polys = _reference_lagrange(k)
    m = k + 1
    kmat = np.empty((m, m))
    mmat = np.empty((m, m))
    for a in range(m):
        for b in range(m):
            kmat[a, b] = float(_frac_polyint01(_frac_polymul(_frac_polyder(polys[a]), _frac_polyder(polys[b]))))
            mmat[a, b] = float(_frac_polyint01(_frac_polymul(polys[a], polys[b])))
    return kmat, mmat


@lru_cache(maxsize=None)
def _gauss01(p: int):
    """p-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(p)
    return (x + 1.0) / 2.0, w / 2.0


@lru_cache(maxsize=None)
def _reference_values_at(k: int, p: int):
    """Nodal basis values at the p Gauss points of [0, 1]: (k+1, p) array."""
    xs, _ = _gauss01(p)
    polys = _reference_lagrange(k)
    vals = np.empty((k + 1, p))
    for j, poly in enumerate(polys):
        vals[j] = npoly.polyval(xs, [float(c) for c in poly])
    return vals


@lru_cache(maxsize=None)
def _reference_deriv_values_at(k: int, order: int, p: int):
    """order-th reference derivative of the nodal basis at Gauss points."""
    xs, _ = _gauss01(p)
    polys = _reference_lagrange(k)
    vals = np.empty((k + 1, p))
    for j, poly in enumerate(polys):
        q = poly
        for _ in range(order):
            q = _frac_polyder(q)
        vals[j] = npoly.polyval(xs, [float(c) for c in q])
    return vals


@lru_cache(maxsize=None)
def _duffy_rule(p: int):
    """Quadrature on the reference triangle (0,0),(1,0),(0,1) via the square
    collapse x=u(1-v), y=uv; exact for total degree <= 2p-2 polynomials."""
    xu, wu = _gauss01(p)
    xv, wv = _gauss01(p)
    u = np.repeat(xu, p)
    v = np.tile(xv, p)
    w = np.repeat(wu, p) * np.tile(wv, p) * u  # Jacobian u
    return np.column_stack([u * (1.0 - v), u * v]), w


# ---------------------------------------------------------------------------
# types

@dataclass(frozen=True)
class BilinearForm:
    """Elliptic form a(u,v) = diffusion*int grad.grad + reaction*int u v."""

    diffusion: float = 1.0
    reaction: float = 0.0

    def __post_init__(self):
        if self.diffusion <= 0:
            raise ValidationError("diffusion coefficient must be > 0")
        if self.reaction < 0:
            raise ValidationError("reaction coefficient must be >= 0")


class SparseSymMatrix:
    """Symmetric sparse matrix in CSR form with sorted column indices.

    Immutable by convention. ``s`` is the maximum number of nonzeros per row.
    """

    def __init__(self, matrix):
        csr = sp.csr_array(matrix)
        csr.sort_indices()
        if csr.shape[0] != csr.shape[1]:
            raise ValidationError(f"matrix must be square, got {csr.shape}")
        scale = max(1.0, abs(csr.data).max() if csr.nnz else 0.0)
        asym = abs((csr - csr.T)).max() if csr.nnz else 0.0
        if asym > 1e-14 * scale:
            raise ValidationError(f"matrix is not symmetric (asymmetry {asym:.3e})")
        self._csr = csr
        self.n = csr.shape[0]
        counts = np.diff(csr.indptr)
        self.s = int(counts.max()) if len(counts) else 0

    @classmethod
    def from_upper_coo(cls, n, rows, cols, vals):
        """Build from upper-triangle COO entries (i <= j), mirroring the
        strict upper part so (i,j) and (j,i) are bit-identical."""
        rows = np.asarray(rows, dtype=int)
        cols = np.asarray(cols, dtype=int)
        vals = np.asarray(vals, dtype=float)
        if np.any(rows > cols):
            raise ValidationError("from_upper_coo expects entries with i <= j")
        upper = sp.coo_array((vals, (rows, cols)), shape=(n, n)).tocsr()
        upper.sum_duplicates()
        strict = sp.triu(upper, k=1)
        full = upper + strict.T
        return cls(full)

    @classmethod
    def from_dense(cls, a):
        a = np.asarray(a, dtype=float)
        return cls(sp.csr_array(a))

    @classmethod
    def identity(cls, n):
        return cls(sp.identity(n, format="csr"))

    @property
    def nnz(self):
        return self._csr.nnz

    @property
    def csr(self):
        return self._csr

    def matvec(self, x):
        return self._csr @ np.asarray(x, dtype=float)

    def __matmul__(self, x):
        return self.matvec(x)

    def row_nonzeros(self, r: int):
        """(columns, values) of row r, sorted by column."""
        if not 0 <= r < self.n:
            raise ValidationError(f"row {r} out of range [0, {self.n})")
        lo, hi = self._csr.indptr[r], self._csr.indptr[r + 1]
        return self._csr.indices[lo:hi], self._csr.data[lo:hi]

    def entry(self, i: int, j: int) -> float:
        cols, vals = self.row_nonzeros(i)
        hit = np.nonzero(cols == j)[0]
        return float(vals[hit[0]]) if len(hit) else 0.0

    def to_dense(self):
        return self._csr.toarray()

    def max_abs(self) -> float:
        return float(abs(self._csr.data).max()) if self.nnz else 0.0

    def pattern(self):
        out = self._csr.copy()
        out.data = np.ones_like(out.data)
        return out

    def to_matrix_market(self, path):
        from scipy.io import mmwrite

        mmwrite(path, sp.coo_array(self._csr), symmetry="symmetric")


@dataclass(frozen=True)
class LoadVector:
    """Dense load vector over the active dofs: entries int f phi_i."""

    n: int
    values: np.ndarray

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("index,value\n")
            for i, v in enumerate(self.values):
                f.write(f"{i},{v!r}\n")


# ---------------------------------------------------------------------------
# assembly

def _check_pair(mesh: Mesh, spec: BasisSpec):
    expected_nodes = mesh.n * spec.k + 1 if mesh.dimension == 1 else mesh.n_vertices
    if spec.n_nodes != expected_nodes or len(spec.element_nodes) != mesh.n_elements:
        raise ValidationError("basis was not built for this mesh")


def _assemble_bilinear(mesh: Mesh, spec: BasisSpec, diffusion: float, reaction: float) -> SparseSymMatrix:
    rows, cols, vals = [], [], []
    if mesh.dimension == 1:
        kref, mref = _reference_matrices(spec.k)
        h = mesh.h
        local = diffusion * kref / h + reaction * mref * h
        for e in range(mesh.n_elements):
            gids = spec.node_dofs[spec.element_nodes[e]]
            for a in range(spec.k + 1):
                ia = gids[a]
                if ia < 0:
                    continue
                for b in range(a, spec.k + 1):
                    ib = gids[b]
                    if ib < 0:
                        continue
                    i, j = (ia, ib) if ia <= ib else (ib, ia)
                    rows.append(i)
                    cols.append(j)
                    vals.append(local[a, b])
    else:
        area = 0.5 / (mesh.n * mesh.n)
        for e in range(mesh.n_elements):
            tri = spec.element_nodes[e]
            pts = mesh.vertices[tri]
            # gradients of the barycentric functions
            g = np.empty((3, 2))
            for a in range(3):
                pb, pc = pts[(a + 1) % 3], pts[(a + 2) % 3]
                g[a] = np.array([pb[1] - pc[1], pc[0] - pb[0]]) / (2.0 * area)
            gids = spec.node_dofs[tri]
            for a in range(3):
                ia = gids[a]
                if ia < 0:
                    continue
                for b in range(a, 3):
                    ib = gids[b]
                    if ib < 0:
                        continue
                    val = diffusion * float(g[a] @ g[b]) * area
                    val += reaction * area / 12.0 * (2.0 if a == b else 1.0)
                    i, j = (ia, ib) if ia <= ib else (ib, ia)
                    rows.append(i)
                    cols.append(j)
                    vals.append(val)
    return SparseSymMatrix.from_upper_coo(spec.n_dofs, rows, cols, vals)


def assemble_stiffness(mesh: Mesh, spec: BasisSpec, form: BilinearForm) -> SparseSymMatrix:
    """Assemble M with M_ij = a(phi_i, phi_j); symmetric positive semidefinite."""
    _check_pair(mesh, spec)
    return _assemble_bilinear(mesh, spec, form.diffusion, form.reaction)


def assemble_gram(mesh: Mesh, spec: BasisSpec) -> SparseSymMatrix:
    """Assemble the Gram (mass) matrix W_ij = int phi_i phi_j."""
    _check_pair(mesh, spec)
    return _assemble_bilinear(mesh, spec, 0.0, 1.0)


def poly_degree(coeffs) -> int:
    c = np.asarray(coeffs, dtype=float)
    if c.ndim == 1:
        nz = np.nonzero(c)[0]
        return int(nz[-1]) if len(nz) else 0
    nz = np.nonzero(c)
    if len(nz[0]) == 0:
        return 0
    return int(max(i + j for i, j in zip(*nz)))


def _as_evaluator(mesh: Mesh, f):
    """Normalize polynomial coefficients or a callable into a point evaluator
    plus the quadrature order needed for load integrals to be exact."""
    if callable(f):
        return f, _CALLABLE_QUAD_POINTS
    c = np.asarray(f, dtype=float)
    deg = poly_degree(c)
    if deg > MAX_POLY_DEGREE:
        raise ValidationError(f"polynomial degree {deg} beyond supported maximum {MAX_POLY_DEGREE}")
    if mesh.dimension == 1:
        if c.ndim != 1:
            raise ValidationError("1D data must be a flat coefficient list")
        return (lambda x: npoly.polyval(x, c)), 0
    if c.ndim == 1:
        c = c.reshape(-1, 1)
    return (lambda x, y: npoly.polyval2d(x, y, c)), 0


def assemble_load(mesh: Mesh, spec: BasisSpec, f) -> LoadVector:
    """Load vector with entries int f phi_i over the active dofs.

    ``f`` is given as polynomial coefficients (1D: flat list, low order
    first; 2D: coefficient matrix c[i][j] of x^i y^j, total degree <= 8) or
    as a callable sampled by quadrature.
    """
    _check_pair(mesh, spec)
    ev, extra = _as_evaluator(mesh, f)
    out = np.zeros(spec.n_dofs)
    if mesh.dimension == 1:
        deg = extra if extra else poly_degree(f)
        p = max(spec.k + 1, (spec.k + deg) // 2 + 2)
        xs, ws = _gauss01(p)
        basis_vals = _reference_values_at(spec.k, p)
        h = mesh.h
        for e in range(mesh.n_elements):
            x0 = mesh.vertices[mesh.elements[e, 0], 0]
            fq = ev(x0 + h * xs)
            gids = spec.node_dofs[spec.element_nodes[e]]
            contrib = h * basis_vals @ (ws * fq)
            for a, ia in enumerate(gids):
                if ia >= 0:
                    out[ia] += contrib[a]
    else:
        deg = extra if extra else poly_degree(f)
        p = max(2, (deg + 1) // 2 + 2)
        ref_pts, ref_w = _duffy_rule(p)
        area = 0.5 / (mesh.n * mesh.n)
        for e in range(mesh.n_elements):
            tri = spec.element_nodes[e]
            pts = mesh.vertices[tri]
            # affine map from the reference triangle
            xq = pts[0, 0] + ref_pts[:, 0] * (pts[1, 0] - pts[0, 0]) + ref_pts[:, 1] * (pts[2, 0] - pts[0, 0])
            yq = pts[0, 1] + ref_pts[:, 0] * (pts[1, 1] - pts[0, 1]) + ref_pts[:, 1] * (pts[2, 1] - pts[0, 1])
            fq = ev(xq, yq)
            lam = np.column_stack([1.0 - ref_pts[:, 0] - ref_pts[:, 1], ref_pts[:, 0], ref_pts[:, 1]])
            gids = spec.node_dofs[tri]
            contrib = 2.0 * area * (lam * (ref_w * fq)[:, None]).sum(axis=0)
            for a, ia in enumerate(gids):
                if ia >= 0:
                    out[ia] += contrib[a]
    return LoadVector(spec.n_dofs, out)


def row_oracle(matrix: SparseSymMatrix, r: int, i: int):
    """(column, value) of the i-th nonzero of row r (i is 1-based, column
    order); None beyond the row's nonzero count."""
    cols, vals = matrix.row_nonzeros(r)
    if i < 1 or i > len(cols):
        return None
    return int(cols[i - 1]), float(vals[i - 1])


def spai_preconditioner(M: SparseSymMatrix, pattern=None) -> SparseSymMatrix:
    """Sparse approximate inverse: minimize ||PM - I||_F row by row over a
    fixed sparsity pattern (default: the pattern of M), then symmetrize.

    Rows whose local least-squares problem is rank deficient fall back to
    the Jacobi entry 1/M_ii.
    """
    A = M.csr
    if pattern is None:
        pat = M.pattern()
    elif isinstance(pattern, SparseSymMatrix):
        pat = pattern.pattern()
    else:
        pat = sp.csr_array(pattern)
    n = M.n
    rows, cols, vals = [], [], []
    indptr, indices = A.indptr, A.indices
    for i in range(n):
        J = pat.indices[pat.indptr[i]:pat.indptr[i + 1]]
        if len(J) == 0:
            J = np.array([i])
        # by symmetry, column support of A[:, j] equals row support of A[j, :]
        I = np.unique(np.concatenate([indices[indptr[j]:indptr[j + 1]] for j in J]))
        Asub = A[I][:, J].toarray()
        e = (I == i).astype(float)
        sol, _, rank, _ = np.linalg.lstsq(Asub, e, rcond=None)
        if rank < len(J) or not np.all(np.isfinite(sol)):
            mii = M.entry(i, i)
            if mii == 0.0:
                raise ValidationError(f"cannot precondition: zero diagonal at row {i}")
            rows.append(i)
            cols.append(i)
            vals.append(1.0 / mii)
            continue
        for j, v in zip(J, sol):
            rows.append(i)
            cols.append(int(j))
            vals.append(float(v))
    P = sp.coo_array((vals, (rows, cols)), shape=(n, n)).tocsr()
    return SparseSymMatrix((P + P.T) * 0.5)
