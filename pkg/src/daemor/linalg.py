"""Dense and sparse linear-algebra kernels.

Everything here is a thin, checked layer over LAPACK/SuperLU: shifted solves,
Gram-Schmidt with deflation, small Lyapunov equations and pencil spectra.

Lyapunov convention used throughout the package::

    a @ x + x @ a.T + q = 0
"""
import warnings
from typing import NamedTuple

import numpy as np
import scipy.linalg as spla
import scipy.sparse as sps
import scipy.sparse.linalg as sppla

from daemor.errors import NonUniqueSolution, SingularMatrix, SingularPencil

PIVOT_TOL = 1e-13
DENSE_LIMIT = 500
DEFLATION_TOL = 1e-10


def as_dense(m):
    """Return `m` as a 2D ndarray (sparse input is densified)."""
    if sps.issparse(m):
        return m.toarray()
    return np.atleast_2d(np.asarray(m))


class LuFactors:
    """LU factorization of a square matrix with a uniform solve interface.

    Rows are equilibrated (``D m = L U`` with ``D`` the inverse row maxima)
    before factorization. Dense LAPACK ``getrf`` is used below
    :data:`DENSE_LIMIT`, SuperLU above. Construct through :func:`lu_factor`.
    """

    def __init__(self, shape, dtype, row_scale, dense=None, sparse=None, min_pivot=None):
        self.shape = shape
        self.dtype = dtype
        self.row_scale = row_scale
        self._dense = dense
        self._sparse = sparse
        self.min_pivot = min_pivot

    def _raw_solve(self, b, trans):
        if self._dense is not None:
            return spla.lu_solve(self._dense, b, trans=1 if trans else 0, check_finite=False)
        return self._sparse.solve(np.asarray(b, dtype=self.dtype), trans='T' if trans else 'N')

    def solve(self, b, trans=False):
        """Solve ``m x = b`` (or ``m^T x = b`` with ``trans=True``, no conjugation)."""
        b = np.asarray(b)
        if np.iscomplexobj(b) and not np.issubdtype(self.dtype, np.complexfloating):
            return self.solve(b.real, trans) + 1j * self.solve(b.imag, trans)
        d = self.row_scale if b.ndim == 1 else self.row_scale[:, None]
        if trans:
            return d * self._raw_solve(b, True)
        return self._raw_solve(d * b, False)


def lu_factor(m, pivot_tol=PIVOT_TOL):
    """Factorize a square dense or sparse matrix.

    Parameters
    ----------
    m
        Square matrix (ndarray or scipy sparse).
    pivot_tol
        After row equilibration, a pivot smaller than ``pivot_tol`` times the
        largest entry marks `m` as singular.

    Returns
    -------
    LuFactors

    Raises
    ------
    SingularMatrix
        If a zero (or tiny) pivot is encountered.
    """
    if m.shape[0] != m.shape[1]:
        raise ValueError(f'matrix must be square, got {m.shape}')
    n = m.shape[0]
    if n == 0:
        raise SingularMatrix('empty matrix')
    if sps.issparse(m):
        row_max = np.asarray(abs(m).max(axis=1).todense()).ravel()
    else:
        m = np.asarray(m)
        if not np.all(np.isfinite(m)):
            raise ValueError('matrix has non-finite entries')
        row_max = np.abs(m).max(axis=1)
    if np.any(row_max == 0):
        raise SingularMatrix('matrix has a zero row')
    d = 1.0 / row_max
    if sps.issparse(m) and n >= DENSE_LIMIT:
        ms = sps.csc_matrix(sps.diags(d) @ m)
        try:
            lu = sppla.splu(ms)
        except RuntimeError as exc:
            raise SingularMatrix(str(exc)) from exc
        pivots = abs(lu.U.diagonal())
        fac = LuFactors(m.shape, lu.U.dtype, d, sparse=lu, min_pivot=pivots.min())
    else:
        dense = d[:, None] * as_dense(m)
        with warnings.catch_warnings():
            warnings.simplefilter('ignore', spla.LinAlgWarning)  # singularity is reported below
            lu, piv = spla.lu_factor(dense, check_finite=False)
        pivots = abs(np.diag(lu))
        fac = LuFactors(dense.shape, lu.dtype, d, dense=(lu, piv), min_pivot=pivots.min())
    if not fac.min_pivot >= pivot_tol:
        raise SingularMatrix(f'relative pivot {fac.min_pivot:.3e} below {pivot_tol:.1e}')
    return fac


class Orthonormalized(NamedTuple):
    q: np.ndarray
    t: np.ndarray
    deflated: tuple


def orthonormalize(v, tol=DEFLATION_TOL):
    """Modified Gram-Schmidt with one reorthogonalization pass and deflation.

    A column is dropped when its norm after projection falls below
    ``tol`` times its norm before projection.

    Returns
    -------
    Orthonormalized
        ``(q, t, deflated)`` with ``v = q @ t``, ``q.T @ q = I`` and `t`
        upper triangular (k x n, k = number of kept columns). `deflated` lists
        the indices of dropped columns.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if v.ndim == 2 and v.shape[0] == 1 and v.shape[1] > 1:
        v = v.T
    big_n, n = v.shape
    q = np.zeros((big_n, n))
    t = np.zeros((n, n))
    k = 0
    deflated = []
    for j in range(n):
        x = v[:, j].copy()
        norm0 = np.linalg.norm(x)
        for _ in range(2):
            for i in range(k):
                c = q[:, i] @ x
                t[i, j] += c
                x -= c * q[:, i]
        norm1 = np.linalg.norm(x)
        if norm0 == 0.0 or norm1 < tol * norm0:
            deflated.append(j)
            continue
        q[:, k] = x / norm1
        t[k, j] = norm1
        k += 1
    return Orthonormalized(q[:, :k], t[:k], tuple(deflated))


def solve_lyapunov_small(a, q):
    """Solve ``a x + x a^T + q = 0`` for dense `a`, `q`.

    Bartels-Stewart (real Schur form of `a`) via LAPACK ``trsyl``.

    Raises
    ------
    NonUniqueSolution
        If `a` and `-a` share an eigenvalue (within ``1e-12 * ||a||``).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if a.shape[0] != a.shape[1] or a.shape != q.shape:
        raise ValueError(f'incompatible shapes {a.shape}, {q.shape}')
    lam = np.linalg.eigvals(a)
    gap = np.min(np.abs(lam[:, None] + lam[None, :]))
    if gap <= 1e-12 * max(1.0, np.abs(lam).max()):
        raise NonUniqueSolution(f'spectra of a and -a overlap (gap {gap:.2e})')
    x = spla.solve_continuous_lyapunov(a, -q)
    if np.allclose(q, q.T, rtol=0, atol=1e-14 * max(1.0, abs(q).max())):
        x = (x + x.T) / 2
    return x


class Spectrum(NamedTuple):
    finite: np.ndarray
    n_infinite: int


def eigenvalues_dense(a, e=None, tol=1e-12):
    """Eigenvalues of ``a`` or of the pencil ``(a, e)`` (``a x = lambda e x``).

    Infinite eigenvalues of a singular `e` are counted, not returned.

    Raises
    ------
    SingularPencil
        If some ``alpha, beta`` pair vanishes simultaneously, i.e.
        ``det(a - lambda e)`` is identically zero.
    """
    a = as_dense(a)
    if e is None:
        return Spectrum(np.linalg.eigvals(a), 0)
    e = as_dense(e)
    alpha, beta = spla.eig(a, e, right=False, homogeneous_eigvals=True)
    scale_a = max(abs(a).max(), np.finfo(float).tiny)
    scale_e = max(abs(e).max(), np.finfo(float).tiny)
    small_a = np.abs(alpha) <= tol * scale_a
    small_b = np.abs(beta) <= tol * scale_e
    if np.any(small_a & small_b):
        raise SingularPencil('det(a - lambda e) vanishes identically')
    finite = ~small_b
    return Spectrum(alpha[finite] / beta[finite], int(np.count_nonzero(~finite)))
