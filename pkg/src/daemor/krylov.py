"""Tangential rational Krylov bases in Sylvester-equation form.

An input basis ``V`` and an output basis ``W`` are defined as solutions of::

    A V - E V S_V - B R = 0
    W^T A - S_W W^T E - L C = 0

where ``(S_V, R)`` and ``(S_W, L)`` carry shifts and tangential directions
(:class:`InterpolationData`). Complex-conjugate shifts are kept in real
arithmetic through 2x2 blocks ``[[a, b], [-b, a]]``; repeated shifts with
identical directions become Jordan chains, so higher moments are matched.

Internally every output basis is computed from the transposed equation
``A^T W - E^T W S - C^T R = 0`` with ``S = S_W^T`` and ``R = L^T``, which has
the same shape as the input equation.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as spla

from daemor.errors import (DimensionMismatch, ShiftOnSpectrum, SingularMatrix, UnpairedComplexShift,
                           ZeroDirection)
from daemor.linalg import DEFLATION_TOL, as_dense, lu_factor, orthonormalize

SIDES = ('input', 'output')
_SHIFT_TOL = 1e-12


def _check_side(side):
    if side not in SIDES:
        raise ValueError(f'side must be one of {SIDES}, got {side!r}')


@dataclass(frozen=True, eq=False)
class InterpolationData:
    """Shifts and tangential directions of one Krylov side.

    Attributes
    ----------
    s
        ``S_V`` (input side) or ``S_W`` (output side), real n x n.
    directions
        ``R`` (m x n, input side) or ``L`` (n x p, output side).
    side
        ``'input'`` or ``'output'``.
    shifts
        Declared shift multiset; ``eig(s)`` when not given. Kept because the
        eigenvalues of Jordan blocks are only accurate to ``sqrt(eps)``.
    """

    s: np.ndarray
    directions: np.ndarray
    side: str = 'input'
    shifts: tuple = None

    def __post_init__(self):
        _check_side(self.side)
        s = np.atleast_2d(np.asarray(self.s, dtype=float))
        d = np.atleast_2d(np.asarray(self.directions, dtype=float))
        n = s.shape[0]
        if s.shape != (n, n):
            raise DimensionMismatch(f's must be square, got {s.shape}')
        if (self.side == 'input' and d.shape[1] != n) or (self.side == 'output' and d.shape[0] != n):
            raise DimensionMismatch(f'directions of shape {d.shape} do not fit s of order {n}')
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(d))):
            raise ValueError('interpolation data must be finite')
        s.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, 's', s)
        object.__setattr__(self, 'directions', d)
        if self.shifts is None:
            object.__setattr__(self, 'shifts', tuple(complex(x) for x in _sorted_eigvals(s)))
        elif len(self.shifts) != n:
            raise DimensionMismatch(f'{len(self.shifts)} shifts declared for order {n}')
        else:
            object.__setattr__(self, 'shifts', tuple(complex(x) for x in self.shifts))

    @property
    def order(self):
        return self.s.shape[0]

    @property
    def r(self):
        if self.side != 'input':
            raise AttributeError('output-side data has no r; use l')
        return self.directions

    @property
    def l(self):  # noqa: E743
        if self.side != 'output':
            raise AttributeError('input-side data has no l; use r')
        return self.directions

    def sylvester_pair(self):
        """``(S, R)`` of the equivalent input-type equation (transposed for output data)."""
        if self.side == 'input':
            return self.s, self.directions
        return self.s.T, self.directions.T

    def with_matrices(self, s, directions):
        return InterpolationData(s, directions, self.side, self.shifts)

    def tangential_data(self, tol=1e-8):
        """Shifts with their tangential directions.

        Each eigenvector ``x`` of ``S`` (of the input-type pair) yields the
        direction ``R x``: the basis then contains ``(A - lambda E)^{-1} B R x``.
        Only shifts with nonnegative imaginary part are listed; for repeated
        eigenvalues every independent eigenvector contributes one entry.

        Returns
        -------
        list of (complex, ndarray)
        """
        s, r = self.sylvester_pair()
        lam = _sorted_eigvals(s)
        scale = max(1.0, np.abs(lam).max()) if len(lam) else 1.0
        out = []
        done = []
        for x in lam:
            if x.imag < -tol * scale or any(abs(x - y) <= 1e-6 * scale for y in done):
                continue
            cluster = lam[np.abs(lam - x) <= 1e-6 * scale]
            x = complex(np.mean(cluster))
            if abs(x.imag) <= tol * scale:
                x = complex(x.real)
            done.append(x)
            _, sig, vh = np.linalg.svd(s - x * np.eye(len(s)))
            null = vh[sig <= 1e-10 * max(sig[0], scale)].conj()
            if null.shape[0] == 0:
                null = vh[-1:].conj()
            for vec in null:
                out.append((x, r @ vec))
        return out


def _sorted_eigvals(s):
    lam = np.linalg.eigvals(s) if len(s) else np.zeros(0, dtype=complex)
    return lam[np.lexsort((lam.imag, lam.real))]


@dataclass(frozen=True, eq=False)
class KrylovBasis:
    """A basis together with the interpolation data it satisfies.

    `residual_norm` is the max-abs Sylvester residual and `scale` the sum of
    the max-abs values of its three terms, so ``residual_norm / scale`` is a
    relative residual.
    """

    basis: np.ndarray
    data: InterpolationData
    residual_norm: float
    scale: float
    system: object = field(default=None, repr=False)
    deflated: tuple = ()

    @property
    def side(self):
        return self.data.side

    @property
    def order(self):
        return self.basis.shape[1]

    @property
    def relative_residual(self):
        return self.residual_norm / self.scale if self.scale > 0 else self.residual_norm

    # pyMOR-style aliases
    @property
    def v(self):
        return self.basis

    @property
    def w(self):
        return self.basis


def shifts_to_sylvester(shifts, directions, side='input', tol=_SHIFT_TOL):
    """Encode shifts and tangential directions as a real Sylvester pair.

    Parameters
    ----------
    shifts
        Sequence of complex shifts. Non-real shifts must come in conjugate
        pairs with conjugate directions.
    directions
        One tangential vector per shift (length m for the input side, p for
        the output side); a scalar is accepted for single-channel systems.
    side
        ``'input'`` returns ``(S_V, R)``, ``'output'`` returns ``(S_W, L)``
        with ``S_W = S^T`` and ``L = R^T``.

    Returns
    -------
    InterpolationData

    Notes
    -----
    A shift repeated with the same direction becomes a Jordan chain, i.e. the
    next higher moment is matched. A repeated shift with a different
    direction opens a new block.
    """
    _check_side(side)
    shifts = [complex(x) for x in np.atleast_1d(shifts)]
    dirs = [np.atleast_1d(np.asarray(d, dtype=complex)).ravel() for d in directions]
    if len(shifts) != len(dirs):
        raise DimensionMismatch(f'{len(shifts)} shifts but {len(dirs)} directions')
    if not shifts:
        raise ValueError('at least one shift is required')
    width = len(dirs[0])
    for d in dirs:
        if len(d) != width:
            raise DimensionMismatch('directions must all have the same length')
        if not np.any(d):
            raise ZeroDirection('tangential directions must be nonzero')

    def scaled(x):
        return tol * max(1.0, abs(x))

    # pair conjugates: keep the member with positive imaginary part
    items = []
    used = [False] * len(shifts)
    for i, (x, d) in enumerate(zip(shifts, dirs)):
        if used[i]:
            continue
        used[i] = True
        if abs(x.imag) <= scaled(x):
            if np.any(np.abs(d.imag) > tol * np.abs(d).max()):
                raise UnpairedComplexShift(f'real shift {x.real} has a complex direction')
            items.append((complex(x.real), d.real.astype(complex)))
            continue
        mate = next((j for j in range(i + 1, len(shifts)) if not used[j]
                     and abs(shifts[j] - x.conjugate()) <= scaled(x)
                     and np.allclose(dirs[j], d.conj(), rtol=0, atol=tol * np.abs(d).max())), None)
        if mate is None:
            raise UnpairedComplexShift(f'shift {x} has no conjugate partner with conjugate direction')
        used[mate] = True
        items.append((x, d) if x.imag > 0 else (x.conjugate(), d.conj()))

    n = sum(1 if x.imag == 0 else 2 for x, _ in items)
    s = np.zeros((n, n))
    blocks_r, declared = [], []
    chain_end = {}
    pos = 0
    for x, d in items:
        real = x.imag == 0
        k = 1 if real else 2
        if real:
            s[pos, pos] = x.real
            rb = d.real[:, None]
        else:
            s[pos:pos + 2, pos:pos + 2] = [[x.real, x.imag], [-x.imag, x.real]]
            rb = np.column_stack([d.real, d.imag])
        key = (x, d.tobytes())
        if key in chain_end:
            # same shift and direction again: extend the Jordan chain
            last = chain_end[key]
            s[last:last + k, pos:pos + k] = np.eye(k)
            rb = np.zeros_like(rb)
        chain_end[key] = pos
        blocks_r.append(rb)
        declared += [x] if real else [x, x.conjugate()]
        pos += k
    r = np.hstack(blocks_r)
    if side == 'output':
        return InterpolationData(s.T, r.T, 'output', tuple(declared))
    return InterpolationData(s, r, 'input', tuple(declared))


def _quasi_triangular_blocks(t):
    """Diagonal block slices of a quasi-upper-triangular `t`, or None.

    2x2 blocks are accepted only if they have non-real eigenvalues.
    """
    n = t.shape[0]
    if np.any(np.abs(np.tril(t, -2)) > 0):
        return None
    sub = np.abs(np.diag(t, -1)) > 0 if n > 1 else np.zeros(0, bool)
    blocks = []
    j = 0
    while j < n:
        if j + 1 < n and sub[j]:
            if j + 2 < n and sub[j + 1]:
                return None
            blk = t[j:j + 2, j:j + 2]
            if (blk[0, 0] - blk[1, 1]) ** 2 + 4 * blk[0, 1] * blk[1, 0] >= 0:
                return None
            blocks.append(slice(j, j + 2))
            j += 2
        else:
            blocks.append(slice(j, j + 1))
            j += 1
    return blocks


class _ShiftedSolver:
    """Cache of ``(A - sigma E)`` factorizations, one per distinct shift."""

    def __init__(self, e, a):
        self.e = e
        self.a = a
        self._cache = {}

    def factor(self, sigma):
        key = (round(sigma.real, 14), round(sigma.imag, 14))
        if key not in self._cache:
            sig = sigma.real if sigma.imag == 0 else sigma
            try:
                self._cache[key] = lu_factor(self.a - sig * self.e)
            except SingularMatrix as exc:
                raise ShiftOnSpectrum(f'shift {sigma} is (numerically) a pole of the pencil: {exc}') from exc
        return self._cache[key]

    def solve(self, sigma, rhs, trans):
        return self.factor(sigma).solve(rhs, trans=trans)


def _solve_sylvester(e, a, b, s, r, trans):
    """Solve ``op(A) V - op(E) V S - B R = 0`` block by block.

    ``op`` is the transpose when `trans` is set (matrices are not copied;
    solves use transposed factorizations).
    """
    big_n = a.shape[0]
    n = s.shape[0]
    blocks = _quasi_triangular_blocks(s)
    q = None
    if blocks is None:
        t, q = spla.schur(s, output='real')
        s, r = t, r @ q
        blocks = _quasi_triangular_blocks(s)
    solver = _ShiftedSolver(e, a)
    e_op = e.T if trans else e
    br = b @ r
    v = np.zeros((big_n, n))
    for blk in blocks:
        rhs = br[:, blk]
        if blk.start > 0:
            coupling = s[:blk.start, blk]
            if np.any(coupling):
                rhs = rhs + e_op @ (v[:, :blk.start] @ coupling)
        m = s[blk, blk]
        if m.shape[0] == 1:
            v[:, blk] = solver.solve(complex(m[0, 0]), rhs, trans)
        else:
            # complex Schur m = u t u^H; the second shift is the conjugate of the first,
            # so its solve reuses the same factorization
            t, u = spla.schur(m.astype(complex), output='complex')
            y = rhs @ u
            sigma = complex(t[0, 0])
            z1 = solver.solve(sigma, y[:, 0], trans)
            z2 = solver.solve(sigma, (y[:, 1] + t[0, 1] * (e_op @ z1)).conj(), trans).conj()
            if abs(t[1, 1] - sigma.conjugate()) > 1e-8 * abs(sigma):
                z2 = solver.solve(complex(t[1, 1]), y[:, 1] + t[0, 1] * (e_op @ z1), trans)
            v[:, blk] = np.real(np.column_stack([z1, z2]) @ u.conj().T)
    if q is not None:
        v = v @ q.T
    return v


def _residual(e, a, b, s, r, v, trans):
    av = (a.T @ v) if trans else (a @ v)
    evs = ((e.T @ v) if trans else (e @ v)) @ s
    br = b @ r
    res = av - evs - br
    mx = lambda m: float(np.abs(m).max()) if m.size else 0.0  # noqa: E731
    return mx(res), mx(av) + mx(evs) + mx(br)


def _operands(system, side):
    e, a, b, c, _ = system.descriptor()
    if side == 'input':
        return e, a, as_dense(b).astype(float), False
    return e, a, as_dense(c).T.astype(float), True


def sylvester_residual(system, basis, data=None):
    """Max-abs residual and its scale for a basis of `system`.

    Returns
    -------
    (float, float)
        ``(max|res|, max|op(A) V| + max|op(E) V S| + max|B R|)``.
    """
    data = basis.data if data is None and isinstance(basis, KrylovBasis) else data
    v = basis.basis if isinstance(basis, KrylovBasis) else np.asarray(basis)
    e, a, b, trans = _operands(system, data.side)
    s, r = data.sylvester_pair()
    return _residual(e, a, b, s, r, v, trans)


def _krylov_basis(system, data, side):
    if data.side != side:
        raise ValueError(f'{data.side}-side interpolation data given for an {side} basis')
    e, a, b, trans = _operands(system, side)
    s, r = data.sylvester_pair()
    if r.shape[0] != b.shape[1]:
        raise DimensionMismatch(f'directions have length {r.shape[0]}, system has {b.shape[1]} '
                                f'{"inputs" if side == "input" else "outputs"}')
    v = _solve_sylvester(e, a, b, s, r, trans)
    res, scale = _residual(e, a, b, s, r, v, trans)
    return KrylovBasis(v, data, res, scale, system)


def input_krylov_basis(system, data):
    """Solve ``A V - E V S_V - B R = 0`` on the assembled pencil.

    One factorization of ``A - sigma E`` per distinct shift; conjugate pairs
    take a single complex solve.

    Raises
    ------
    ShiftOnSpectrum
        If a shift is (numerically) a finite eigenvalue of ``(A, E)``.
    """
    return _krylov_basis(system, data, 'input')


def output_krylov_basis(system, data):
    """Solve ``W^T A - S_W W^T E - L C = 0`` with transposed solves."""
    return _krylov_basis(system, data, 'output')


def krylov_basis(system, data):
    """Dispatch on ``data.side``."""
    return _krylov_basis(system, data, data.side)


def change_basis(basis, t):
    """Replace the basis ``V`` by ``V t`` and keep the Sylvester pair consistent.

    Input side: ``S_V <- t^{-1} S_V t``, ``R <- R t``. Output side:
    ``S_W <- t^T S_W t^{-T}``, ``L <- t^T L``. The residual is re-evaluated
    when the basis knows its system.

    Raises
    ------
    SingularMatrix
        If `t` is not invertible.
    """
    t = np.atleast_2d(np.asarray(t, dtype=float))
    n = basis.order
    if t.shape != (n, n):
        raise DimensionMismatch(f't must be {n}x{n}, got {t.shape}')
    if not np.all(np.isfinite(t)) or np.linalg.cond(t) > 1 / np.finfo(float).eps:
        raise SingularMatrix('change of basis is singular')
    return _transform(basis, t, np.linalg.inv(t))


def _transform(basis, t, tinv, v=None):
    s, r = basis.data.sylvester_pair()
    data = _from_pair(basis.data, tinv @ s @ t, r @ t)
    return _rebuild(basis, basis.basis @ t if v is None else v, data, basis.deflated)


def _from_pair(data, s, r):
    if data.side == 'input':
        return data.with_matrices(s, r)
    return data.with_matrices(s.T, r.T)


def _rebuild(basis, v, data, deflated):
    if basis.system is None:
        return KrylovBasis(v, data, np.nan, np.nan, None, deflated)
    res, scale = sylvester_residual(basis.system, v, data)
    return KrylovBasis(v, data, res, scale, basis.system, deflated)


def orthonormalize_basis(basis, tol=DEFLATION_TOL):
    """Orthonormalize the columns and carry the Sylvester pair along.

    Without deflation this is :func:`change_basis` with ``t = T^{-1}`` from
    ``V = Q T``. With deflation (``T`` is k x n, k < n) the pair is mapped by
    least squares, ``S' = T S T^+`` and ``R' = R T^+``; the recomputed
    residual shows how well the reduced pair still holds, and the declared
    shifts are dropped since the spectrum may have changed.
    """
    q, t, deflated = orthonormalize(basis.basis, tol)
    if not deflated:
        tinv = spla.solve_triangular(t, np.eye(t.shape[0]))
        return _transform(basis, tinv, t, q)
    s, r = basis.data.sylvester_pair()
    tp = np.linalg.pinv(t)
    pair = (t @ s @ tp, r @ tp)
    data = basis.data
    data = InterpolationData(*(pair if data.side == 'input' else (pair[0].T, pair[1].T)), data.side)
    return _rebuild(basis, q, data, tuple(deflated))


def arnoldi_basis(system, shift, order, direction=None, side='input'):
    """Orthonormal basis of a single-point tangential Krylov subspace.

    Spans ``K^{-j} (A - s0 E)^{-1} B r`` for ``j < order`` with
    ``K = (A - s0 E)^{-1} E`` (transposed operators for the output side),
    i.e. `order` moments about the real shift `s0`. Each new vector is
    orthogonalized before the next solve, so high moments stay representable.

    The Arnoldi relation ``(A - s0 E) V G = B r e_1^T + E V Z`` (``G`` upper
    triangular, ``Z`` the shift matrix) gives the exact Sylvester pair
    ``S = s0 I + Z G^{-1}``, ``R = r e_1^T G^{-1}``.
    """
    _check_side(side)
    shift = float(np.real(shift))
    e, a, b, trans = _operands(system, side)
    width = b.shape[1]
    r = np.ones(width) if direction is None else np.asarray(direction, dtype=float).ravel()
    if r.shape != (width,):
        raise DimensionMismatch(f'direction must have length {width}')
    if not np.any(r):
        raise ZeroDirection('tangential direction must be nonzero')
    solver = _ShiftedSolver(e, a)
    e_op = e.T if trans else e
    big_n = a.shape[0]
    v = np.zeros((big_n, order))
    g = np.zeros((order, order))
    x = solver.solve(complex(shift), b @ r, trans)
    for k in range(order):
        if k > 0:
            x = solver.solve(complex(shift), e_op @ v[:, k - 1], trans)
        x = np.real(x)
        for _ in range(2):
            h = v[:, :k].T @ x
            x = x - v[:, :k] @ h
            g[:k, k] += h
        nrm = np.linalg.norm(x)
        if nrm == 0 or (k > 0 and nrm < DEFLATION_TOL * np.abs(g[:k, k]).max()):
            raise ValueError(f'Krylov subspace exhausted after {k} vectors')
        g[k, k] = nrm
        v[:, k] = x / nrm
    ginv = spla.solve_triangular(g, np.eye(order))
    z = np.eye(order, k=1)
    s = shift * np.eye(order) + z @ ginv
    rr = np.outer(r, ginv[0])
    pair = (s, rr) if side == 'input' else (s.T, rr.T)
    data = InterpolationData(*pair, side, tuple([complex(shift)] * order))
    res, scale = _residual(e, a, b, s, rr, v, trans)
    return KrylovBasis(v, data, res, scale, system)
