"""Projection-based reducers for semi-explicit DAEs.

All reduced models are ODEs ``er x' = ar x + br u, y = cr x + dr u`` with
nonsingular ``er``. The implicit feedthrough ``D_imp`` of a DAE is carried
over exactly by the corrections::

    er = W^T E V
    ar = W^T A V + L D_imp R
    br = W^T B + L D_imp
    cr = C V + D_imp R
    dr = D + D_imp

with ``R`` and ``L`` taken from the interpolation data of the bases (zero
when a basis has no data of that side). With these terms the result equals
the Petrov-Galerkin projection of the underlying ODE by the top blocks of
``V`` and ``W``, without ever forming that ODE.
"""
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.io as spio
import scipy.linalg as spla
import scipy.sparse as sps

from daemor.errors import (DimensionMismatch, LyapunovSingular, NonUniqueSolution, ShiftInClosedLeftHalfPlane,
                           SingularMatrix, SingularProjection, StructuralGuard, UnstableModel)
from daemor.krylov import KrylovBasis, _transform, input_krylov_basis, orthonormalize_basis, output_krylov_basis
from daemor.linalg import as_dense, lu_factor, solve_lyapunov_small
from daemor.model import SemiExplicitDAE, implicit_feedthrough, underlying_ode, validate_semi_explicit

_MATRICES = ('er', 'ar', 'br', 'cr', 'dr')


def _to_jsonable(x):
    if isinstance(x, np.ndarray):
        if np.iscomplexobj(x):
            return {'re': x.real.tolist(), 'im': x.imag.tolist()}
        return x.tolist()
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, dict):
        return {k: _to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_jsonable(v) for v in x]
    return x


@dataclass(frozen=True, eq=False)
class ReducedModel:
    """Dense reduced model ``(er, ar, br, cr, dr)``.

    `provenance` records the method, the interpolation data and the
    correction terms applied; it holds JSON-compatible values only.
    """

    er: np.ndarray
    ar: np.ndarray
    br: np.ndarray
    cr: np.ndarray
    dr: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in _MATRICES:
            m = np.atleast_2d(np.asarray(as_dense(getattr(self, name)), dtype=float))
            if not np.all(np.isfinite(m)):
                raise ValueError(f'{name} has non-finite entries')
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        n = self.er.shape[0]
        if (self.er.shape != (n, n) or self.ar.shape != (n, n) or self.br.shape[0] != n
                or self.cr.shape[1] != n or self.dr.shape != (self.cr.shape[0], self.br.shape[1])):
            raise DimensionMismatch('inconsistent reduced model dimensions')
        object.__setattr__(self, 'provenance', _to_jsonable(dict(self.provenance)))

    @property
    def order(self):
        return self.er.shape[0]

    @property
    def n_inputs(self):
        return self.br.shape[1]

    @property
    def n_outputs(self):
        return self.cr.shape[0]

    def descriptor(self):
        return self.er, self.ar, self.br, self.cr, self.dr

    def with_blocks(self, **changes):
        return replace(self, **changes)

    def strictly_proper(self):
        return replace(self, dr=np.zeros_like(self.dr))

    def transpose(self):
        return ReducedModel(self.er.T, self.ar.T, self.cr.T, self.br.T, self.dr.T, self.provenance)

    def to_json(self, path=None):
        """Dense matrices are stored row-major together with their shapes."""
        doc = {name: {'shape': list(getattr(self, name).shape),
                      'data': getattr(self, name).ravel().tolist()} for name in _MATRICES}
        doc['provenance'] = self.provenance
        if path is not None:
            Path(path).write_text(json.dumps(doc, indent=1))
        return doc

    @classmethod
    def from_json(cls, doc):
        if not isinstance(doc, dict):
            doc = json.loads(Path(doc).read_text())
        mats = {name: np.reshape(np.asarray(doc[name]['data'], dtype=float), doc[name]['shape'])
                for name in _MATRICES}
        return cls(**mats, provenance=doc.get('provenance', {}))

    def write_matrix_market(self, directory, name='rom'):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {}
        for key in _MATRICES:
            path = directory / f'{name}_{key}.mtx'
            spio.mmwrite(str(path), sps.coo_matrix(getattr(self, key)), field='real', symmetry='general')
            paths[key] = path
        return paths


def _basis_matrix(basis):
    return basis.basis if isinstance(basis, KrylovBasis) else np.asarray(basis, dtype=float)


def _directions(v, w, m, p):
    r = v.data.r if isinstance(v, KrylovBasis) and v.side == 'input' else np.zeros((m, _basis_matrix(v).shape[1]))
    l = w.data.l if isinstance(w, KrylovBasis) and w.side == 'output' else np.zeros((_basis_matrix(w).shape[1], p))
    return r, l


def _corrected(system, vm, wm, r, l, provenance):
    e, a, b, c, d = system.descriptor()
    if vm.shape != wm.shape:
        raise DimensionMismatch(f'bases have shapes {vm.shape} and {wm.shape}')
    d_imp = implicit_feedthrough(system)
    er = wm.T @ (e @ vm)
    try:
        lu_factor(er)
    except SingularMatrix as exc:
        raise SingularProjection(f'W^T E V is singular: {exc}') from exc
    ar = wm.T @ (a @ vm) + l @ d_imp @ r
    br = wm.T @ b + l @ d_imp
    cr = c @ vm + d_imp @ r
    dr = d + d_imp
    provenance = dict(provenance, d_imp=d_imp, corrections=bool(np.any(d_imp) and (np.any(l) or np.any(r))))
    return ReducedModel(er, ar, br, cr, dr, provenance)


def project_corrected(system, v, w):
    """Two-sided projection with implicit-feedthrough corrections.

    Parameters
    ----------
    system
        :class:`~daemor.model.SemiExplicitDAE` (or any system with a
        ``descriptor()``; then ``D_imp = 0``).
    v, w
        Input and output bases, :class:`~daemor.krylov.KrylovBasis` or plain
        arrays. ``R`` is read from `v` if it is an input Krylov basis and
        ``L`` from `w` if it is an output Krylov basis; otherwise zero.

    Raises
    ------
    SingularProjection
        If ``W^T E V`` cannot be factorized.
    """
    _, _, b, c, _ = system.descriptor()
    r, l = _directions(v, w, b.shape[1], c.shape[0])
    prov = {'method': 'two-sided-corrected', 'order': _basis_matrix(v).shape[1]}
    for name, basis in (('v_shifts', v), ('w_shifts', w)):
        if isinstance(basis, KrylovBasis):
            prov[name] = list(basis.data.shifts)
    return _corrected(system, _basis_matrix(v), _basis_matrix(w), r, l, prov)


def _is_orthonormal(v, tol=1e-12):
    return np.abs(v.T @ v - np.eye(v.shape[1])).max() < tol


def orthogonal_reduce(system, basis, side=None, unsafe=False):
    """One-sided (``W = V``) reduction with the structural guard.

    The result equals the orthogonal projection of the underlying ODE by
    the top block of the basis when

    * ``side='input'``: ``B22 = 0`` (then ``L = 0``), or the symmetric triple
      ``A22 = A22^T``, ``A12 = A21^T``, ``C22 = B22^T`` (then ``L = R^T``);
    * ``side='output'``: ``C22 = 0`` (then ``R = 0``), or the symmetric
      triple (then ``R = L^T``).

    The basis is orthonormalized first, with its Sylvester pair tracked.

    Parameters
    ----------
    unsafe
        Reduce even if neither condition holds. The ROM then still
        interpolates but is no longer the projection of the underlying ODE;
        stability and dissipativity may be lost.

    Raises
    ------
    StructuralGuard
        If neither structural condition holds and `unsafe` is not set.
    """
    side = basis.side if side is None else side
    if not isinstance(basis, KrylovBasis) or basis.side != side:
        raise ValueError(f'orthogonal_reduce needs an {side}-side KrylovBasis')
    guard = 'n/a'
    symmetric = False
    if isinstance(system, SemiExplicitDAE):
        rep = validate_semi_explicit(system)
        zero_ok = rep.b22_zero if side == 'input' else rep.c22_zero
        symmetric = not zero_ok and rep.symmetric_triple
        if zero_ok:
            guard = 'b22 = 0' if side == 'input' else 'c22 = 0'
        elif symmetric:
            guard = 'symmetric triple'
        elif unsafe:
            guard = 'overridden'
        else:
            block = 'B22' if side == 'input' else 'C22'
            raise StructuralGuard(f'{side}-side orthogonal reduction needs {block} = 0 or the symmetric '
                                  f'triple (A22 = A22^T, A12 = A21^T, C22 = B22^T); pass unsafe=True '
                                  f'to reduce anyway')
    if not _is_orthonormal(basis.basis):
        basis = orthonormalize_basis(basis)
    vm = basis.basis
    _, _, b, c, _ = system.descriptor()
    m, p, n = b.shape[1], c.shape[0], vm.shape[1]
    if side == 'input':
        r = basis.data.r
        l = r.T if symmetric else np.zeros((n, p))
    else:
        l = basis.data.l
        r = l.T if symmetric else np.zeros((m, n))
    prov = {'method': f'orthogonal-{"v" if side == "input" else "w"}', 'order': n, 'guard': guard,
            'shifts': list(basis.data.shifts), 'deflated': list(basis.deflated)}
    return _corrected(system, vm, vm, r, l, prov)


def _check_rhp(data):
    s, _ = data.sylvester_pair()
    lam = np.linalg.eigvals(s)
    declared = np.asarray(data.shifts)
    if np.any(lam.real <= 0) or np.any(declared.real <= 0):
        bad = declared[declared.real <= 0] if np.any(declared.real <= 0) else lam[lam.real <= 0]
        raise ShiftInClosedLeftHalfPlane(f'pseudo-optimal reduction needs Re(shift) > 0, got {bad}')


def _gramian_factor(a, q):
    """Solve ``a x + x a^T + q = 0`` for SPD ``x``; return ``x`` and its Cholesky factor."""
    try:
        x = solve_lyapunov_small(a, q)
    except NonUniqueSolution as exc:
        raise LyapunovSingular(str(exc)) from exc
    x = (x + x.T) / 2
    try:
        chol = np.linalg.cholesky(x)
    except np.linalg.LinAlgError as exc:
        raise LyapunovSingular('interpolation data are not observable (Lyapunov solution not SPD)') from exc
    d = np.diag(chol)
    if d.min() <= 1e-7 * d.max():
        raise LyapunovSingular(f'Lyapunov solution is numerically singular (cond ~ {(d.max() / d.min())**2:.1e})')
    return x, chol


def pork(system, data, side=None, return_basis=False, coordinates='gramian'):
    """Pseudo-optimal rational Krylov reduction.

    Input side, with ``(S, R)`` the Sylvester pair of `data`::

        (-S^T) X + X (-S) + R^T R = 0,   P = X^{-1}
        br = -P R^T,  ar = S + br R,  er = I
        cr = C V + D_imp R,  dr = D + D_imp

    Output side, with ``(S_W, L)``::

        (-S_W) X + X (-S_W^T) + L L^T = 0,   Q = X^{-1}
        cr = -L^T Q,  ar = S_W + L cr,  er = I
        br = W^T B + L D_imp,  dr = D + D_imp

    The poles of the result are the mirrored shifts and ``P`` (resp. ``Q``)
    is its controllability (observability) Gramian. For a plain ODE
    ``D_imp = 0``.

    Parameters
    ----------
    return_basis
        Also return the :class:`~daemor.krylov.KrylovBasis` used, in the
        same coordinates as the model.
    coordinates
        ``'krylov'`` returns the matrices exactly as written above.
        ``'gramian'`` (default) returns the same transfer function in the
        coordinates where the Gramian is the identity: with ``X = K K^T``
        the basis becomes ``V K^{-T}`` and ``ar = -K^{-1} S^T K`` (output
        side ``ar = -(K^{-1} S_W K)^T``), so ``ar + ar^T = -br br^T`` (resp.
        ``-cr^T cr``). Computing ``ar`` as a triangular similarity of
        ``-S^T`` keeps its eigenvalues accurate when ``X`` is badly
        conditioned, where the Krylov form can lose several digits.

    Raises
    ------
    ShiftInClosedLeftHalfPlane
        If some shift has ``Re <= 0``.
    LyapunovSingular
        If the interpolation data are not observable.
    """
    side = data.side if side is None else side
    if data.side != side:
        raise ValueError(f'{data.side}-side data passed for side={side!r}')
    _check_rhp(data)
    _, _, b, c, d = system.descriptor()
    d_imp = implicit_feedthrough(system)
    n = data.order
    if side == 'input':
        s, r = data.s, data.r
        x, k = _gramian_factor(-s.T, r.T @ r)
        basis = input_krylov_basis(system, data)
    else:
        s, l = data.s, data.l
        x, k = _gramian_factor(-s, l @ l.T)
        basis = output_krylov_basis(system, data)
    if coordinates == 'krylov':
        gram = np.linalg.inv(x)
        gram = (gram + gram.T) / 2
        if side == 'input':
            br = -gram @ r.T
            ar = s + br @ r
            cr = c @ basis.basis + d_imp @ r
        else:
            cr = -l.T @ gram
            ar = s + l @ cr
            br = basis.basis.T @ b + l @ d_imp
    elif coordinates == 'gramian':
        t = spla.solve_triangular(k, np.eye(n), lower=True).T
        basis = _transform(basis, t, k.T)
        gram = np.eye(n)
        if side == 'input':
            ar = -spla.solve_triangular(k, s.T @ k, lower=True)
            br = -spla.solve_triangular(k, r.T, lower=True)
            cr = c @ basis.basis + d_imp @ basis.data.r
        else:
            ar = -spla.solve_triangular(k, s @ k, lower=True).T
            cr = -spla.solve_triangular(k, l, lower=True).T
            br = basis.basis.T @ b + basis.data.l @ d_imp
    else:
        raise ValueError(f"coordinates must be 'krylov' or 'gramian', got {coordinates!r}")
    prov = {'method': 'pork', 'side': side, 'order': n, 'shifts': list(data.shifts), 'd_imp': d_imp,
            'gramian': gram, 'coordinates': coordinates}
    rom = ReducedModel(np.eye(n), ar, br, cr, d + d_imp, prov)
    return (rom, basis) if return_basis else rom


def pork_norm_squared(rom):
    """``||G_r||_H2^2`` of a PORK model from its stored Gramian (no Lyapunov solve)."""
    gram = np.asarray(rom.provenance['gramian'])
    if rom.provenance.get('side', 'input') == 'input':
        return float(np.trace(rom.cr @ gram @ rom.cr.T))
    return float(np.trace(rom.br.T @ gram @ rom.br))


def h2_norm_squared(system):
    """Squared H2 norm of the strictly proper part of `system`.

    Semi-explicit DAEs go through their (dense) underlying ODE; the
    feedthrough is always dropped.

    Raises
    ------
    UnstableModel
        If some pole has ``Re >= 0``.
    """
    if isinstance(system, SemiExplicitDAE):
        system = underlying_ode(system)
    e, a, b, c, _ = (as_dense(x) for x in system.descriptor())
    if a.shape[0] == 0:
        return 0.0
    lu = lu_factor(e)
    a = lu.solve(a)
    b = lu.solve(b)
    lam = np.linalg.eigvals(a)
    if np.any(lam.real >= 0):
        raise UnstableModel(f'pole with Re >= 0: max Re = {lam.real.max():.3e}')
    p = solve_lyapunov_small(a, b @ b.T)
    return max(float(np.trace(c @ p @ c.T)), 0.0)


def h2_norm(system):
    """H2 norm of the strictly proper part; see :func:`h2_norm_squared`."""
    return float(np.sqrt(h2_norm_squared(system)))
