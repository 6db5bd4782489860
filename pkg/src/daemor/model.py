"""Semi-explicit index-1 DAEs, their underlying ODEs and frequency data.

A semi-explicit DAE has the block structure::

    [E11 0] d/dt [x1]   [A11 A12] [x1]   [B11]
    [ 0  0]      [x2] = [A21 A22] [x2] + [B22] u
                    y = [C11 C22] x + D u

with ``E11`` and ``A22`` nonsingular. Eliminating ``x2`` gives the
underlying ODE ``(E1, A1, B1, C1, D1)``.
"""
import csv
import json
import threading
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import scipy.io as spio
import scipy.sparse as sps

from daemor.errors import DimensionMismatch, NotSemiExplicit, SingularMatrix
from daemor.linalg import DENSE_LIMIT, as_dense, lu_factor

_SPARSE_FIELDS = ('e11', 'a11', 'a12', 'a21', 'a22')
_DENSE_FIELDS = ('b11', 'b22', 'c11', 'c22', 'd')


@dataclass(frozen=True, eq=False)
class SemiExplicitDAE:
    """Block-partitioned semi-explicit index-1 descriptor system.

    The five state blocks are stored as CSR matrices, input/output blocks as
    dense arrays. Instances are immutable; the only mutable part is a private
    memo of solves with ``A22`` (filled at most once per entry under a lock).
    """

    e11: sps.csr_matrix
    a11: sps.csr_matrix
    a12: sps.csr_matrix
    a21: sps.csr_matrix
    a22: sps.csr_matrix
    b11: np.ndarray
    b22: np.ndarray
    c11: np.ndarray
    c22: np.ndarray
    d: np.ndarray
    _memo: dict = field(default_factory=dict, init=False, repr=False, compare=False)
    _lock: threading.RLock = field(default_factory=threading.RLock, init=False, repr=False,
                                  compare=False)

    def __post_init__(self):
        for name in _SPARSE_FIELDS:
            m = getattr(self, name)
            m = sps.csr_matrix(m, dtype=float)
            m.sum_duplicates()
            m.sort_indices()
            object.__setattr__(self, name, m)
        for name in _DENSE_FIELDS:
            m = np.atleast_2d(np.asarray(as_dense(getattr(self, name)), dtype=float))
            if not np.all(np.isfinite(m)):
                raise ValueError(f'{name} has non-finite entries')
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        n1, n2 = self.e11.shape[0], self.a22.shape[0]
        m_in, p_out = self.b11.shape[1], self.c11.shape[0]
        expected = {
            'e11': (n1, n1), 'a11': (n1, n1), 'a12': (n1, n2), 'a21': (n2, n1),
            'a22': (n2, n2), 'b11': (n1, m_in), 'b22': (n2, m_in), 'c11': (p_out, n1),
            'c22': (p_out, n2), 'd': (p_out, m_in),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionMismatch(f'{name} has shape {getattr(self, name).shape}, '
                                        f'expected {shape}')
        if n1 < 1:
            raise DimensionMismatch('n_dyn must be at least 1')

    @property
    def n_dyn(self):
        return self.e11.shape[0]

    @property
    def n_alg(self):
        return self.a22.shape[0]

    @property
    def order(self):
        return self.n_dyn + self.n_alg

    @property
    def n_inputs(self):
        return self.b11.shape[1]

    @property
    def n_outputs(self):
        return self.c11.shape[0]

    def _cached(self, key, compute):
        if key not in self._memo:
            with self._lock:
                if key not in self._memo:
                    self._memo[key] = compute()
        return self._memo[key]

    def a22_lu(self):
        """Memoized factorization of ``A22`` (raises :class:`SingularMatrix`)."""
        if self.n_alg == 0:
            raise SingularMatrix('no algebraic block')
        return self._cached('a22_lu', lambda: lu_factor(self.a22))

    def a22_solve_b22(self):
        """Memoized ``A22^{-1} B22``."""
        if self.n_alg == 0:
            return np.zeros((0, self.n_inputs))
        return self._cached('a22inv_b22', lambda: self.a22_lu().solve(self.b22))

    def c22_a22_solve(self):
        """Memoized ``C22 A22^{-1}`` (computed as a transposed solve)."""
        if self.n_alg == 0:
            return np.zeros((self.n_outputs, 0))
        return self._cached('c22_a22inv', lambda: self.a22_lu().solve(self.c22.T, trans=True).T)

    def descriptor(self):
        """Assembled ``(E, A, B, C, D)``; ``E`` and ``A`` sparse CSR.

        ``E`` and ``A`` are assembled once and shared between calls; treat
        them as read-only.
        """
        e, a = self._cached('descriptor', self._assemble)
        b = np.vstack([self.b11, self.b22])
        c = np.hstack([self.c11, self.c22])
        return e, a, b, c, np.array(self.d)

    def _assemble(self):
        n2 = self.n_alg
        e = sps.block_diag([self.e11, sps.csr_matrix((n2, n2))], format='csr')
        a = sps.bmat([[self.a11, self.a12], [self.a21, self.a22]], format='csr')
        return e, a

    def with_blocks(self, **changes):
        """Copy with some blocks replaced (the solve memo is not shared)."""
        return replace(self, **changes)

    def transpose(self):
        """Dual system ``(E^T, A^T, C^T, B^T, D^T)``, again semi-explicit."""
        return SemiExplicitDAE(self.e11.T, self.a11.T, self.a21.T, self.a12.T, self.a22.T,
                               self.c11.T, self.c22.T, self.b11.T, self.b22.T, self.d.T)


@dataclass(frozen=True, eq=False)
class OdeRealization:
    """Dense ODE ``e1 x' = a1 x + b1 u, y = c1 x + d1 u`` with ``e1`` nonsingular."""

    e1: np.ndarray
    a1: np.ndarray
    b1: np.ndarray
    c1: np.ndarray
    d1: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, np.atleast_2d(np.asarray(as_dense(getattr(self, f.name)),
                                                                      dtype=float)))
        n = self.e1.shape[0]
        if (self.e1.shape != (n, n) or self.a1.shape != (n, n) or self.b1.shape[0] != n
                or self.c1.shape[1] != n or self.d1.shape != (self.c1.shape[0], self.b1.shape[1])):
            raise DimensionMismatch('inconsistent ODE dimensions')

    @property
    def order(self):
        return self.e1.shape[0]

    @property
    def n_inputs(self):
        return self.b1.shape[1]

    @property
    def n_outputs(self):
        return self.c1.shape[0]

    def descriptor(self):
        return self.e1, self.a1, self.b1, self.c1, self.d1

    def with_blocks(self, **changes):
        return replace(self, **changes)

    def transpose(self):
        return OdeRealization(self.e1.T, self.a1.T, self.c1.T, self.b1.T, self.d1.T)


@dataclass(frozen=True)
class ValidationReport:
    e11_nonsingular: bool
    a22_nonsingular: bool
    b22_zero: bool
    c22_zero: bool
    a22_symmetric: bool
    a12_eq_a21t: bool
    c22_eq_b22t: bool

    @property
    def symmetric_triple(self):
        return self.a22_symmetric and self.a12_eq_a21t and self.c22_eq_b22t

    @property
    def valid(self):
        return self.e11_nonsingular and self.a22_nonsingular


def _is_zero(m):
    if sps.issparse(m):
        return bool(m.nnz == 0 or abs(m).max() == 0)
    return not np.any(m)


def _same(x, y):
    if x.shape != y.shape:
        return False
    return _is_zero(sps.csr_matrix(x) - sps.csr_matrix(y))


def validate_semi_explicit(dae):
    """Check nonsingularity of ``E11``/``A22`` and the structural flags."""
    def factorizes(m):
        try:
            lu_factor(m)
        except SingularMatrix:
            return False
        return True

    return ValidationReport(
        e11_nonsingular=factorizes(dae.e11),
        a22_nonsingular=dae.n_alg > 0 and factorizes(dae.a22),
        b22_zero=_is_zero(dae.b22),
        c22_zero=_is_zero(dae.c22),
        a22_symmetric=_same(dae.a22, dae.a22.T),
        a12_eq_a21t=_same(dae.a12, dae.a21.T),
        c22_eq_b22t=_same(dae.c22, dae.b22.T),
    )


def underlying_ode(dae):
    """Eliminate the algebraic variables (Schur complement of ``A22``)."""
    if isinstance(dae, OdeRealization):
        return dae
    lu = dae.a22_lu()
    x21 = lu.solve(dae.a21.toarray())
    a12 = dae.a12
    return OdeRealization(
        e1=dae.e11.toarray(),
        a1=dae.a11.toarray() - a12 @ x21,
        b1=dae.b11 - a12 @ dae.a22_solve_b22(),
        c1=dae.c11 - dae.c22 @ x21,
        d1=dae.d - dae.c22 @ dae.a22_solve_b22(),
    )


def implicit_feedthrough(system):
    """``D_imp = -C22 A22^{-1} B22``; zero for anything that is not a DAE."""
    if not isinstance(system, SemiExplicitDAE):
        _, _, b, c, _ = system.descriptor()
        return np.zeros((c.shape[0], b.shape[1]))
    if _is_zero(system.c22) or _is_zero(system.b22):
        return np.zeros((system.n_outputs, system.n_inputs))
    if system.n_outputs < system.n_inputs:
        return -system.c22_a22_solve() @ system.b22
    return -system.c22 @ system.a22_solve_b22()


def strictly_proper(dae, side='input_shifted'):
    """Realization of ``G(s) - D - D_imp`` with zero implicit feedthrough.

    ``input_shifted`` moves ``B22`` into ``B11`` (``B22 = 0``),
    ``output_shifted`` moves ``C22`` into ``C11`` (``C22 = 0``).
    """
    if side == 'input_shifted':
        return dae.with_blocks(b11=dae.b11 - dae.a12 @ dae.a22_solve_b22(),
                               b22=np.zeros_like(dae.b22), d=np.zeros_like(dae.d))
    if side == 'output_shifted':
        return dae.with_blocks(c11=dae.c11 - dae.c22_a22_solve() @ dae.a21,
                               c22=np.zeros_like(dae.c22), d=np.zeros_like(dae.d))
    raise ValueError(f'unknown side {side!r}')


def transfer_eval(system, s):
    """Evaluate ``C (sE - A)^{-1} B + D`` at a complex point `s`.

    Works on anything exposing ``descriptor()``; DAEs are solved on the
    assembled pencil, never through the underlying ODE.
    """
    return _transfer_at(*system.descriptor(), s)


def _transfer_at(e, a, b, c, d, s):
    if not np.any(b) or not np.any(c):
        return np.array(d, dtype=complex)
    lu = lu_factor(s * e - a)
    return c @ lu.solve(b.astype(complex)) + d


@dataclass(frozen=True)
class FrequencyResponse:
    """Samples ``G(i omega)``; `values` has shape ``(len(omega), p, m)``.

    Points where the evaluation hit the spectrum hold NaN and are listed in
    `failed`.
    """

    omega: np.ndarray
    values: np.ndarray
    failed: tuple = ()

    def magnitude_db(self):
        return 20 * np.log10(np.abs(self.values))

    def _header(self, kind):
        p, m = self.values.shape[1:]
        cols = ['omega']
        for i in range(p):
            for j in range(m):
                tag = f'{i + 1}{j + 1}'
                cols += [f'mag_db_{tag}'] if kind == 'db' else [f're_{tag}', f'im_{tag}']
        return cols

    def rows(self, kind='complex'):
        for w, val in zip(self.omega, self.values):
            row = [w]
            for x in val.ravel():
                row += [20 * np.log10(abs(x))] if kind == 'db' else [x.real, x.imag]
            yield row

    def to_csv(self, path, kind='complex'):
        """Write ``omega,re_ij,im_ij,...`` (or ``omega,mag_db_ij,...`` with ``kind='db'``)."""
        with open(path, 'w', newline='') as fh:
            writer = csv.writer(fh)
            writer.writerow(self._header(kind))
            for row in self.rows(kind):
                writer.writerow([repr(float(x)) for x in row])

    def to_json(self, path=None):
        doc = {'omega': self.omega.tolist(),
               'shape': list(self.values.shape[1:]),
               're': self.values.real.tolist(),
               'im': self.values.imag.tolist(),
               'failed': list(self.failed)}
        if path is not None:
            Path(path).write_text(json.dumps(doc))
        return doc

    @classmethod
    def from_json(cls, doc):
        values = np.asarray(doc['re']) + 1j * np.asarray(doc['im'])
        return cls(np.asarray(doc['omega'], dtype=float), values, tuple(doc.get('failed', ())))


def frequency_response(system, omegas):
    """Evaluate the transfer function at ``s = i omega`` for each omega."""
    omegas = np.asarray(omegas, dtype=float).ravel()
    if not np.all(np.isfinite(omegas)):
        raise ValueError('frequencies must be finite')
    if np.any(np.diff(omegas) <= 0):
        raise ValueError('frequencies must be strictly increasing')
    e, a, b, c, d = system.descriptor()
    if e.shape[0] < DENSE_LIMIT:
        # small pencils are factorized densely anyway; assemble them once
        e, a = as_dense(e), as_dense(a)
    values = np.full((len(omegas), c.shape[0], b.shape[1]), np.nan, dtype=complex)
    failed = []
    for k, w in enumerate(omegas):
        try:
            values[k] = _transfer_at(e, a, b, c, d, 1j * w)
        except SingularMatrix:
            failed.append(k)
    return FrequencyResponse(omegas, values, tuple(failed))


# ---------------------------------------------------------------------------
# transmission line

OUTPUT_TAPS = ('end_capacitor_voltage', 'first_inductor_voltage')


@dataclass(frozen=True)
class TransmissionLineParams:
    """RLC ladder parameters; per-loop values are per-meter constants times 1 m."""

    q: int
    r_per: float = 172.24e-3
    l_per: float = 0.61e-6
    c_per: float = 51.57e-12
    output_tap: str = 'end_capacitor_voltage'

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 1:
            raise ValueError(f'q must be a positive integer, got {self.q!r}')
        if min(self.r_per, self.l_per, self.c_per) <= 0:
            raise ValueError('line parameters must be positive')
        if self.output_tap not in OUTPUT_TAPS:
            raise ValueError(f'output_tap must be one of {OUTPUT_TAPS}')


def build_transmission_line(params):
    """Assemble the RLC-ladder transmission line as an SE-DAE of order ``5q``.

    States are ordered ``[I_R, U_C | U_R, I_C, U_L]``; the first ``2q``
    (inductor currents, capacitor voltages) are dynamic. The input is the
    source voltage ``U0`` entering the first loop's Kirchhoff equation.
    """
    q = int(params.q)
    eye = sps.identity(q, format='csr')
    zero = sps.csr_matrix((q, q))
    up = sps.eye(q, k=1, format='csr')
    down = sps.eye(q, k=-1, format='csr')
    e11 = sps.diags(np.r_[np.full(q, params.l_per), np.full(q, params.c_per)], format='csr')
    a11 = sps.csr_matrix((2 * q, 2 * q))
    # L dI_R/dt = U_L ; C dU_C/dt = I_C
    a12 = sps.bmat([[zero, zero, eye], [zero, eye, zero]], format='csr')
    # U_R = R I_R ; I_Ri - I_R(i+1) = I_Ci ; U_Ci - U_C(i-1) + U_Ri + U_Li = [i == 1] U0
    a21 = sps.bmat([[-params.r_per * eye, zero], [eye - up, zero], [zero, eye - down]], format='csr')
    a22 = sps.bmat([[eye, zero, zero], [zero, -eye, zero], [eye, zero, eye]], format='csr')
    b11 = np.zeros((2 * q, 1))
    b22 = np.zeros((3 * q, 1))
    b22[2 * q, 0] = -1.0  # 0 = A x - delta_B U0
    c11 = np.zeros((1, 2 * q))
    c22 = np.zeros((1, 3 * q))
    if params.output_tap == 'end_capacitor_voltage':
        c11[0, 2 * q - 1] = 1.0
    else:
        c22[0, 2 * q] = 1.0
    return SemiExplicitDAE(e11, a11, a12, a21, a22, b11, b22, c11, c22, np.zeros((1, 1)))


def random_semi_explicit(n_dyn, n_alg, n_inputs=1, n_outputs=1, rng=None, b22=True, c22=True,
                         feedthrough=False, dissipative=True):
    """Random asymptotically stable SE-DAE for tests and demos.

    With ``dissipative=True`` the full ``A`` satisfies ``A + A^T < 0`` and
    ``E11`` is SPD, so the underlying ODE is strictly dissipative. Otherwise
    the dynamic block is a random stable matrix scrambled by a non-orthogonal
    transformation.
    """
    rng = np.random.default_rng(rng)
    n = n_dyn + n_alg
    m = rng.standard_normal((n, n))
    k = rng.standard_normal((n, n))
    a = -(m.T @ m / n + 0.1 * np.eye(n)) + (k - k.T) / 2
    g = rng.standard_normal((n_dyn, n_dyn))
    e11 = g @ g.T / n_dyn + np.eye(n_dyn)
    if not dissipative:
        t = np.eye(n_dyn) + 0.5 * rng.standard_normal((n_dyn, n_dyn)) / np.sqrt(n_dyn)
        a[:n_dyn, :] = t @ a[:n_dyn, :]
        e11 = t @ e11
    b = rng.standard_normal((n, n_inputs))
    c = rng.standard_normal((n_outputs, n))
    if not b22:
        b[n_dyn:] = 0.0
    if not c22:
        c[:, n_dyn:] = 0.0
    d = rng.standard_normal((n_outputs, n_inputs)) if feedthrough else np.zeros((n_outputs, n_inputs))
    return SemiExplicitDAE(e11, a[:n_dyn, :n_dyn], a[:n_dyn, n_dyn:], a[n_dyn:, :n_dyn],
                           a[n_dyn:, n_dyn:], b[:n_dyn], b[n_dyn:], c[:, :n_dyn], c[:, n_dyn:], d)


# ---------------------------------------------------------------------------
# Matrix Market ingestion


@dataclass(frozen=True, eq=False)
class LoadedModel:
    dae: SemiExplicitDAE
    permutation: np.ndarray
    source: dict


def _read_mtx(path):
    m = spio.mmread(str(path))
    return sps.csr_matrix(m) if sps.issparse(m) else np.atleast_2d(np.asarray(m, dtype=float))


def semi_explicit_from_descriptor(e, a, b, c, d=None, n_dyn=None):
    """Permute a descriptor system symmetrically into semi-explicit form.

    Indices whose row *and* column of `E` vanish become algebraic and are
    moved last; all other indices keep their relative order.

    Returns
    -------
    (SemiExplicitDAE, permutation)
        ``permutation[k]`` is the original index of the k-th new state.

    Raises
    ------
    NotSemiExplicit
        If a zero row of `E` has a nonzero column (or vice versa), or the
        resulting ``E11``/``A22`` are singular.
    """
    e = sps.csr_matrix(e, dtype=float)
    a = sps.csr_matrix(a, dtype=float)
    b = as_dense(b).astype(float)
    c = as_dense(c).astype(float)
    n = e.shape[0]
    if e.shape != (n, n) or a.shape != (n, n) or b.shape[0] != n or c.shape[1] != n:
        raise DimensionMismatch('inconsistent descriptor dimensions')
    d = np.zeros((c.shape[0], b.shape[1])) if d is None else as_dense(d).astype(float)
    e.eliminate_zeros()
    zero_row = np.diff(e.indptr) == 0
    zero_col = np.diff(e.tocsc().indptr) == 0
    if np.any(zero_row != zero_col):
        bad = np.flatnonzero(zero_row != zero_col)[:5]
        raise NotSemiExplicit(f'E has zero rows/columns that do not pair up (indices {bad.tolist()})')
    dyn = np.flatnonzero(~zero_row)
    alg = np.flatnonzero(zero_row)
    if n_dyn is not None and n_dyn != len(dyn):
        raise NotSemiExplicit(f'declared n_dyn={n_dyn} but E has {len(dyn)} nonzero rows')
    if len(dyn) == 0:
        raise NotSemiExplicit('E is zero')
    perm = np.r_[dyn, alg]
    ap = a[perm][:, perm]
    k = len(dyn)
    try:
        dae = SemiExplicitDAE(e[dyn][:, dyn], ap[:k, :k], ap[:k, k:], ap[k:, :k], ap[k:, k:],
                              b[dyn], b[alg], c[:, dyn], c[:, alg], d)
    except DimensionMismatch as exc:
        raise NotSemiExplicit(str(exc)) from exc
    report = validate_semi_explicit(dae)
    if not report.e11_nonsingular:
        raise NotSemiExplicit('E11 is singular')
    if len(alg) and not report.a22_nonsingular:
        raise NotSemiExplicit('A22 is singular (index > 1)')
    return dae, perm


def load_matrix_market(config, base_dir=None):
    """Load ``E, A, B, C[, D]`` Matrix Market files and partition them.

    Parameters
    ----------
    config
        Path to a JSON sidecar or an equivalent dict with keys ``E``, ``A``,
        ``B``, ``C``, optional ``D`` (file names, relative to the sidecar)
        and optional ``n_dyn``.
    base_dir
        Directory used to resolve relative file names when `config` is a dict.

    Returns
    -------
    LoadedModel
    """
    if not isinstance(config, dict):
        path = Path(config)
        base_dir = path.parent if base_dir is None else base_dir
        config = json.loads(path.read_text())
    base = Path(base_dir or '.')
    mats = {}
    for key in ('E', 'A', 'B', 'C', 'D'):
        if config.get(key):
            mats[key] = _read_mtx(base / config[key])
    missing = {'E', 'A', 'B', 'C'} - mats.keys()
    if missing:
        raise ValueError(f'config lacks matrices {sorted(missing)}')
    dae, perm = semi_explicit_from_descriptor(mats['E'], mats['A'], mats['B'], mats['C'],
                                              mats.get('D'), config.get('n_dyn'))
    return LoadedModel(dae, perm, dict(config))


def write_matrix_market(dae, directory, name='model', extra=None):
    """Write the assembled system as ``.mtx`` files plus a JSON sidecar.

    Returns the sidecar path.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    e, a, b, c, d = dae.descriptor()
    files = {}
    for key, m in (('E', e), ('A', a), ('B', b), ('C', c), ('D', d)):
        fname = f'{name}_{key}.mtx'
        spio.mmwrite(str(directory / fname), sps.coo_matrix(m), field='real', symmetry='general')
        files[key] = fname
    sidecar = dict(files, n_dyn=dae.n_dyn, **(extra or {}))
    path = directory / f'{name}.json'
    path.write_text(json.dumps(sidecar, indent=2))
    return path
