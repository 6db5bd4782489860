"""Strictly dissipative realizations of semi-explicit DAEs.

The underlying ODE ``E1 x' = A1 x + ...`` is strictly dissipative when
``E1 = E1^T > 0`` and ``A1 + A1^T < 0``. Orthogonal projection preserves
both properties, hence stability.

An asymptotically stable SE-DAE is brought into this form by a left
multiplication of its equations with::

    T = [[E11^T P, -E11^T P A12 A22^{-1}],
         [0,        I                   ]]

where ``P = P^T > 0`` solves ``A1^T P E11 + E11^T P A1 + Q = 0`` (here with
``Q = I``). The algebraic rows are left untouched and the transfer function
is unchanged.
"""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sps

from daemor.errors import LyapunovSingular, NonUniqueSolution, NotPositiveDefinite, UnstableSystem
from daemor.linalg import as_dense, eigenvalues_dense, lu_factor, solve_lyapunov_small
from daemor.model import SemiExplicitDAE, underlying_ode


@dataclass(frozen=True)
class DissipativityReport:
    """Outcome of :func:`is_strictly_dissipative` with its numeric margins.

    ``e1_min_eig`` and ``a1_symmpart_max_eig`` are relative to the largest
    eigenvalue magnitude of the respective symmetric matrix.
    """

    e1_spd: bool
    e1_min_eig: float
    a1_symmpart_nd: bool
    a1_symmpart_max_eig: float
    shortcut_used: bool
    e1_symmetric: bool = True

    @property
    def strictly_dissipative(self):
        return self.e1_spd and self.a1_symmpart_nd

    def __bool__(self):
        return self.strictly_dissipative


def _sym_extreme(m, which):
    """Extremal eigenvalue of ``sym(m)`` divided by the spectral radius."""
    h = (m + m.T) / 2
    lam = np.linalg.eigvalsh(h)
    scale = np.abs(lam).max()
    if scale == 0:
        return 0.0
    return float((lam[0] if which == 'min' else lam[-1]) / scale)


def is_strictly_dissipative(system, tol=1e-10):
    """Check ``E1 = E1^T > 0`` and ``A1 + A1^T < 0`` of the underlying ODE.

    For a DAE the full matrix ``A`` is tried first: if ``A + A^T < 0`` then
    every Schur complement inherits the property and ``A1`` is never formed.

    Parameters
    ----------
    system
        SE-DAE, ODE realization or reduced model (anything with a
        ``descriptor()`` and nonsingular ``E`` for non-DAEs).
    tol
        Margins are relative; definiteness means a relative extremal
        eigenvalue beyond ``tol``.
    """
    if isinstance(system, SemiExplicitDAE):
        e1 = system.e11.toarray()
        a_full = as_dense(system.descriptor()[1])
    else:
        e1 = as_dense(system.descriptor()[0])
        a_full = None
    scale_e = max(abs(e1).max(), np.finfo(float).tiny)
    e1_sym = bool(np.abs(e1 - e1.T).max() <= 1e-12 * scale_e)
    e1_min = _sym_extreme(e1, 'min')
    e1_spd = e1_sym and e1_min > tol
    if a_full is not None:
        a_max = _sym_extreme(a_full, 'max')
        if a_max < -tol:
            return DissipativityReport(e1_spd, e1_min, True, a_max, True, e1_sym)
    a1 = underlying_ode(system).a1 if isinstance(system, SemiExplicitDAE) else as_dense(system.descriptor()[1])
    a_max = _sym_extreme(a1, 'max')
    return DissipativityReport(e1_spd, e1_min, a_max < -tol, a_max, False, e1_sym)


@dataclass(frozen=True)
class TransformRecord:
    """Data needed to reproduce or audit a strictly dissipative transform."""

    p: np.ndarray
    q_choice: str
    lyapunov_residual: float
    spd_margin: float
    e11_symmetry_error: float

    def to_json(self, path=None):
        doc = {'p': {'shape': list(self.p.shape), 'data': self.p.ravel().tolist()},
               'q_choice': self.q_choice,
               'lyapunov_residual': self.lyapunov_residual,
               'spd_margin': self.spd_margin,
               'e11_symmetry_error': self.e11_symmetry_error}
        if path is not None:
            Path(path).write_text(json.dumps(doc, indent=1))
        return doc


def sd_transform(dae):
    """Transform an asymptotically stable SE-DAE to strictly dissipative form.

    With ``a = E11^{-1} A1`` the equation ``a^T Y + Y a + I = 0`` is solved,
    which is the generalized equation for ``P`` with ``Y = E11^T P E11``.
    The new blocks are ``e11' = Y``, ``a11' = Y a``, ``a12' = 0`` and
    ``b11' = Y E11^{-1} B1``; ``a21, a22, b22, c11, c22, d`` are reused.

    Returns
    -------
    (SemiExplicitDAE, TransformRecord)

    Raises
    ------
    UnstableSystem
        If the underlying ODE has a finite eigenvalue with ``Re >= 0``.
    LyapunovSingular
        If the Lyapunov equation is not uniquely solvable.
    NotPositiveDefinite
        If the computed ``Y`` is not positive definite.
    """
    ode = underlying_ode(dae)
    lam = eigenvalues_dense(ode.a1, ode.e1).finite
    if np.any(lam.real >= 0):
        raise UnstableSystem(f'underlying ODE has eigenvalue with Re >= 0 (max Re = {lam.real.max():.3e})')
    e_lu = lu_factor(ode.e1)
    a = e_lu.solve(ode.a1)
    n = a.shape[0]
    try:
        y = solve_lyapunov_small(a.T, np.eye(n))
    except NonUniqueSolution as exc:
        raise LyapunovSingular(str(exc)) from exc
    y = (y + y.T) / 2
    res = a.T @ y + y @ a + np.eye(n)
    lam_y = np.linalg.eigvalsh(y)
    if lam_y[0] <= 0:
        raise NotPositiveDefinite(f'Lyapunov solution is not positive definite (min eig {lam_y[0]:.3e})')
    try:
        np.linalg.cholesky(y)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite('Lyapunov solution failed the Cholesky test') from exc
    m = y @ np.linalg.inv(ode.e1)  # E11^T P
    p = np.linalg.solve(ode.e1.T, m)
    transformed = dae.with_blocks(
        e11=sps.csr_matrix(y),
        a11=sps.csr_matrix(y @ a),
        a12=sps.csr_matrix(dae.a12.shape),
        b11=m @ ode.b1,
    )
    record = TransformRecord(
        p=(p + p.T) / 2,
        q_choice='identity',
        lyapunov_residual=float(np.abs(res).max()),
        spd_margin=float(lam_y[0] / lam_y[-1]),
        e11_symmetry_error=float(np.abs(y - y.T).max()),
    )
    return transformed, record
