"""Diagnostics for full and reduced models.

Stability, H2 errors through the dense underlying ODE, tangential
interpolation residuals and a comparison report with JSON/CSV export.
"""
import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.linalg import block_diag
from scipy.signal import find_peaks

from daemor.errors import FeedthroughMismatch
from daemor.linalg import as_dense, eigenvalues_dense
from daemor.model import OdeRealization, SemiExplicitDAE, frequency_response, transfer_eval, underlying_ode
from daemor.reduce import h2_norm_squared
from daemor.sdtransform import is_strictly_dissipative


@dataclass(frozen=True)
class StabilityResult:
    stable: bool
    spectrum: np.ndarray
    max_real_part: float
    n_infinite: int = 0

    def __bool__(self):
        return self.stable


def stability_check(system):
    """Asymptotic stability from the finite eigenvalues of ``(A, E)``."""
    e, a, *_ = system.descriptor()
    spectrum = eigenvalues_dense(a, e)
    lam = spectrum.finite
    max_re = float(lam.real.max()) if len(lam) else -np.inf
    return StabilityResult(bool(np.all(lam.real < 0)), lam, max_re, spectrum.n_infinite)


def _as_ode(system):
    if isinstance(system, SemiExplicitDAE):
        return underlying_ode(system)
    if isinstance(system, OdeRealization):
        return system
    return OdeRealization(*(as_dense(x) for x in system.descriptor()))


def error_system(full, rom):
    """Dense ODE realization of ``G - G_r`` (block-diagonal augmentation)."""
    g = _as_ode(full)
    r = _as_ode(rom)
    return OdeRealization(block_diag(g.e1, r.e1), block_diag(g.a1, r.a1), np.vstack([g.b1, r.b1]),
                          np.hstack([g.c1, -r.c1]), g.d1 - r.d1)


def _h2_quadrature(system, epsabs):
    """Squared H2 norm by quadrature of ``||G(i w)||_F^2`` over ``w >= 0``.

    Uses ``w = scale * tan(theta)`` with the pole magnitudes as breakpoints.
    """
    e, a, b, c = system.e1, system.a1, system.b1, system.c1
    mags = np.abs(eigenvalues_dense(a, e).finite)
    mags = mags[mags > 0]
    scale = float(np.sqrt(mags.min() * mags.max())) if len(mags) else 1.0

    def integrand(theta):
        w = scale * np.tan(theta)
        g = c @ np.linalg.solve(1j * w * e - a, b)
        return float(np.sum(np.abs(g) ** 2)) * scale / np.cos(theta) ** 2

    points = np.unique(np.round(np.arctan(mags / scale), 6))[:50]
    with warnings.catch_warnings():
        # an exact reduced model leaves only round-off to integrate
        warnings.simplefilter('ignore', IntegrationWarning)
        val, _ = quad(integrand, 0.0, np.pi / 2, points=points, limit=200, epsabs=epsabs, epsrel=1e-7)
    return val / np.pi


def h2_error_direct(full, rom, strictly_proper=False, tol=1e-9, cancellation=1e-8):
    """``||G - G_r||_H2`` from a Lyapunov solve on the dense error system.

    The Gramian value is a difference of terms of size ``||G||^2 + ||G_r||^2``
    and is therefore only accurate to about the square root of machine
    precision relative to ``||G||``. Below ``cancellation`` times that scale
    it is recomputed by quadrature of the pointwise error, which keeps
    near-exact reduced models distinguishable from round-off.

    Parameters
    ----------
    strictly_proper
        Compare only the strictly proper parts (feedthroughs ignored).
    tol
        Largest feedthrough difference accepted otherwise, relative to
        ``max(1, |D1|)``.
    cancellation
        Relative threshold on the squared error for the quadrature route.

    Raises
    ------
    FeedthroughMismatch
        If the feedthroughs differ: the error would not be in H2.
    UnstableModel
        If the error system has a pole with ``Re >= 0``.
    """
    g, r = _as_ode(full), _as_ode(rom)
    err = error_system(g, r)
    if not strictly_proper:
        scale = max(1.0, np.abs(g.d1).max())
        gap = np.abs(err.d1).max()
        if gap > tol * scale:
            raise FeedthroughMismatch(f'feedthrough differs by {gap:.3e}; the error is not strictly proper')
    sq = h2_norm_squared(err)
    size = h2_norm_squared(g) + h2_norm_squared(r)
    if sq < cancellation * size:
        sq = _h2_quadrature(err, epsabs=1e-26 * size)
    return float(np.sqrt(sq))


def interpolation_residuals(full, rom, data, *more):
    """Tangential interpolation residuals per shift.

    For input data: ``||(G - G_r)(s) r|| / ||G(s) r||``; for output data the
    dual ``||l^T (G - G_r)(s)|| / ||l^T G(s)||``. Several data sets (e.g.
    both sides of a Hermite reduction) may be given.

    Returns
    -------
    list of dict
        Keys ``side``, ``shift``, ``residual``.
    """
    out = []
    for d in (data, *more):
        for s, x in d.tangential_data():
            g = transfer_eval(full, s)
            gr = transfer_eval(rom, s)
            if d.side == 'input':
                ref, diff = g @ x, (g - gr) @ x
            else:
                ref, diff = x @ g, x @ (g - gr)
            den = np.linalg.norm(ref)
            res = np.linalg.norm(diff) / den if den > 0 else np.linalg.norm(diff)
            out.append({'side': d.side, 'shift': complex(s), 'residual': float(res)})
    return out


def peak_frequencies(system, omegas, count, channel=(0, 0)):
    """Frequencies of the `count` highest local maxima of ``|G(i omega)|``.

    Used to place imaginary-axis shifts on resonances. If fewer peaks exist,
    the remaining frequencies are taken log-spaced over the grid.
    """
    resp = frequency_response(system, omegas)
    mag = np.abs(resp.values[:, channel[0], channel[1]])
    mag = np.where(np.isfinite(mag), mag, 0.0)
    peaks, _ = find_peaks(mag)
    chosen = list(np.sort(resp.omega[peaks[np.argsort(mag[peaks])[::-1][:count]]]))
    if len(chosen) < count:
        fill = np.logspace(np.log10(resp.omega[0]), np.log10(resp.omega[-1]), count - len(chosen) + 2)[1:-1]
        chosen = sorted(chosen + list(fill))
    return np.asarray(chosen)


@dataclass
class ModelRecord:
    name: str
    order: int
    stable: bool
    max_real_part: float
    dissipative: bool
    e1_min_eig: float
    a1_symmpart_max_eig: float
    h2_error: float = None
    max_rel_freq_error: float = None
    interpolation: list = field(default_factory=list)


@dataclass
class ComparisonReport:
    """Per-model stability/dissipativity flags backed by numeric margins."""

    models: list
    omega: np.ndarray = None
    rel_errors: dict = field(default_factory=dict)

    def record(self, name):
        return next(m for m in self.models if m.name == name)

    def to_dict(self):
        def clean(x):
            if isinstance(x, complex):
                return [x.real, x.imag]
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            if isinstance(x, list):
                return [clean(v) for v in x]
            if isinstance(x, (np.floating, np.bool_)):
                return x.item()
            return x
        return {'models': [clean(vars(m)) for m in self.models],
                'omega': None if self.omega is None else self.omega.tolist(),
                'rel_errors': {k: v.tolist() for k, v in self.rel_errors.items()}}

    def to_json(self, path=None):
        doc = self.to_dict()
        if path is not None:
            Path(path).write_text(json.dumps(doc, indent=1))
        return doc

    def to_csv(self, path):
        """One row per model: order, dissipative, stable and their margins."""
        cols = ['model', 'order', 'dissipative', 'stable', 'max_real_part', 'e1_min_eig',
                'a1_symmpart_max_eig', 'h2_error', 'max_rel_freq_error']
        with open(path, 'w', newline='') as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for m in self.models:
                writer.writerow([m.name, m.order, int(m.dissipative), int(m.stable), repr(m.max_real_part),
                                 repr(m.e1_min_eig), repr(m.a1_symmpart_max_eig),
                                 '' if m.h2_error is None else repr(m.h2_error),
                                 '' if m.max_rel_freq_error is None else repr(m.max_rel_freq_error)])


def _record(name, system):
    stab = stability_check(system)
    diss = is_strictly_dissipative(system)
    order = system.n_dyn if isinstance(system, SemiExplicitDAE) else system.descriptor()[0].shape[0]
    return ModelRecord(name, int(order), stab.stable, stab.max_real_part, diss.strictly_dissipative,
                       diss.e1_min_eig, diss.a1_symmpart_max_eig)


def compare(full, roms, omegas=None, interpolation=None, h2=True, full_name='FOM', rel_floor=1e-6):
    """Build a :class:`ComparisonReport` of `full` against named reduced models.

    Parameters
    ----------
    roms
        Mapping name -> reduced model.
    omegas
        Frequency grid for relative errors ``|G - G_r| / max(|G|, f)`` (max
        over channels), optional. The floor ``f`` is `rel_floor` times the
        largest ``|G|`` on the grid, so points where ``|G|`` is at round-off
        level do not dominate.
    interpolation
        Mapping name -> list of InterpolationData to check.
    h2
        Compute direct H2 errors (stability and matching feedthrough
        required; failures are recorded as ``None``).
    rel_floor
        See `omegas`.
    """
    models = [_record(full_name, full)]
    report = ComparisonReport(models)
    g = None
    if omegas is not None:
        g = frequency_response(full, omegas).values
        report.omega = np.asarray(omegas, dtype=float)
    for name, rom in roms.items():
        rec = _record(name, rom)
        if h2:
            try:
                rec.h2_error = h2_error_direct(full, rom)
            except Exception:  # noqa: BLE001 - unstable or improper errors have no H2 norm
                rec.h2_error = None
        if g is not None:
            gr = frequency_response(rom, omegas).values
            mag = np.abs(g).max(axis=(1, 2))
            den = np.maximum(mag, max(rel_floor * np.nanmax(mag), np.finfo(float).tiny))
            rel = np.abs(g - gr).max(axis=(1, 2)) / den
            report.rel_errors[name] = rel
            rec.max_rel_freq_error = float(np.nanmax(rel))
        for data in (interpolation or {}).get(name, []):
            rec.interpolation += interpolation_residuals(full, rom, data)
        models.append(rec)
    return report
