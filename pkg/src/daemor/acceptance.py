"""Acceptance checks shared by the test suite and ``daemor verify``.

Every check returns a :class:`CheckResult`; none of them raises on a failed
condition. Checks that need external data report ``skipped``.
"""
import contextlib
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from daemor import reduce as _reduce
from daemor.adaptive import cure_run, factorization_residual
from daemor.analysis import h2_error_direct, interpolation_residuals, peak_frequencies, stability_check
from daemor.errors import LyapunovSingular
from daemor.krylov import (arnoldi_basis, input_krylov_basis, orthonormalize_basis, output_krylov_basis,
                           shifts_to_sylvester)
from daemor.linalg import solve_lyapunov_small
from daemor.model import (OdeRealization, TransmissionLineParams, build_transmission_line, frequency_response,
                          implicit_feedthrough, load_matrix_market, random_semi_explicit, strictly_proper,
                          transfer_eval, underlying_ode)
from daemor.reduce import h2_norm_squared, orthogonal_reduce, pork
from daemor.sdtransform import is_strictly_dissipative, sd_transform

DATASET_ENV = 'DAEMOR_DATASET_DIR'


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    elapsed: float = 0.0
    details: dict = field(default_factory=dict)
    skipped: bool = False
    note: str = ''

    def line(self):
        status = 'SKIPPED' if self.skipped else ('PASS' if self.passed else 'FAIL')
        extra = f' ({self.note})' if self.note else ''
        return f'[{status}] {self.number}. {self.name}: {self.elapsed:.2f}s{extra}'


def _timed(number, name, budget=None):
    def wrap(fn):
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                passed, details = fn(*args, **kwargs)
                note = ''
            except Exception as exc:  # noqa: BLE001 - a crash is a failed check
                passed, details, note = False, {}, f'{type(exc).__name__}: {exc}'
            elapsed = time.perf_counter() - t0
            if budget is not None:
                details['runtime_budget'] = budget
                if elapsed >= budget:
                    passed = False
                    note = note or f'runtime {elapsed:.2f}s exceeds {budget}s'
            if isinstance(passed, str):  # skip marker
                return CheckResult(number, name, True, elapsed, details, True, passed)
            return CheckResult(number, name, bool(passed), elapsed, details, False, note)
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return wrap


def _rel_max(x, ref):
    return float(np.abs(x).max() / max(np.abs(ref).max(), np.finfo(float).tiny))


def tline_peak_shifts(dae, pairs, side, omegas=None):
    """Imaginary-axis shift pairs at the `pairs` highest resonance peaks."""
    omegas = np.logspace(6, 10, 1000) if omegas is None else omegas
    peaks = peak_frequencies(dae, omegas, pairs)
    shifts = [x for w in peaks for x in (1j * w, -1j * w)]
    return shifts_to_sylvester(shifts, [1.0] * len(shifts), side)


@_timed(1, 'exact-order W-based orthogonal reduction', budget=1.0)
def check_w_based_exact():
    dae = build_transmission_line(TransmissionLineParams(10))
    basis = output_krylov_basis(dae, tline_peak_shifts(dae, 10, 'output'))
    rom = orthogonal_reduce(dae, basis)
    om = np.logspace(0, 7, 200)
    g = frequency_response(dae, om).values
    gr = frequency_response(rom, om).values
    err = float(np.max(np.abs(g - gr) / np.abs(g)))
    return err < 1e-8 and rom.order == 20, {'max_rel_error': err, 'order': rom.order, 'N': dae.order,
                                            'n_dyn': dae.n_dyn}


def _ode_projection(ode, v1):
    return (v1.T @ ode.e1 @ v1, v1.T @ ode.a1 @ v1, v1.T @ ode.b1, ode.c1 @ v1, ode.d1)


@_timed(2, 'V-based failure reproduction', budget=1.0)
def check_v_based_failure():
    dae = build_transmission_line(TransmissionLineParams(10))
    data = tline_peak_shifts(dae, 10, 'input')
    basis = orthonormalize_basis(input_krylov_basis(dae, data))
    rom = orthogonal_reduce(dae, basis, unsafe=True)
    ref = _ode_projection(underlying_ode(dae), basis.basis[:dae.n_dyn])
    dev = max(_rel_max(x - y, y) for x, y in zip(rom.descriptor(), ref) if np.any(y))
    res = max(r['residual'] for r in interpolation_residuals(dae, rom, data))
    stab = stability_check(rom)
    return dev > 1e-6 and res < 1e-8, {'max_rel_deviation': dev, 'max_interpolation_residual': res,
                                       'stable': stab.stable, 'max_real_part': stab.max_real_part}


def sd_pipeline(q, order, points=50):
    """Strict-dissipativity pipeline on the transmission line; returns a dict of margins."""
    dae = build_transmission_line(TransmissionLineParams(q))
    sd, record = sd_transform(dae)
    om = np.logspace(5, 9, points)
    g = frequency_response(dae, om).values
    tf_err = _rel_max(g - frequency_response(sd, om).values, g)
    out = {'transform_tf_error': tf_err, 'full_dissipative': is_strictly_dissipative(sd).strictly_dissipative,
           'lyapunov_residual': record.lyapunov_residual, 'spd_margin': record.spd_margin}
    for tag, side in (('w', 'output'), ('v', 'input')):
        basis = arnoldi_basis(sd, 0.0, order, side=side)
        rom = orthogonal_reduce(sd, basis, unsafe=side == 'input')
        rep = is_strictly_dissipative(rom)
        stab = stability_check(rom)
        out.update({f'{tag}_er_spd': rep.e1_spd, f'{tag}_ar_nd': rep.a1_symmpart_nd,
                    f'{tag}_dissipative': rep.strictly_dissipative, f'{tag}_stable': stab.stable,
                    f'{tag}_max_real_part': stab.max_real_part, f'{tag}_ar_symmpart_max_eig': rep.a1_symmpart_max_eig})
    return out


def _sd_passed(d):
    return (d['full_dissipative'] and d['w_er_spd'] and d['w_ar_nd'] and d['w_stable']
            and d['transform_tf_error'] < 1e-9 and not d['v_dissipative'])


@_timed(3, 'strict-dissipativity pipeline (q=20, n=10)')
def check_sd_pipeline():
    d = sd_pipeline(20, 10)
    return _sd_passed(d), d


@_timed(3, 'strict-dissipativity pipeline (q=140, n=100)', budget=120.0)
def check_sd_pipeline_full():
    d = sd_pipeline(140, 100)
    return _sd_passed(d), d


def pork_scalar_example():
    """``G = 1/(s+1)``, shift 1, r = 1: ``X = 1/2``, ``P = 2``, ``br = -2``, ``ar = -1``, ``G_r = G``.

    The matrices are checked in Krylov coordinates; the default coordinates
    must give the same transfer function and ``||G_r||^2 = 1/2``.
    """
    ode = OdeRealization([[1.0]], [[-1.0]], [[1.0]], [[1.0]], [[0.0]])
    data = shifts_to_sylvester([1.0], [1.0])
    try:
        lit = pork(ode, data, coordinates='krylov')
        rom = pork(ode, data)
    except LyapunovSingular:
        return False
    ok = (abs(lit.ar[0, 0] + 1) < 1e-14 and abs(lit.br[0, 0] + 2) < 1e-14
          and abs(lit.provenance['gramian'][0][0] - 2) < 1e-14 and abs(rom.ar[0, 0] + 1) < 1e-14
          and abs(_reduce.pork_norm_squared(rom) - 0.5) < 1e-14
          and all(abs(transfer_eval(m, 0.7j)[0, 0] - 1 / (1 + 0.7j)) < 1e-14 for m in (lit, rom)))
    return bool(ok)


def random_rhp_shifts(rng, count, width, min_gap=0.15):
    """Random shift set of `count` shifts with Re > 0 and matching random directions.

    Shifts lie in an annulus ``0.1 <= |s| <= 10`` and are separated by
    `min_gap` in ``log10 |s|`` or in argument, so the set stays well posed.
    """
    shifts, dirs = [], []

    def separated(s):
        return all(abs(np.log10(abs(s) / abs(t))) >= min_gap or abs(np.angle(s) - np.angle(t)) >= min_gap
                   for t in shifts)

    while len(shifts) < count:
        if count - len(shifts) >= 2 and rng.random() < 0.5:
            s = complex(10 ** rng.uniform(-1, 1), 10 ** rng.uniform(-1, 1))
            if not separated(s):
                continue
            d = rng.standard_normal(width) + 1j * rng.standard_normal(width)
            shifts += [s, s.conjugate()]
            dirs += [d, d.conj()]
        else:
            s = 10 ** rng.uniform(-1, 1)
            if not separated(s):
                continue
            shifts.append(s)
            dirs.append(rng.standard_normal(width))
    return shifts, dirs


def pork_contract_case(seed):
    rng = np.random.default_rng(seed)
    n_dyn, n_alg = int(rng.integers(6, 16)), int(rng.integers(2, 10))
    m, p = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    side = 'input' if seed % 2 == 0 else 'output'
    dae = random_semi_explicit(n_dyn, n_alg, m, p, rng, feedthrough=seed % 3 == 0,
                               dissipative=seed % 4 != 1)
    count = int(rng.integers(2, min(n_dyn, 6) + 1))
    shifts, dirs = random_rhp_shifts(rng, count, m if side == 'input' else p)
    data = shifts_to_sylvester(shifts, dirs, side)
    rom = pork(dae, data)
    lam = np.linalg.eigvals(rom.ar)
    target = -np.asarray(data.shifts)
    cost = np.abs(lam[:, None] - target[None, :])
    i, j = linear_sum_assignment(cost)
    eig_err = float((cost[i, j] / np.maximum(1.0, np.abs(target[j]))).max())
    interp = max(r['residual'] for r in interpolation_residuals(dae, rom, data))
    lhs = h2_error_direct(dae, rom, strictly_proper=True) ** 2
    g2 = h2_norm_squared(dae)
    rhs = g2 - h2_norm_squared(rom)
    identity = abs(lhs - rhs) / g2
    feed = bool(np.array_equal(rom.dr, dae.d + implicit_feedthrough(dae)))
    return {'seed': seed, 'side': side, 'eig_error': eig_err, 'interpolation': interp,
            'identity_error': identity, 'feedthrough_exact': feed}


@_timed(4, 'PORK contract (20 random systems)', budget=30.0)
def check_pork_contract(cases=20):
    scalar = pork_scalar_example()
    if not scalar:
        return False, {'scalar_example': False}
    rows = [pork_contract_case(seed) for seed in range(cases)]
    worst = {k: max(r[k] for r in rows) for k in ('eig_error', 'interpolation', 'identity_error')}
    ok = (scalar and worst['eig_error'] < 1e-9 and worst['interpolation'] < 1e-8
          and worst['identity_error'] < 1e-6 and all(r['feedthrough_exact'] for r in rows))
    return ok, {'scalar_example': scalar, **worst}


def feedthrough_decay(rom, dae, omegas):
    return np.array([abs(transfer_eval(dae, 1j * w) - transfer_eval(rom, 1j * w)).max() for w in omegas])


@_timed(5, 'SE-DAE PORK with implicit feedthrough', budget=5.0)
def check_implicit_feedthrough():
    dae = build_transmission_line(TransmissionLineParams(10, output_tap='first_inductor_voltage'))
    d_imp = implicit_feedthrough(dae)
    peaks = peak_frequencies(dae, np.logspace(6, 10, 1000), 5)
    shifts = [x for w in peaks for x in (w * (0.05 + 1j), w * (0.05 - 1j))]
    data = shifts_to_sylvester(shifts, [1.0] * len(shifts))
    rom = pork(dae, data)
    # same model from the strictly proper realization plus the feedthrough
    sp = pork(strictly_proper(dae, 'input_shifted'), data)
    om = np.logspace(7, 12, 51)
    ge = feedthrough_decay(rom, dae, om)
    ge_sp = max(_rel_max(transfer_eval(rom, 1j * w) - transfer_eval(sp, 1j * w) - d_imp, transfer_eval(rom, 1j * w))
                for w in om[::10])
    uncorrected = feedthrough_decay(rom.with_blocks(dr=dae.d), dae, om)
    tail = ge[om >= 1e11]
    exact = bool(np.array_equal(rom.dr, dae.d + d_imp))
    err_d = float(np.abs(underlying_ode(dae).d1 - rom.dr).max())
    ok = (exact and err_d == 0.0 and np.all(np.diff(tail) <= 0) and ge[-1] < 1e-3 * np.abs(d_imp).max()
          and uncorrected[-1] > 0.5 * np.abs(d_imp).max() and ge_sp < 1e-8)
    return ok, {'d_imp': d_imp.tolist(), 'dr_exact': exact, 'error_feedthrough': err_d,
                'error_at_1e7': float(ge[0]), 'error_at_1e12': float(ge[-1]),
                'uncorrected_error_at_1e12': float(uncorrected[-1]), 'strictly_proper_route_gap': ge_sp}


def _dataset_config():
    root = os.environ.get(DATASET_ENV)
    if not root:
        return None
    configs = sorted(Path(root).glob('*.json'))
    return configs[0] if configs else None


@_timed(6, 'CURE/SPARK on a random strictly proper SE-DAE', budget=60.0)
def check_cure_spark(seed=3):
    dae = random_semi_explicit(40, 160, 1, 1, np.random.default_rng(seed), c22=False, dissipative=False)
    errors, identities = [], []

    def after(state):
        errors.append(h2_error_direct(dae, state.final_rom()))
        identities.append(factorization_residual(state))

    state, rom = cure_run(dae, order=10, callback=after, check_identity=False)
    shifts = [complex(*z) for h in state.history for z in h['shifts']]
    stable = stability_check(rom)
    ok = (rom.order == 10 and state.k == 5 and all(s.real > 0 for s in shifts) and stable.stable
          and all(b <= a * (1 + 1e-10) for a, b in zip(errors, errors[1:])) and max(identities) < 1e-8)
    return ok, {'errors': errors, 'max_identity_residual': max(identities), 'min_shift_real': min(s.real for s in shifts),
                'max_real_part': stable.max_real_part}


@_timed(6, 'CURE/SPARK on the external power-system dataset')
def check_cure_spark_dataset():
    config = _dataset_config()
    if config is None:
        return f'set {DATASET_ENV} to a directory with a Matrix Market sidecar', {}
    loaded = load_matrix_market(config)
    state, rom = cure_run(loaded.dae, order=50, check_identity=False)
    stab = stability_check(rom)
    return stab.stable and rom.order == 50, {'config': str(config), 'max_real_part': stab.max_real_part,
                                             'steps': state.k}


def schur_complement_case(rng):
    n = int(rng.integers(2, 30))
    k = int(rng.integers(1, n))
    m = rng.standard_normal((n, n))
    s = rng.standard_normal((n, n))
    a = -(m.T @ m + 1e-3 * np.eye(n)) + (s - s.T)
    a1 = a[:k, :k] - a[:k, k:] @ np.linalg.solve(a[k:, k:], a[k:, :k])
    full_max = np.linalg.eigvalsh(a + a.T).max()
    return full_max, np.linalg.eigvalsh(a1 + a1.T).max()


@_timed(7, 'Schur complements keep A + A^T < 0 (50 cases)', budget=5.0)
def check_schur_complement(cases=50, seed=7):
    rng = np.random.default_rng(seed)
    rows = [schur_complement_case(rng) for _ in range(cases)]
    ok = all(f < 0 for f, _ in rows) and all(s < 0 for _, s in rows)
    return ok, {'max_schur_symmpart_eig': max(s for _, s in rows)}


def sylvester_equivalence_case(seed):
    rng = np.random.default_rng(1000 + seed)
    n_dyn, n_alg = int(rng.integers(3, 15)), int(rng.integers(1, 10))
    m, p = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    dae = random_semi_explicit(n_dyn, n_alg, m, p, rng, dissipative=seed % 2 == 0)
    ode = underlying_ode(dae)
    count = int(rng.integers(1, n_dyn + 1))
    out = {}
    for side, width in (('input', m), ('output', p)):
        shifts, dirs = random_rhp_shifts(rng, count, width)
        if rng.random() < 0.3:
            shifts = [-s.conjugate() for s in shifts]  # left half-plane shifts are fine for plain Krylov
        data = shifts_to_sylvester(shifts, dirs, side)
        s, r = data.sylvester_pair()
        if side == 'input':
            v = input_krylov_basis(dae, data).basis
            v1, v2 = v[:n_dyn], v[n_dyn:]
            res = ode.a1 @ v1 - ode.e1 @ v1 @ s - ode.b1 @ r
            scale = np.abs(ode.a1 @ v1).max() + np.abs(ode.e1 @ v1 @ s).max() + np.abs(ode.b1 @ r).max()
            v2_ref = dae.a22_lu().solve(-(dae.a21 @ v1) + dae.b22 @ r)
        else:
            w = output_krylov_basis(dae, data).basis
            v1, v2 = w[:n_dyn], w[n_dyn:]
            res = ode.a1.T @ v1 - ode.e1.T @ v1 @ s - ode.c1.T @ r
            scale = np.abs(ode.a1.T @ v1).max() + np.abs(ode.e1.T @ v1 @ s).max() + np.abs(ode.c1.T @ r).max()
            v2_ref = dae.a22_lu().solve(-(dae.a12.T @ v1) + dae.c22.T @ r, trans=True)
        out[f'{side}_residual'] = float(np.abs(res).max() / scale)
        out[f'{side}_bottom'] = _rel_max(v2 - v2_ref, np.abs(v).max() if side == 'input' else np.abs(w).max())
    return out


@_timed(8, 'Sylvester equivalence on the underlying ODE (20 cases)')
def check_sylvester_equivalence(cases=20):
    rows = [sylvester_equivalence_case(seed) for seed in range(cases)]
    worst = {k: max(r[k] for r in rows) for k in rows[0]}
    ok = (worst['input_residual'] < 1e-8 and worst['output_residual'] < 1e-8
          and worst['input_bottom'] < 1e-10 and worst['output_bottom'] < 1e-10)
    return ok, worst


CHECKS = (check_w_based_exact, check_v_based_failure, check_sd_pipeline, check_pork_contract,
          check_implicit_feedthrough, check_cure_spark, check_schur_complement, check_sylvester_equivalence)
SLOW_CHECKS = (check_sd_pipeline_full, check_cure_spark_dataset)


@contextlib.contextmanager
def lyapunov_sign_flip():
    """Mutation hook: make PORK solve ``a x + x a^T - q = 0`` instead.

    Used to show that the suite notices a convention error.
    """
    original = _reduce.solve_lyapunov_small

    def flipped(a, q):
        return solve_lyapunov_small(a, -np.asarray(q))

    _reduce.solve_lyapunov_small = flipped
    try:
        yield
    finally:
        _reduce.solve_lyapunov_small = original


def run_all(slow=False, checks=None):
    checks = checks if checks is not None else CHECKS + (SLOW_CHECKS if slow else SLOW_CHECKS[1:])
    return [check() for check in checks]
