"""Cumulative reduction (CURE) with pseudo-optimal steps and SPARK shifts.

Input side: a reduced model ``G_r = (E_r, A_r, B_r, C_r)`` obtained with an
input Krylov basis ``V`` (``A V - E V S - B R = 0``) whose matrices satisfy
``A_r - E_r S - B_r R = 0`` factors the error as::

    G - G_r = G_perp * G~_r,
    G_perp = (E, A, B_perp, C),  B_perp = B - E V E_r^{-1} B_r,
    G~_r = (E_r, A_r, B_r, R, I).

Reducing ``G_perp`` again and again and collecting the partial models gives
a cumulated model ``G^S`` with ``G = G^S + G_perp,k * G~^S`` after each step
``k``. The output side mirrors this with ``C_perp = C - C_r E_r^{-1} W^T E``
and ``G - G_r = G~_r * G_perp``.

With pseudo-optimal (PORK) steps every step removes ``||G_r,k||^2`` from
the squared H2 error, so the error never grows. SPARK chooses each order-2
step by maximizing ``||G_r||_H2`` over two real shift parameters.
"""
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize as spopt
from scipy.linalg import block_diag

from daemor.errors import (DaemorError, DimensionMismatch, OptimizerFailed, PseudoOptimalityViolated,
                           StagnationDetected)
from daemor.krylov import InterpolationData, shifts_to_sylvester
from daemor.linalg import as_dense, lu_factor
from daemor.model import OdeRealization, SemiExplicitDAE, implicit_feedthrough, strictly_proper, transfer_eval
from daemor.reduce import ReducedModel, h2_norm_squared, pork, pork_norm_squared

logger = logging.getLogger(__name__)

EPS_PARAM = 1e-12


# ---------------------------------------------------------------------------
# system views


def _replace_input(system, b):
    b = np.asarray(b, dtype=float)
    if isinstance(system, SemiExplicitDAE):
        return system.with_blocks(b11=b[:system.n_dyn], b22=b[system.n_dyn:])
    if isinstance(system, OdeRealization):
        return system.with_blocks(b1=b)
    return system.with_blocks(br=b)


def _replace_output(system, c):
    c = np.asarray(c, dtype=float)
    if isinstance(system, SemiExplicitDAE):
        return system.with_blocks(c11=c[:, :system.n_dyn], c22=c[:, system.n_dyn:])
    if isinstance(system, OdeRealization):
        return system.with_blocks(c1=c)
    return system.with_blocks(cr=c)


def _spectral_scale(system):
    e, a, _, _, _ = system.descriptor()
    ne = np.sqrt(abs(e.multiply(e).sum())) if hasattr(e, 'multiply') else np.linalg.norm(e)
    na = np.sqrt(abs(a.multiply(a).sum())) if hasattr(a, 'multiply') else np.linalg.norm(a)
    return float(na / ne) if ne > 0 else 1.0


# ---------------------------------------------------------------------------
# SPARK


def spark_data(p1, p2, direction, side='input'):
    """Order-2 interpolation data for the mirrored shift pair ``p1 +- sqrt(p1^2 - p2)``.

    ``S = [[p1, b], [(p1^2 - p2) / b, p1]]``, ``R = [r, 0]``: the eigenvalues
    have sum ``2 p1`` and product ``p2``, real for ``p1^2 >= p2`` and complex
    conjugate otherwise, and ``(S, R)`` is observable for any ``r != 0``.
    The coupling ``b = sqrt(|p1^2 - p2| + (1e-3 p1)^2)`` balances ``S``; it
    does not affect the reduced transfer function.
    """
    delta = p1 * p1 - p2
    beta = np.sqrt(abs(delta) + (1e-3 * p1) ** 2)
    s = np.array([[p1, beta], [delta / beta, p1]])
    r = np.column_stack([np.asarray(direction, dtype=float).ravel(), np.zeros(len(np.ravel(direction)))])
    disc = np.lib.scimath.sqrt(delta)
    shifts = (complex(p1 + disc), complex(p1 - disc))
    if side == 'output':
        return InterpolationData(s.T, r.T, 'output', shifts)
    return InterpolationData(s, r, 'input', shifts)


@dataclass(frozen=True, eq=False)
class SparkResult:
    """Optimized shift parameters and the order-2 pseudo-optimal model.

    ``p1 = (s1 + s2) / 2`` and ``p2 = s1 s2``; `trace` lists the best cost
    ``||G_r||^2`` after each optimizer iteration.
    """

    p1: float
    p2: float
    rom: ReducedModel
    norm: float
    trace: tuple
    data: InterpolationData
    basis: object = field(repr=False, default=None)
    n_evals: int = 0
    grad_norm: float = np.nan
    converged: bool = False

    @property
    def shifts(self):
        return self.data.shifts


def _default_direction(system, side, sigma):
    _, _, b, c, _ = system.descriptor()
    m, p = b.shape[1], c.shape[0]
    width = m if side == 'input' else p
    if width == 1:
        return np.ones(1)
    g = transfer_eval(system, sigma)
    u, _, vh = np.linalg.svd(g)
    x = vh[0].conj() if side == 'input' else u[:, 0]
    x = np.real(x * np.exp(-1j * np.angle(x[np.argmax(np.abs(x))])))
    return x / np.linalg.norm(x)


def spark(system, init=None, side='input', direction=None, max_evals=400, grad_tol=1e-6, restarts=3,
          scan=None):
    """Locally maximize ``||G_r||_H2`` over order-2 pseudo-optimal models.

    Parameters
    ----------
    system
        Strictly proper system to approximate (e.g. ``G_perp`` in CURE).
    init
        Starting ``(p1, p2)``, both positive. By default a scan over double
        real shifts ``logspace(-6, 6, 25) * ||A||_F / ||E||_F`` picks the
        start.
    direction
        Tangential direction; for MIMO systems defaults to the dominant
        right (left) singular vector of ``G`` at the initial shift.
    max_evals
        Budget of cost evaluations per Nelder-Mead run.
    grad_tol
        Stop when the finite-difference gradient with respect to
        ``(log p1, log p2)`` is below ``grad_tol * J``.
    restarts
        Nelder-Mead restarts from the incumbent when the gradient test fails.

    Raises
    ------
    OptimizerFailed
        If no start yields a finite cost.
    """
    evals = [0]
    cache = {}

    def cost(p1, p2, direction):
        key = (p1, p2)
        if key not in cache:
            evals[0] += 1
            data = spark_data(p1, p2, direction, side)
            try:
                rom, basis = pork(system, data, side, return_basis=True)
                cache[key] = (pork_norm_squared(rom), rom, basis, data)
            except (DaemorError, np.linalg.LinAlgError) as exc:
                logger.debug('spark cost failed at (%g, %g): %s', p1, p2, exc)
                cache[key] = (-np.inf, None, None, data)
        return cache[key]

    if init is None:
        scale0 = _spectral_scale(system)
        grid = np.logspace(-6, 6, 25) * scale0 if scan is None else np.asarray(scan, dtype=float)
        if direction is None:
            direction = _default_direction(system, side, float(grid[len(grid) // 2]))
        vals = [cost(p, p * p, direction)[0] for p in grid]
        best = int(np.argmax(vals))
        if not np.isfinite(vals[best]):
            raise OptimizerFailed('no finite cost on the initial shift scan')
        init = (grid[best], grid[best] ** 2)
    p1, p2 = (max(float(x), EPS_PARAM) for x in init)
    if init[0] <= 0 or init[1] <= 0:
        raise OptimizerFailed(f'initial parameters must be positive, got {init}')
    if direction is None:
        direction = _default_direction(system, side, p1)
    j0 = cost(p1, p2, direction)[0]
    if not np.isfinite(j0) or j0 <= 0:
        raise OptimizerFailed(f'infeasible initialization (cost {j0})')

    def to_params(x):
        return max(np.exp(x[0]), EPS_PARAM), max(np.exp(x[1]), EPS_PARAM)

    def objective(x):
        j = cost(*to_params(x), direction)[0]
        return -j / j0 if np.isfinite(j) else np.inf

    def grad(x, h=1e-5):
        g = np.zeros(2)
        for i in range(2):
            dx = np.zeros(2)
            dx[i] = h
            g[i] = (objective(x + dx) - objective(x - dx)) / (2 * h)
        return np.linalg.norm(g)

    x = np.log([p1, p2])
    trace = [j0]
    gnorm = np.inf
    converged = False
    for _ in range(restarts + 1):
        def record(xk):
            trace.append(max(trace[-1], -objective(xk) * j0))
        res = spopt.minimize(objective, x, method='Nelder-Mead', callback=record,
                             options={'maxfev': max_evals, 'xatol': 1e-10, 'fatol': 1e-15,
                                      'initial_simplex': None})
        if res.fun <= objective(x):
            x = res.x
        gnorm = grad(x)
        if gnorm < grad_tol:
            converged = True
            break
    p1, p2 = to_params(x)
    j, rom, basis, data = cost(p1, p2, direction)
    if rom is None:
        raise OptimizerFailed('optimizer ended at an infeasible point')
    return SparkResult(p1, p2, rom, float(np.sqrt(j)), tuple(trace), data, basis, evals[0],
                       float(gnorm * j0), converged)


def h2_error_pseudo_optimal(norm_g_sp_sq, rom):
    """``sqrt(||G^sp||^2 - ||G_r^sp||^2)`` for a pseudo-optimal `rom`.

    Small negative differences (roundoff) are clamped to zero; a clamp larger
    than ``1e-9 * ||G^sp||^2`` is logged as a warning.

    Raises
    ------
    PseudoOptimalityViolated
        If the difference is below ``-1e-6 * ||G^sp||^2``.
    """
    diff = norm_g_sp_sq - h2_norm_squared(rom)
    if diff < -1e-6 * norm_g_sp_sq:
        raise PseudoOptimalityViolated(f'||G||^2 - ||G_r||^2 = {diff:.3e} < 0')
    if diff < -1e-9 * norm_g_sp_sq:
        logger.warning('clamped negative squared error %.3e', diff)
    return float(np.sqrt(max(diff, 0.0)))


# ---------------------------------------------------------------------------
# CURE


@dataclass(frozen=True, eq=False)
class CureState:
    """Bookkeeping of a cumulative reduction.

    Attributes
    ----------
    system
        The strictly proper system being reduced.
    perp
        ``B_perp`` (N x m, input side) or ``C_perp`` (p x N, output side).
    rom
        Cumulated model ``G^S`` (without feedthrough).
    directions
        ``R^S`` (input side) or ``L^S`` (output side) of ``G~^S``.
    bases
        Accumulated basis columns ``[V_1, ..., V_k]``.
    feedthrough
        ``D + D_imp`` of the original system, attached to the final model.
    """

    system: object
    side: str
    perp: np.ndarray
    rom: ReducedModel
    directions: np.ndarray
    bases: np.ndarray
    feedthrough: np.ndarray
    k: int = 0
    history: tuple = ()
    norm_full_sq: float = None

    @property
    def order(self):
        return self.rom.order

    def perp_system(self):
        """``G_perp`` of the current step as a system view."""
        if self.side == 'input':
            return _replace_input(self.system, self.perp)
        return _replace_output(self.system, self.perp)

    def tilde(self):
        """``G~^S`` as a reduced model (feedthrough ``I``)."""
        r = self.rom
        if self.side == 'input':
            return ReducedModel(r.er, r.ar, r.br, self.directions, np.eye(self.directions.shape[0]))
        return ReducedModel(r.er, r.ar, self.directions, r.cr, np.eye(self.directions.shape[1]))

    def perp_recomputed(self):
        """``B_perp`` (``C_perp``) recomputed from the accumulated quantities."""
        e, _, b, c, _ = self.system.descriptor()
        if self.order == 0:
            return as_dense(b) if self.side == 'input' else as_dense(c)
        lu = lu_factor(self.rom.er)
        if self.side == 'input':
            return as_dense(b) - e @ (self.bases @ lu.solve(self.rom.br))
        return as_dense(c) - (lu.solve(self.rom.cr.T, trans=True).T @ self.bases.T) @ e

    def final_rom(self):
        """Cumulated model with the exact feedthrough ``D + D_imp`` attached."""
        prov = dict(self.rom.provenance, method='cure', side=self.side, steps=self.k,
                    shifts=[h['shifts'] for h in self.history])
        return replace(self.rom, dr=self.feedthrough.copy(), provenance=prov)


def cure_init(system, side='input', norm_full=False):
    """Start a CURE run; strips ``D`` and ``D_imp`` if present.

    The strictly proper realization shifts ``B22`` (input side) or ``C22``
    (output side) into the dynamic block, so every later step sees a system
    without implicit feedthrough.
    """
    if side not in ('input', 'output'):
        raise ValueError(f'side must be input or output, got {side!r}')
    _, _, b, c, d = system.descriptor()
    d_imp = implicit_feedthrough(system)
    feedthrough = as_dense(d) + d_imp
    if isinstance(system, SemiExplicitDAE):
        if np.any(d_imp) or np.any(d):
            system = strictly_proper(system, 'input_shifted' if side == 'input' else 'output_shifted')
    elif np.any(d):
        system = system.with_blocks(**{'d1' if isinstance(system, OdeRealization) else 'dr': np.zeros_like(d)})
    _, _, b, c, _ = system.descriptor()
    b, c = as_dense(b), as_dense(c)
    m, p = b.shape[1], c.shape[0]
    big_n = b.shape[0]
    empty = ReducedModel(np.zeros((0, 0)), np.zeros((0, 0)), np.zeros((0, m)), np.zeros((p, 0)), np.zeros((p, m)))
    dirs = np.zeros((m, 0)) if side == 'input' else np.zeros((0, p))
    norm_sq = h2_norm_squared(system) if norm_full else None
    return CureState(system, side, b if side == 'input' else c, empty, dirs, np.zeros((big_n, 0)),
                     feedthrough, 0, (), norm_sq)


def cure_step(state, step_rom, basis):
    """Fold one reduced model of ``G_perp`` into the cumulated model.

    Parameters
    ----------
    step_rom
        Reduced model of ``state.perp_system()`` satisfying
        ``A_r - E_r S - B_r R = 0`` (input side) for the pair of `basis`.
    basis
        The :class:`~daemor.krylov.KrylovBasis` used for `step_rom`.
    """
    if basis.side != state.side:
        raise DimensionMismatch(f'{basis.side}-side basis for an {state.side}-side CURE run')
    e = state.system.descriptor()[0]
    cum = state.rom
    n_old, n_new = cum.order, step_rom.order
    if basis.basis.shape != (state.bases.shape[0], n_new):
        raise DimensionMismatch(f'basis shape {basis.basis.shape} does not fit the step order {n_new}')
    lu = lu_factor(step_rom.er)
    er = block_diag(cum.er, step_rom.er)
    ar = block_diag(cum.ar, step_rom.ar)
    if state.side == 'input':
        r = basis.data.r
        if step_rom.n_inputs != state.perp.shape[1]:
            raise DimensionMismatch('step model has the wrong number of inputs')
        ar[n_old:, :n_old] = step_rom.br @ state.directions
        br = np.vstack([cum.br, step_rom.br])
        cr = np.hstack([cum.cr, step_rom.cr])
        perp = state.perp - e @ (basis.basis @ lu.solve(step_rom.br))
        directions = np.hstack([state.directions, r])
    else:
        l = basis.data.l
        if step_rom.n_outputs != state.perp.shape[0]:
            raise DimensionMismatch('step model has the wrong number of outputs')
        ar[:n_old, n_old:] = state.directions @ step_rom.cr
        br = np.vstack([cum.br, step_rom.br])
        cr = np.hstack([cum.cr, step_rom.cr])
        perp = np.asarray((lu.solve(step_rom.cr.T, trans=True).T @ basis.basis.T) @ e)
        perp = state.perp - perp
        directions = np.vstack([state.directions, l])
    rom = ReducedModel(er, ar, br, cr, np.zeros_like(cum.dr), cum.provenance)
    return replace(state, perp=np.asarray(perp), rom=rom, directions=directions,
                   bases=np.hstack([state.bases, basis.basis]), k=state.k + 1)


def _sample_points(system, count=5):
    scale = _spectral_scale(system)
    mags = scale * np.logspace(-2, 2, count)
    return mags * np.exp(1j * np.linspace(0.2, 1.4, count))


def factorization_residual(state, points=None):
    """Max relative residual of ``G = G^S + G_perp G~^S`` (or ``G~^S G_perp``).

    `points` defaults to five complex points spread over the spectral scale.
    """
    points = _sample_points(state.system) if points is None else points
    full = state.system
    perp = state.perp_system()
    tilde = state.tilde()
    worst = 0.0
    for s in points:
        g = transfer_eval(full, s)
        gs = transfer_eval(state.rom, s) if state.order else 0.0
        gp = transfer_eval(perp, s)
        gt = transfer_eval(tilde, s) if state.order else np.eye(gp.shape[1] if state.side == 'input'
                                                                 else gp.shape[0])
        prod = gp @ gt if state.side == 'input' else gt @ gp
        worst = max(worst, np.abs(g - gs - prod).max() / max(np.abs(g).max(), np.finfo(float).tiny))
    return float(worst)


def _stable(rom):
    lam = np.linalg.eigvals(np.linalg.solve(rom.er, rom.ar)) if rom.order else np.zeros(0)
    return bool(np.all(lam.real < 0)), float(lam.real.max()) if len(lam) else -np.inf


def cure_run(system, side='input', step='spark', order=None, rel_tol=1e-4, max_steps=50, schedule=None,
             norm_full=False, check_identity=True, log=None, spark_options=None, callback=None):
    """Cumulative reduction of `system`.

    Parameters
    ----------
    step
        ``'spark'`` (adaptive order-2 steps) or ``'pork'`` (fixed shifts from
        `schedule`).
    order
        Target cumulative order. Without it the run stops once a step adds
        less than `rel_tol` of the cumulated squared norm.
    schedule
        For ``step='pork'``: one entry per step, either
        :class:`~daemor.krylov.InterpolationData` of the right side or a list
        of shifts (directions default to all-ones).
    norm_full
        Also compute ``||G^sp||^2`` densely, which adds a pseudo-optimal error
        estimate to every log record.
    log
        Path or writable text stream for JSON-lines step records.
    callback
        Called with the new :class:`CureState` after every step.

    Returns
    -------
    (CureState, ReducedModel)

    Raises
    ------
    StagnationDetected
        If `max_steps` pass (or the schedule runs out) before the stop rule
        is met.
    """
    if step not in ('spark', 'pork'):
        raise ValueError(f"step must be 'spark' or 'pork', got {step!r}")
    if step == 'pork' and not schedule:
        raise ValueError('pork steps need a shift schedule')
    state = cure_init(system, side, norm_full)
    spark_options = dict(spark_options or {})
    stream = open(log, 'w') if isinstance(log, (str, bytes)) or hasattr(log, '__fspath__') else log
    try:
        while True:
            if order is not None and state.order >= order:
                break
            if state.k >= max_steps or (step == 'pork' and state.k >= len(schedule)):
                raise StagnationDetected(f'stop rule not met after {state.k} steps (order {state.order})')
            g_perp = state.perp_system()
            if step == 'spark':
                res = spark(g_perp, side=side, **spark_options)
                step_rom, basis, info = res.rom, res.basis, {'p1': res.p1, 'p2': res.p2,
                                                            'spark_converged': res.converged}
            else:
                data = schedule[state.k]
                if not isinstance(data, InterpolationData):
                    _, _, b, c, _ = g_perp.descriptor()
                    width = b.shape[1] if side == 'input' else c.shape[0]
                    data = shifts_to_sylvester(data, [np.ones(width)] * len(data), side)
                step_rom, basis = pork(g_perp, data, side, return_basis=True)
                info = {}
            step_sq = pork_norm_squared(step_rom)
            state = cure_step(state, step_rom, basis)
            total_sq = h2_norm_squared(state.rom)
            stable, max_re = _stable(state.rom)
            record = {'k': state.k, 'shifts': [[z.real, z.imag] for z in basis.data.shifts],
                      'step_norm': float(np.sqrt(step_sq)), 'cumulative_order': state.order,
                      'stable': stable, 'max_real_part': max_re,
                      'relative_contribution': step_sq / total_sq if total_sq > 0 else 0.0, **info}
            if check_identity:
                record['identity_residual'] = factorization_residual(state)
            if state.norm_full_sq is not None:
                record['h2_error_estimate'] = h2_error_pseudo_optimal(state.norm_full_sq, state.rom)
            state = replace(state, history=state.history + (record,))
            if stream is not None:
                stream.write(json.dumps(record) + '\n')
            if callback is not None:
                callback(state)
            if order is None and record['relative_contribution'] < rel_tol:
                break
    finally:
        if stream is not None and stream is not log:
            stream.close()
    return state, state.final_rom()
