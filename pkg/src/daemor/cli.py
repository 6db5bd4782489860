"""Command-line interface: ``daemor {generate,reduce,verify,bode,compare}``.

Every command that writes a run directory also writes ``config.json`` with
the resolved arguments (including the seed), so a run can be repeated with
``--config``. Outputs are CSV/JSON only.
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np

from daemor import acceptance
from daemor.adaptive import cure_run
from daemor.analysis import compare, peak_frequencies, stability_check
from daemor.errors import DaemorError
from daemor.krylov import (arnoldi_basis, input_krylov_basis, orthonormalize_basis, output_krylov_basis,
                           shifts_to_sylvester)
from daemor.model import (OUTPUT_TAPS, TransmissionLineParams, build_transmission_line, frequency_response,
                          load_matrix_market, random_semi_explicit, validate_semi_explicit, write_matrix_market)
from daemor.reduce import ReducedModel, orthogonal_reduce, pork, project_corrected
from daemor.sdtransform import sd_transform

METHODS = ('orthogonal-v', 'orthogonal-w', 'two-sided-corrected', 'pork', 'cure-spark', 'cure-pork')


def parse_shifts(text):
    """Parse ``"1,2,3+4j,3-4j"`` into a list of numbers (complex where needed)."""
    if text is None or text == '':
        return None
    if isinstance(text, (list, tuple)):
        vals = [complex(*x) if isinstance(x, (list, tuple)) else complex(x) for x in text]
    else:
        vals = [complex(tok.strip().replace(' ', '')) for tok in text.split(',') if tok.strip()]
    return [v.real if v.imag == 0 else v for v in vals]


def _jsonable(x):
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def _write_json(path, doc):
    Path(path).write_text(json.dumps(_jsonable(doc), indent=1))


def _add_model_source(p):
    g = p.add_argument_group('model source (one of)')
    g.add_argument('--tline', type=int, metavar='Q', help='transmission line with Q loops')
    g.add_argument('--tap', choices=OUTPUT_TAPS, default='end_capacitor_voltage',
                   help='output of the transmission line')
    g.add_argument('--model', metavar='SIDECAR', help='Matrix Market sidecar JSON written by `generate`')
    g.add_argument('--random', metavar='NDYN,NALG', help='random stable SE-DAE (uses --seed)')
    p.add_argument('--seed', type=int, default=0, help='seed for every randomized choice')


def _add_config(p):
    p.add_argument('--config', help='JSON file with option defaults (keys are option names)')


def _add_grid(p):
    p.add_argument('--omega-min', type=float, default=1.0)
    p.add_argument('--omega-max', type=float, default=1e10)
    p.add_argument('--points', type=int, default=400)


def _grid(args):
    return np.logspace(np.log10(args.omega_min), np.log10(args.omega_max), args.points)


def load_model(args):
    """Build or load the full model described by the model-source options."""
    given = [x is not None for x in (args.tline, args.model, args.random)]
    if sum(given) != 1:
        raise SystemExit('error: give exactly one of --tline, --model, --random')
    if args.tline is not None:
        return build_transmission_line(TransmissionLineParams(args.tline, output_tap=args.tap))
    if args.model is not None:
        return load_matrix_market(args.model).dae
    n_dyn, n_alg = (int(x) for x in args.random.split(','))
    return random_semi_explicit(n_dyn, n_alg, rng=np.random.default_rng(args.seed))


def _structural(dae):
    rep = validate_semi_explicit(dae)
    keys = ('e11_nonsingular', 'a22_nonsingular', 'b22_zero', 'c22_zero', 'a22_symmetric', 'a12_eq_a21t',
            'c22_eq_b22t', 'symmetric_triple', 'valid')
    return {k: bool(getattr(rep, k)) for k in keys}


def cmd_generate(args):
    if args.kind == 'tline':
        try:
            dae = build_transmission_line(TransmissionLineParams(args.q, output_tap=args.tap))
        except ValueError as exc:
            raise SystemExit(f'error: {exc}')
        extra = {'generator': 'tline', 'q': args.q, 'tap': args.tap}
    elif args.kind == 'random':
        dae = random_semi_explicit(args.n_dyn, args.n_alg, args.inputs, args.outputs,
                                   np.random.default_rng(args.seed))
        extra = {'generator': 'random'}
    else:
        if args.source is None:
            raise SystemExit('error: `generate mtx` needs --source SIDECAR')
        loaded = load_matrix_market(args.source)
        dae = loaded.dae
        extra = {'generator': 'mtx', 'source': str(args.source), 'permutation': loaded.permutation.tolist()}
    extra['seed'] = args.seed
    path = write_matrix_market(dae, args.out, args.name, extra)
    flags = _structural(dae)
    print(f'N={dae.order} n_dyn={dae.n_dyn} n_alg={dae.n_alg} m={dae.n_inputs} p={dae.n_outputs}')
    print('structure: ' + ' '.join(f'{k}={int(v)}' for k, v in flags.items()))
    print(f'wrote {path}')
    return 0


def _default_shifts(dae, args, side):
    if args.shift_strategy == 'peaks':
        pairs = max(1, args.order // 2)
        om = np.logspace(np.log10(args.omega_min), np.log10(args.omega_max), 2000)
        return [x for w in peak_frequencies(dae, om, pairs) for x in (1j * w, -1j * w)]
    return None


def _krylov(dae, args, side):
    shifts = parse_shifts(args.shifts)
    if shifts is None and args.shift_strategy == 'origin':
        return arnoldi_basis(dae, 0.0, args.order, side=side)
    shifts = shifts if shifts is not None else _default_shifts(dae, args, side)
    width = dae.n_inputs if side == 'input' else dae.n_outputs
    data = shifts_to_sylvester(shifts, [np.ones(width)] * len(shifts), side)
    builder = input_krylov_basis if side == 'input' else output_krylov_basis
    return builder(dae, data)


def _pork_schedule(shifts):
    steps, k = [], 0
    while k < len(shifts):
        s = shifts[k]
        if isinstance(s, complex) and s.imag != 0:
            steps.append(shifts[k:k + 2])
            k += 2
        else:
            steps.append([s])
            k += 1
    return steps


def run_reduction(dae, args, out=None):
    """Reduce `dae` as configured by `args`; returns ``(rom, extras)``."""
    method = args.method
    extras = {}
    if args.sd_transform:
        dae, record = sd_transform(dae)
        extras['sd_transform'] = record.to_json()
    if method in ('orthogonal-v', 'orthogonal-w'):
        side = 'input' if method == 'orthogonal-v' else 'output'
        basis = orthonormalize_basis(_krylov(dae, args, side))
        rom = orthogonal_reduce(dae, basis, unsafe=args.unsafe_orthogonal)
        extras['relative_residual'] = basis.relative_residual
    elif method == 'two-sided-corrected':
        rom = project_corrected(dae, _krylov(dae, args, 'input'), _krylov(dae, args, 'output'))
    elif method == 'pork':
        shifts = parse_shifts(args.shifts)
        if shifts is None:
            raise SystemExit('error: pork needs --shifts with positive real parts')
        width = dae.n_inputs if args.side == 'input' else dae.n_outputs
        rom = pork(dae, shifts_to_sylvester(shifts, [np.ones(width)] * len(shifts), args.side))
    else:
        log = None if out is None else Path(out) / 'cure_log.jsonl'
        if method == 'cure-pork':
            shifts = parse_shifts(args.shifts)
            if shifts is None:
                raise SystemExit('error: cure-pork needs --shifts with positive real parts')
            state, rom = cure_run(dae, side=args.side, step='pork', schedule=_pork_schedule(shifts),
                                  order=min(args.order, len(shifts)), log=log)
        else:
            state, rom = cure_run(dae, side=args.side, step='spark', order=args.order, log=log)
        extras['steps'] = state.k
    return rom, extras


def cmd_reduce(args, config):
    dae = load_model(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / 'config.json', config)
    try:
        rom, extras = run_reduction(dae, args, out)
    except DaemorError as exc:
        print(f'error: {type(exc).__name__}: {exc}', file=sys.stderr)
        return 2
    rom.to_json(out / 'rom.json')
    rom.write_matrix_market(out)
    om = _grid(args)
    g, gr = frequency_response(dae, om), frequency_response(rom, om)
    err = type(g)(om, g.values - gr.values, tuple(sorted(set(g.failed) | set(gr.failed))))
    for tag, resp in (('fom', g), ('rom', gr), ('error', err)):
        resp.to_csv(out / f'freq_{tag}.csv')
        resp.to_csv(out / f'bode_{tag}.csv', kind='db')
    report = compare(dae, {args.method: rom}, om)
    report.to_json(out / 'report.json')
    report.to_csv(out / 'report.csv')
    stab = stability_check(rom)
    rec = report.record(args.method)
    summary = {'method': args.method, 'seed': args.seed, 'order': rom.order,
               'eigenvalues': sorted(stab.spectrum.tolist(), key=lambda z: (z.real, z.imag)),
               'stable': stab.stable, 'max_real_part': stab.max_real_part, 'dissipative': rec.dissipative,
               'max_rel_freq_error': rec.max_rel_freq_error, 'h2_error': rec.h2_error, **extras}
    _write_json(out / 'summary.json', summary)
    print(f'method={args.method} order={rom.order} stable={stab.stable} max_real_part={stab.max_real_part:.6e}')
    print(f'max_rel_freq_error={rec.max_rel_freq_error:.3e}')
    print('eigenvalues: ' + ', '.join(f'{z:.6g}' for z in summary['eigenvalues']))
    print(f'wrote {out}')
    return 0


def cmd_verify(args, config):
    checks = acceptance.CHECKS + ((acceptance.SLOW_CHECKS[0],) if args.slow else ()) + acceptance.SLOW_CHECKS[1:]
    if args.inject == 'lyapunov-sign':
        with acceptance.lyapunov_sign_flip():
            results = acceptance.run_all(checks=checks)
    else:
        results = acceptance.run_all(checks=checks)
    for r in results:
        print(r.line())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / 'config.json', config)
        _write_json(out / 'verify.json', [{'number': r.number, 'name': r.name, 'passed': r.passed,
                                           'skipped': r.skipped, 'elapsed': r.elapsed, 'note': r.note,
                                           'details': r.details} for r in results])
    return 0 if all(r.passed for r in results) else 1


def _load_roms(items):
    roms = {}
    for item in items or ():
        name, _, path = item.rpartition('=')
        roms[name or Path(path).stem] = ReducedModel.from_json(path)
    return roms


def cmd_bode(args, config):
    dae = load_model(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / 'config.json', config)
    om = _grid(args)
    for name, system in {'fom': dae, **_load_roms(args.rom)}.items():
        resp = frequency_response(system, om)
        resp.to_csv(out / f'bode_{name}.csv', kind='db')
        resp.to_csv(out / f'freq_{name}.csv')
        print(f'{name}: {len(om)} points, {len(resp.failed)} failed')
    print(f'wrote {out}')
    return 0


def cmd_compare(args, config):
    dae = load_model(args)
    roms = _load_roms(args.rom)
    if not roms:
        raise SystemExit('error: give at least one --rom NAME=PATH')
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / 'config.json', config)
    report = compare(dae, roms, _grid(args))
    report.to_json(out / 'report.json')
    report.to_csv(out / 'report.csv')
    for m in report.models:
        print(f'{m.name}: order={m.order} dissipative={int(m.dissipative)} stable={int(m.stable)} '
              f'max_real_part={m.max_real_part:.3e}')
    print(f'wrote {out}')
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog='daemor', description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('generate', help='write a model as Matrix Market files plus sidecar JSON')
    _add_config(p)
    p.add_argument('kind', choices=('tline', 'random', 'mtx'))
    p.add_argument('--q', type=int, default=10)
    p.add_argument('--tap', choices=OUTPUT_TAPS, default='end_capacitor_voltage')
    p.add_argument('--n-dyn', type=int, default=40)
    p.add_argument('--n-alg', type=int, default=160)
    p.add_argument('--inputs', type=int, default=1)
    p.add_argument('--outputs', type=int, default=1)
    p.add_argument('--source', help='sidecar JSON of an external model (kind mtx)')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--name', default='model')
    p.add_argument('--out', default='model')

    p = sub.add_parser('reduce', help='reduce a model and write ROM, report and frequency data')
    _add_config(p)
    _add_model_source(p)
    p.add_argument('--method', choices=METHODS, default='orthogonal-w')
    p.add_argument('--shifts', help='comma-separated shifts, e.g. "1,2,3+4j,3-4j"')
    p.add_argument('--shift-strategy', choices=('peaks', 'origin'), default='peaks',
                   help='shift choice when --shifts is absent (orthogonal and two-sided methods)')
    p.add_argument('--order', type=int, default=10)
    p.add_argument('--side', choices=('input', 'output'), default='input', help='side for pork and cure')
    p.add_argument('--sd-transform', action='store_true', help='make the model strictly dissipative first')
    p.add_argument('--unsafe-orthogonal', action='store_true',
                   help='allow orthogonal projection without the structural guard')
    _add_grid(p)
    p.add_argument('--out', default='run')

    p = sub.add_parser('verify', help='run the acceptance checks')
    _add_config(p)
    p.add_argument('--slow', action='store_true', help='include the q=140 dissipativity check')
    p.add_argument('--inject', choices=('lyapunov-sign',), help='test hook: inject a convention error')
    p.add_argument('--out')

    p = sub.add_parser('bode', help='write frequency responses of a model and optional ROMs')
    _add_config(p)
    _add_model_source(p)
    p.add_argument('--rom', action='append', metavar='NAME=PATH', help='reduced model JSON (repeatable)')
    _add_grid(p)
    p.add_argument('--out', default='bode')

    p = sub.add_parser('compare', help='stability/dissipativity/error table of ROMs against a model')
    _add_config(p)
    _add_model_source(p)
    p.add_argument('--rom', action='append', metavar='NAME=PATH', help='reduced model JSON (repeatable)')
    _add_grid(p)
    p.add_argument('--out', default='compare')
    return parser


def _subcommands(parser):
    action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return action.choices


def parse_args(argv=None):
    """Parse `argv`; values from ``--config`` act as defaults for the chosen command."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        doc = {k.replace('-', '_'): v for k, v in doc.items() if k not in ('command', 'config')}
        _subcommands(parser)[args.command].set_defaults(**doc)
        args = parser.parse_args(argv)
    config = {k: v for k, v in vars(args).items() if k != 'config'}
    return args, config


def main(argv=None):
    args, config = parse_args(argv)
    if args.command == 'generate':
        return cmd_generate(args)
    return {'reduce': cmd_reduce, 'verify': cmd_verify, 'bode': cmd_bode,
            'compare': cmd_compare}[args.command](args, config)


if __name__ == '__main__':
    sys.exit(main())
