import csv
import json

import numpy as np
import pytest

from daemor.acceptance import sd_pipeline
from daemor.analysis import (compare, error_system, h2_error_direct, interpolation_residuals, peak_frequencies,
                             stability_check)
from daemor.adaptive import h2_error_pseudo_optimal
from daemor.errors import FeedthroughMismatch
from daemor.krylov import input_krylov_basis, output_krylov_basis, shifts_to_sylvester
from daemor.model import OdeRealization, random_semi_explicit, underlying_ode
from daemor.reduce import ReducedModel, h2_norm_squared, orthogonal_reduce, pork, project_corrected


@pytest.fixture(scope='module')
def dae():
    return random_semi_explicit(10, 6, 1, 1, np.random.default_rng(21), c22=False)


@pytest.fixture(scope='module')
def shifts():
    return [0.5, 2.0, 1 + 1j, 1 - 1j]


def test_stability_identity():
    rom = ReducedModel(np.eye(3), -np.eye(3), np.ones((3, 1)), np.ones((1, 3)), [[0.0]])
    res = stability_check(rom)
    assert res.stable and bool(res)
    assert res.max_real_part == pytest.approx(-1.0)
    np.testing.assert_allclose(res.spectrum, -1.0)


def test_stability_unstable():
    rom = ReducedModel(np.eye(2), np.diag([-1.0, 1e-3]), np.ones((2, 1)), np.ones((1, 2)), [[0.0]])
    res = stability_check(rom)
    assert not res.stable and res.max_real_part == pytest.approx(1e-3)


def test_stability_counts_infinite_eigenvalues(small_dae):
    res = stability_check(small_dae)
    assert res.stable and res.n_infinite == small_dae.n_alg and len(res.spectrum) == small_dae.n_dyn


def test_pork_rom_stable(dae, shifts):
    assert stability_check(pork(dae, shifts_to_sylvester(shifts, [1.0] * 4))).stable


def test_v_based_reduction_loses_dissipativity():
    d = sd_pipeline(20, 10, points=10)
    assert d['w_dissipative'] and d['w_stable']
    assert not d['v_dissipative']


def test_h2_exact_copy(dae):
    rom = ReducedModel(*underlying_ode(dae).descriptor())
    assert h2_error_direct(dae, rom) < 1e-9 * np.sqrt(h2_norm_squared(dae))


def test_h2_zero_rom(dae):
    zero = ReducedModel(np.eye(1), [[-1.0]], [[0.0]], [[0.0]], dae.d)
    assert h2_error_direct(dae, zero) == pytest.approx(np.sqrt(h2_norm_squared(dae)), rel=1e-10)


def test_h2_direct_matches_pseudo_optimal(dae, shifts):
    rom = pork(dae, shifts_to_sylvester(shifts, [1.0] * 4))
    direct = h2_error_direct(dae, rom)
    assert h2_error_pseudo_optimal(h2_norm_squared(dae), rom) == pytest.approx(direct, rel=1e-6)


def test_h2_feedthrough_mismatch(dae):
    rom = ReducedModel(np.eye(1), [[-1.0]], [[1.0]], [[1.0]], dae.d + 1.0)
    with pytest.raises(FeedthroughMismatch):
        h2_error_direct(dae, rom)
    assert np.isfinite(h2_error_direct(dae, rom, strictly_proper=True))


def test_h2_sign_of_output_matters():
    g = OdeRealization(np.eye(1), [[-1.0]], [[1.0]], [[1.0]], [[0.0]])
    same = ReducedModel(np.eye(1), [[-1.0]], [[1.0]], [[1.0]], [[0.0]])
    flipped = ReducedModel(np.eye(1), [[-1.0]], [[1.0]], [[-1.0]], [[0.0]])
    assert h2_error_direct(g, same) < 1e-15
    # ||2 / (s + 1)||^2 = 2
    assert h2_error_direct(g, flipped) == pytest.approx(np.sqrt(2.0), rel=1e-12)


def test_error_system_shape(dae):
    rom = ReducedModel(np.eye(2), -np.eye(2), np.ones((2, 1)), np.ones((1, 2)), [[0.0]])
    err = error_system(dae, rom)
    assert err.e1.shape == (12, 12) and err.b1.shape == (12, 1)


def test_interpolation_residuals(dae, shifts):
    data = shifts_to_sylvester(shifts, [1.0] * 4)
    rom = pork(dae, data)
    res = interpolation_residuals(dae, rom, data)
    # one entry per conjugate pair
    assert len(res) == 3 and max(r['residual'] for r in res) < 1e-8
    bad = ReducedModel(rom.er, rom.ar, rom.br * 1.01, rom.cr, rom.dr)
    assert min(r['residual'] for r in interpolation_residuals(dae, bad, data)) > 1e-3


def test_interpolation_residuals_hermite(dae, shifts):
    vdata = shifts_to_sylvester(shifts, [1.0] * 4)
    wdata = shifts_to_sylvester(shifts, [1.0] * 4, side='output')
    v, w = input_krylov_basis(dae, vdata), output_krylov_basis(dae, wdata)
    rom = project_corrected(dae, v, w)
    res = interpolation_residuals(dae, rom, vdata, wdata)
    assert {r['side'] for r in res} == {'input', 'output'}
    assert max(r['residual'] for r in res) < 1e-8


def test_peak_frequencies_fill():
    g = OdeRealization(np.eye(1), [[-1.0]], [[1.0]], [[1.0]], [[0.0]])
    om = peak_frequencies(g, np.logspace(-2, 2, 50), 3)
    assert len(om) == 3 and np.all(np.diff(om) > 0)


def test_compare_report(dae, shifts, tmp_path):
    data = shifts_to_sylvester(shifts, [1.0] * 4)
    roms = {'pork': pork(dae, data)}
    om = np.logspace(-2, 2, 30)
    a = compare(dae, roms, om, interpolation={'pork': [data]})
    b = compare(dae, roms, om, interpolation={'pork': [data]})
    assert a.to_dict() == b.to_dict()
    rec = a.record('pork')
    assert rec.order == 4 and rec.stable and rec.h2_error > 0
    assert rec.max_rel_freq_error == pytest.approx(a.rel_errors['pork'].max())
    assert len(rec.interpolation) == 3
    doc = a.to_json(tmp_path / 'r.json')
    assert json.loads((tmp_path / 'r.json').read_text()) == json.loads(json.dumps(doc))
    a.to_csv(tmp_path / 'r.csv')
    rows = list(csv.reader(open(tmp_path / 'r.csv')))
    assert rows[0][:4] == ['model', 'order', 'dissipative', 'stable']
    assert [r[0] for r in rows[1:]] == ['FOM', 'pork']
    assert float(rows[2][7]) == rec.h2_error


def test_compare_records_missing_h2(dae):
    unstable = ReducedModel(np.eye(1), [[1.0]], [[1.0]], [[1.0]], dae.d)
    rec = compare(dae, {'bad': unstable}).record('bad')
    assert rec.h2_error is None and not rec.stable


def test_orthogonal_output_rom_dissipative(dae, shifts):
    basis = output_krylov_basis(dae, shifts_to_sylvester(shifts, [1.0] * 4, side='output'))
    rom = orthogonal_reduce(dae, basis)
    rec = compare(dae, {'w': rom}).record('w')
    assert rec.dissipative and rec.stable


@pytest.mark.parametrize('delta', [1e-3, 1e-6, 1e-9])
def test_h2_small_error_closed_form(delta):
    # ||delta / (s + 1)||_H2 = delta / sqrt(2); the smaller cases take the quadrature route
    g = OdeRealization(np.eye(2), [[-1.0, 0.0], [0.0, -3.0]], [[1.0], [1.0]], [[1.0, 1.0]], [[0.0]])
    rom = ReducedModel(np.eye(2), [[-1.0, 0.0], [0.0, -3.0]], [[1.0 - delta], [1.0]], [[1.0, 1.0]], [[0.0]])
    assert h2_error_direct(g, rom) == pytest.approx(delta / np.sqrt(2), rel=1e-6)
