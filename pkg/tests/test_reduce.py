import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from conftest import rel_err
from daemor import acceptance
from daemor.analysis import interpolation_residuals, stability_check
from daemor.errors import LyapunovSingular, ShiftInClosedLeftHalfPlane, StructuralGuard, UnstableModel
from daemor.krylov import (InterpolationData, input_krylov_basis, orthonormalize_basis, output_krylov_basis,
                           shifts_to_sylvester)
from daemor.model import (OdeRealization, SemiExplicitDAE, frequency_response, implicit_feedthrough,
                          random_semi_explicit, transfer_eval, underlying_ode)
from daemor.reduce import (ReducedModel, h2_norm, h2_norm_squared, orthogonal_reduce, pork, pork_norm_squared,
                           project_corrected)
from daemor.sdtransform import is_strictly_dissipative


def ode_projection(system, v, w):
    ode = underlying_ode(system)
    n = ode.e1.shape[0]
    v1, w1 = v[:n], w[:n]
    return (w1.T @ ode.e1 @ v1, w1.T @ ode.a1 @ v1, w1.T @ ode.b1, ode.c1 @ v1, ode.d1)


def assert_equals_projection(rom, ref, tol=1e-10):
    for x, y in zip(rom.descriptor(), ref):
        assert np.abs(x - y).max() <= tol * max(1.0, np.abs(y).max())


def hermite_bases(system, shifts):
    m, p = system.n_inputs, system.n_outputs
    v = input_krylov_basis(system, shifts_to_sylvester(shifts, [np.ones(m)] * len(shifts)))
    w = output_krylov_basis(system, shifts_to_sylvester(shifts, [np.ones(p)] * len(shifts), 'output'))
    return v, w


def test_project_corrected_plain_petrov_galerkin(rng):
    ode = OdeRealization(np.eye(4), -np.diag([1.0, 2.0, 3.0, 4.0]), rng.standard_normal((4, 1)),
                         rng.standard_normal((1, 4)), [[0.0]])
    v, w = hermite_bases(ode, [0.5, 2.0])
    rom = project_corrected(ode, v, w)
    ref = (w.basis.T @ v.basis, w.basis.T @ ode.a1 @ v.basis, w.basis.T @ ode.b1, ode.c1 @ v.basis, ode.d1)
    for x, y in zip(rom.descriptor(), ref):
        np.testing.assert_array_equal(x, y)


@pytest.mark.parametrize('tap', ['tline2', 'tline10_inductor'])
def test_project_corrected_tline(request, tap):
    dae = request.getfixturevalue(tap)
    shifts = [1e7 + 5e7j, 1e7 - 5e7j]
    v, w = hermite_bases(dae, shifts)
    rom = project_corrected(dae, v, w)
    assert_equals_projection(rom, ode_projection(dae, v.basis, w.basis))
    res = interpolation_residuals(dae, rom, v.data, w.data)
    assert len(res) == 2 and max(r['residual'] for r in res) < 1e-8


@given(st.integers(0, 2**32 - 1))
def test_corrected_projection_equivalence_property(seed):
    r = np.random.default_rng(seed)
    dae = random_semi_explicit(int(r.integers(3, 9)), int(r.integers(1, 6)), 2, 2, r, feedthrough=True,
                               dissipative=bool(r.integers(2)))
    shifts, dirs = acceptance.random_rhp_shifts(r, 2, 2)
    v = input_krylov_basis(dae, shifts_to_sylvester(shifts, dirs))
    shifts, dirs = acceptance.random_rhp_shifts(r, 2, 2)
    w = output_krylov_basis(dae, shifts_to_sylvester(shifts, dirs, 'output'))
    rom = project_corrected(dae, v, w)
    assert_equals_projection(rom, ode_projection(dae, v.basis, w.basis))
    assert np.array_equal(rom.dr, dae.d + implicit_feedthrough(dae))
    assert max(x['residual'] for x in interpolation_residuals(dae, rom, v.data, w.data)) < 1e-8


def test_orthogonal_w_exact_order(tline10):
    data = acceptance.tline_peak_shifts(tline10, 10, 'output')
    rom = orthogonal_reduce(tline10, output_krylov_basis(tline10, data))
    om = np.logspace(0, 7, 100)
    g = frequency_response(tline10, om).values
    assert np.max(np.abs(g - frequency_response(rom, om).values) / np.abs(g)) < 1e-8
    assert rom.provenance['guard'] == 'c22 = 0'


def test_orthogonal_v_guard_and_unsafe(tline10):
    data = acceptance.tline_peak_shifts(tline10, 10, 'input')
    basis = orthonormalize_basis(input_krylov_basis(tline10, data))
    with pytest.raises(StructuralGuard):
        orthogonal_reduce(tline10, basis)
    rom = orthogonal_reduce(tline10, basis, unsafe=True)
    assert rom.provenance['guard'] == 'overridden'
    ref = ode_projection(tline10, basis.basis, basis.basis)
    dev = max(np.abs(x - y).max() / max(np.abs(y).max(), 1e-300) for x, y in zip(rom.descriptor(), ref)
              if np.any(y))
    assert dev > 1e-6
    # still interpolates, it is just not the ODE projection
    assert max(r['residual'] for r in interpolation_residuals(tline10, rom, data)) < 1e-8


def test_orthogonal_v_b22_zero(tline2):
    dae = tline2.with_blocks(b22=np.zeros_like(tline2.b22), b11=np.r_[[[1.0]], np.zeros((3, 1))])
    basis = orthonormalize_basis(input_krylov_basis(dae, shifts_to_sylvester([1e7, 3e7], [1.0, 1.0])))
    rom = orthogonal_reduce(dae, basis)
    assert_equals_projection(rom, ode_projection(dae, basis.basis, basis.basis))


def symmetric_dae(rng, n1=5, n2=3, m=2):
    g = rng.standard_normal((n1, n1))
    a12 = rng.standard_normal((n1, n2))
    a22 = -np.diag(rng.uniform(1, 2, n2))
    b22 = rng.standard_normal((n2, m))
    return SemiExplicitDAE(g @ g.T + np.eye(n1), -(g @ g.T) - np.eye(n1), a12, a12.T, a22,
                           rng.standard_normal((n1, m)), b22, rng.standard_normal((m, n1)), b22.T, np.zeros((m, m)))


@pytest.mark.parametrize('side', ['input', 'output'])
def test_orthogonal_symmetric_triple(rng, side):
    dae = symmetric_dae(rng)
    data = shifts_to_sylvester([0.3, 1 + 1j, 1 - 1j], [rng.standard_normal(2), np.ones(2) + 1j, np.ones(2) - 1j],
                               side)
    basis = (input_krylov_basis if side == 'input' else output_krylov_basis)(dae, data)
    rom = orthogonal_reduce(dae, basis)
    assert rom.provenance['guard'] == 'symmetric triple'
    q = orthonormalize_basis(basis).basis
    assert_equals_projection(rom, ode_projection(dae, q, q))


@given(st.integers(0, 2**32 - 1), st.sampled_from(['input', 'output']))
def test_dissipativity_preserved(seed, side):
    r = np.random.default_rng(seed)
    dae = random_semi_explicit(8, 5, 1, 1, r, b22=side != 'input', c22=side != 'output')
    assert is_strictly_dissipative(dae).strictly_dissipative
    shifts, dirs = acceptance.random_rhp_shifts(r, 3, 1)
    data = shifts_to_sylvester(shifts, dirs, side)
    basis = (input_krylov_basis if side == 'input' else output_krylov_basis)(dae, data)
    rom = orthogonal_reduce(dae, basis)
    assert np.abs(rom.er - rom.er.T).max() < 1e-12 * np.abs(rom.er).max()
    assert np.linalg.eigvalsh(rom.er).min() > 1e-10
    assert np.linalg.eigvalsh(rom.ar + rom.ar.T).max() < -1e-10
    assert stability_check(rom).stable


def test_pork_scalar_hand_computation():
    ode = OdeRealization([[1.0]], [[-1.0]], [[1.0]], [[1.0]], [[0.0]])
    rom = pork(ode, shifts_to_sylvester([1.0], [1.0]), coordinates='krylov')
    assert rom.provenance['gramian'] == [[2.0]]
    assert rom.br[0, 0] == -2.0 and rom.ar[0, 0] == -1.0 and rom.er[0, 0] == 1.0
    assert rom.cr[0, 0] == pytest.approx(-0.5, abs=1e-15)
    assert transfer_eval(rom, 0.3)[0, 0] == pytest.approx(1 / 1.3, abs=1e-15)


@pytest.mark.parametrize('coordinates', ['krylov', 'gramian'])
@pytest.mark.parametrize('side', ['input', 'output'])
def test_pork_spectrum_and_interpolation(small_dae, coordinates, side):
    dirs = [np.array([1.0, 0.5]), np.array([1.0, 1j]), np.array([1.0, -1j]), np.array([0.2, 1.0])]
    data = shifts_to_sylvester([0.5, 1 + 2j, 1 - 2j, 3.0], dirs, side)
    rom = pork(small_dae, data, coordinates=coordinates)
    lam = np.sort_complex(np.linalg.eigvals(rom.ar))
    np.testing.assert_allclose(lam, np.sort_complex(-np.asarray(data.shifts)), atol=1e-9)
    assert max(r['residual'] for r in interpolation_residuals(small_dae, rom, data)) < 1e-8
    np.testing.assert_array_equal(rom.er, np.eye(4))
    assert np.array_equal(rom.dr, small_dae.d + implicit_feedthrough(small_dae))
    assert pork_norm_squared(rom) == pytest.approx(h2_norm_squared(rom), rel=1e-10)


def test_pork_coordinates_same_transfer(small_dae, rng):
    data = shifts_to_sylvester([0.5, 2.0, 4.0], [rng.standard_normal(2) for _ in range(3)])
    a, b = pork(small_dae, data, coordinates='krylov'), pork(small_dae, data)
    for s in (0.1j, 1 + 1j, 10j):
        assert rel_err(transfer_eval(b, s), transfer_eval(a, s)) < 1e-12
    assert np.linalg.eigvalsh(b.ar + b.ar.T + b.br @ b.br.T).max() < 1e-12 * np.abs(b.ar).max()


@pytest.mark.parametrize('alpha', [1e-3, -2.0, 50.0])
def test_pork_direction_scaling(small_dae, alpha):
    dirs = [np.array([1.0, 0.3]), np.array([0.5, -1.0])]
    a = pork(small_dae, shifts_to_sylvester([0.7, 2.5], dirs))
    b = pork(small_dae, shifts_to_sylvester([0.7, 2.5], [alpha * d for d in dirs]))
    for s in (0.2j, 1 + 1j, 7j):
        assert rel_err(transfer_eval(b, s), transfer_eval(a, s)) < 1e-9


@given(st.integers(0, 2**32 - 1))
def test_pork_contract_property(seed):
    out = acceptance.pork_contract_case(seed)
    assert out['eig_error'] < 1e-9 and out['interpolation'] < 1e-8
    assert out['identity_error'] < 1e-6 and out['feedthrough_exact']


def test_pork_errors(small_dae):
    with pytest.raises(ShiftInClosedLeftHalfPlane):
        pork(small_dae, shifts_to_sylvester([-1.0], [np.ones(2)]))
    with pytest.raises(ShiftInClosedLeftHalfPlane):
        pork(small_dae, shifts_to_sylvester([1j, -1j], [np.ones(2), np.ones(2)]))
    unobservable = InterpolationData(np.diag([1.0, 2.0]), np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(LyapunovSingular):
        pork(small_dae, unobservable)


def test_h2_norm_first_order():
    assert h2_norm(OdeRealization([[1.0]], [[-1.0]], [[1.0]], [[1.0]], [[0.0]])) == pytest.approx(2**-0.5, rel=1e-14)


@pytest.mark.parametrize('a, b', [(0.5, 3.0), (4.0, -1.0), (1e3, 2.0)])
def test_h2_norm_closed_form(a, b):
    rom = ReducedModel([[1.0]], [[-a]], [[b]], [[1.0]], [[5.0]])
    assert h2_norm(rom) == pytest.approx(abs(b) / np.sqrt(2 * a), rel=1e-13)


def test_h2_norm_quadrature(rng):
    q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    a = q @ np.diag(-rng.uniform(0.5, 3, 6)) @ q.T + 0.3 * (lambda k: k - k.T)(rng.standard_normal((6, 6)))
    rom = ReducedModel(np.eye(6), a, rng.standard_normal((6, 1)), rng.standard_normal((1, 6)), [[0.0]])
    integrand = lambda w: abs(transfer_eval(rom, 1j * w)[0, 0]) ** 2  # noqa: E731
    val = 2 * quad(integrand, 0, np.inf, limit=500, epsabs=0, epsrel=1e-10)[0] / (2 * np.pi)
    assert h2_norm(rom) == pytest.approx(np.sqrt(val), rel=1e-4)


def test_h2_norm_unstable():
    with pytest.raises(UnstableModel):
        h2_norm(ReducedModel([[1.0]], [[0.5]], [[1.0]], [[1.0]], [[0.0]]))


def test_reduced_model_serialization(small_dae, tmp_path):
    rom = pork(small_dae, shifts_to_sylvester([1.0, 2.0], [np.ones(2), np.array([1.0, -1.0])]))
    rom.to_json(tmp_path / 'rom.json')
    back = ReducedModel.from_json(tmp_path / 'rom.json')
    for x, y in zip(back.descriptor(), rom.descriptor()):
        np.testing.assert_array_equal(x, y)
    assert back.provenance == rom.provenance
    paths = rom.write_matrix_market(tmp_path)
    assert sorted(paths) == ['ar', 'br', 'cr', 'dr', 'er']
