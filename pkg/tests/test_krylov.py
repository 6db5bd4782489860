import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from daemor import acceptance
from daemor.errors import ShiftOnSpectrum, SingularMatrix, UnpairedComplexShift, ZeroDirection
from daemor.krylov import (InterpolationData, arnoldi_basis, change_basis, input_krylov_basis,
                           orthonormalize_basis, output_krylov_basis, shifts_to_sylvester, sylvester_residual)
from daemor.linalg import as_dense
from daemor.model import OdeRealization, SemiExplicitDAE, random_semi_explicit, underlying_ode


def dense_pencil(system):
    e, a, b, c, _ = system.descriptor()
    return as_dense(e), as_dense(a), b, c


def span_distance(x, y):
    qx, _ = np.linalg.qr(x)
    qy, _ = np.linalg.qr(y)
    return np.linalg.norm(qy - qx @ (qx.T @ qy), 2)


def test_single_real_shift():
    d = shifts_to_sylvester([2.0], [[1.0]])
    np.testing.assert_array_equal(d.s, [[2.0]])
    np.testing.assert_array_equal(d.r, [[1.0]])


def test_conjugate_pair_block(tline2):
    d = shifts_to_sylvester([1 + 1j, 1 - 1j], [1.0, 1.0])
    np.testing.assert_array_equal(d.s, [[1, 1], [-1, 1]])
    np.testing.assert_array_equal(d.r, [[1, 0]])
    np.testing.assert_allclose(np.sort_complex(np.linalg.eigvals(d.s)), [1 - 1j, 1 + 1j])
    # the real basis holds the real and imaginary part of the complex solve
    e, a, b, _ = dense_pencil(tline2)
    sigma = 1e7 * (1 + 1j)
    d = shifts_to_sylvester([sigma, sigma.conjugate()], [1.0, 1.0])
    v = input_krylov_basis(tline2, d).basis
    z = np.linalg.solve(a - sigma * e, b[:, 0])
    np.testing.assert_allclose(v, np.column_stack([z.real, z.imag]), rtol=1e-12, atol=1e-12 * abs(z).max())


def test_double_shift_at_origin(tline2):
    d = shifts_to_sylvester([0.0, 0.0], [1.0, 1.0])
    assert d.s[0, 1] != 0 and d.s[1, 0] == 0  # Jordan-type block
    e, a, b, _ = dense_pencil(tline2)
    m0 = np.linalg.solve(a, b)
    m1 = np.linalg.solve(a, e @ m0)
    v = input_krylov_basis(tline2, d).basis
    assert span_distance(v, np.column_stack([m0, m1])) < 1e-10


def test_non_adjacent_repeats_form_chain(tline2):
    d = shifts_to_sylvester([1e7, 2e7, 1e7], [1.0, 1.0, 1.0])
    lam = np.linalg.eigvals(d.s)
    assert np.sum(np.isclose(lam, 1e7)) == 2
    assert input_krylov_basis(tline2, d).relative_residual < 1e-10


def test_shift_errors():
    with pytest.raises(UnpairedComplexShift):
        shifts_to_sylvester([1 + 1j], [1.0])
    with pytest.raises(UnpairedComplexShift):
        shifts_to_sylvester([1 + 1j, 2 - 1j], [1.0, 1.0])
    with pytest.raises(ZeroDirection):
        shifts_to_sylvester([1.0], [0.0])


def test_single_vector_input():
    ode = OdeRealization(np.diag([1.0, 2.0]), -np.diag([1.0, 3.0]), [[1.0], [1.0]], [[1.0, 1.0]], [[0.0]])
    basis = input_krylov_basis(ode, shifts_to_sylvester([0.5], [1.0]))
    expected = np.linalg.solve(ode.a1 - 0.5 * ode.e1, ode.b1)
    np.testing.assert_allclose(basis.basis, expected, rtol=1e-14)
    assert basis.relative_residual < 1e-10


def test_single_vector_output():
    ode = OdeRealization(np.diag([1.0, 2.0]), -np.diag([1.0, 3.0]), [[1.0], [1.0]], [[1.0, 2.0]], [[0.0]])
    basis = output_krylov_basis(ode, shifts_to_sylvester([0.5], [1.0], 'output'))
    expected = np.linalg.solve((ode.a1 - 0.5 * ode.e1).T, ode.c1.T)
    np.testing.assert_allclose(basis.basis, expected, rtol=1e-14)
    assert basis.relative_residual < 1e-10


def test_shift_on_spectrum():
    ode = OdeRealization([[1.0]], [[-1.0]], [[1.0]], [[1.0]], [[0.0]])
    with pytest.raises(ShiftOnSpectrum):
        input_krylov_basis(ode, shifts_to_sylvester([-1.0], [1.0]))


@pytest.mark.parametrize('side', ['input', 'output'])
def test_tline_top_block_sylvester(tline2, side):
    ode = underlying_ode(tline2)
    d = shifts_to_sylvester([1.0, 10.0], [1.0, 1.0], side)
    s, r = d.sylvester_pair()
    n = tline2.n_dyn
    if side == 'input':
        v = input_krylov_basis(tline2, d).basis
        v1, v2 = v[:n], v[n:]
        res = ode.a1 @ v1 - ode.e1 @ v1 @ s - ode.b1 @ r
        scale = np.abs(ode.a1).max() * np.abs(v1).max()
        v2_ref = np.linalg.solve(tline2.a22.toarray(), -tline2.a21 @ v1 + tline2.b22 @ r)
    else:
        v = output_krylov_basis(tline2, d).basis
        v1, v2 = v[:n], v[n:]
        res = ode.a1.T @ v1 - ode.e1.T @ v1 @ s - ode.c1.T @ r
        scale = np.abs(ode.a1).max() * np.abs(v1).max()
        v2_ref = np.linalg.solve(tline2.a22.toarray().T, -tline2.a12.T @ v1 + tline2.c22.T @ r)
    assert np.abs(res).max() < 1e-8 * scale
    assert np.abs(v2 - v2_ref).max() < 1e-10 * np.abs(v).max()


@given(st.integers(0, 2**32 - 1))
def test_top_block_sylvester_property(seed):
    out = acceptance.sylvester_equivalence_case(seed)
    assert out['input_residual'] < 1e-8 and out['output_residual'] < 1e-8
    assert out['input_bottom'] < 1e-10 and out['output_bottom'] < 1e-10


def test_symmetric_system_output_equals_input(rng):
    n1, n2 = 4, 3
    g = rng.standard_normal((n1, n1))
    a11 = -(g @ g.T) - np.eye(n1)
    a12 = rng.standard_normal((n1, n2))
    a22 = -2 * np.eye(n2) + np.diag(rng.uniform(0, 1, n2))
    b11, b22 = rng.standard_normal((n1, 2)), rng.standard_normal((n2, 2))
    dae = SemiExplicitDAE(np.eye(n1) * 2, a11, a12, a12.T, a22, b11, b22, b11.T, b22.T, np.zeros((2, 2)))
    dirs = [rng.standard_normal(2) for _ in range(3)]
    v = input_krylov_basis(dae, shifts_to_sylvester([0.5, 1.0, 3.0], dirs)).basis
    w = output_krylov_basis(dae, shifts_to_sylvester([0.5, 1.0, 3.0], dirs, 'output')).basis
    np.testing.assert_allclose(w, v, atol=1e-10 * np.abs(v).max())


def _basis(tline2):
    return input_krylov_basis(tline2, shifts_to_sylvester([1e6, 3e6 + 2e7j, 3e6 - 2e7j], [1.0] * 3))


def test_change_basis_identity(tline2):
    b = _basis(tline2)
    c = change_basis(b, np.eye(3))
    np.testing.assert_array_equal(c.basis, b.basis)
    np.testing.assert_array_equal(c.data.s, b.data.s)
    np.testing.assert_array_equal(c.data.r, b.data.r)


def test_change_basis_orthonormal(tline2):
    b = orthonormalize_basis(_basis(tline2))
    assert np.abs(b.basis.T @ b.basis - np.eye(3)).max() < 1e-12
    assert b.relative_residual < 1e-8


def test_change_basis_scaling(tline2):
    b = _basis(tline2)
    c = change_basis(b, 2 * np.eye(3))
    np.testing.assert_allclose(c.data.s, b.data.s, rtol=1e-15)
    np.testing.assert_allclose(c.data.r, 2 * b.data.r, rtol=1e-15)
    res, scale = sylvester_residual(tline2, c.basis, c.data)
    assert res < 1e-8 * scale


def test_change_basis_singular(tline2):
    with pytest.raises(SingularMatrix):
        change_basis(_basis(tline2), np.zeros((3, 3)))


@given(st.integers(0, 2**32 - 1))
def test_change_basis_similarity_property(seed):
    r = np.random.default_rng(seed)
    dae = random_semi_explicit(6, 4, 2, 1, r)
    data = shifts_to_sylvester([0.5, 1 + 1j, 1 - 1j], [r.standard_normal(2), np.ones(2) + 1j, np.ones(2) - 1j])
    b = input_krylov_basis(dae, data)
    t = r.standard_normal((3, 3)) + 3 * np.eye(3)
    c = change_basis(b, t)
    lam0 = np.sort_complex(np.linalg.eigvals(b.data.s))
    lam1 = np.sort_complex(np.linalg.eigvals(c.data.s))
    assert np.abs(lam0 - lam1).max() < 1e-10
    assert c.relative_residual < 1e-8


def test_output_data_roundtrip():
    d = InterpolationData(np.diag([1.0, 2.0]), np.ones((2, 3)), 'output')
    s, r = d.sylvester_pair()
    np.testing.assert_array_equal(s, d.s.T)
    assert r.shape == (3, 2)
    with pytest.raises(AttributeError):
        d.r


def test_tangential_data_pairs():
    d = shifts_to_sylvester([2.0, 1 + 1j, 1 - 1j], [[1.0, 0.0], [1.0, 1j], [1.0, -1j]])
    pairs = d.tangential_data()
    assert len(pairs) == 2
    for s, x in pairs:
        if s == 2:
            np.testing.assert_allclose(x / x[0], [1, 0])
        else:
            assert s == 1 + 1j
            np.testing.assert_allclose(x / x[0], [1, 1j])


def test_arnoldi_matches_jordan_chain(tline2):
    order = 4
    a = arnoldi_basis(tline2, 0.0, order)
    j = input_krylov_basis(tline2, shifts_to_sylvester([0.0] * order, [1.0] * order))
    assert np.abs(a.basis.T @ a.basis - np.eye(order)).max() < 1e-12
    assert a.relative_residual < 1e-8
    assert span_distance(a.basis, j.basis) < 1e-8


def test_arnoldi_output_side(tline2):
    a = arnoldi_basis(tline2, 0.0, 3, side='output')
    assert a.side == 'output'
    assert a.relative_residual < 1e-8
