import math

import numpy as np
import pytest

from gated_xtfc import kernels as K

H = 1e-5


def central(f, x, h=H):
    return (f(x + h) - f(x - h)) / (2 * h), (f(x + h) - 2 * f(x) + f(x - h)) / h**2


def test_gaussian_origin():
    phi, d1, d2 = K.gaussian(0.0)
    assert (phi, d1, d2) == (1.0, 0.0, -2.0)


def test_gaussian_at_one():
    phi, d1, d2 = K.gaussian(1.0)
    e = math.exp(-1)
    np.testing.assert_allclose([phi, d1, d2], [e, -2 * e, 2 * e], rtol=1e-15)


def test_gaussian_derivatives_fd():
    z = 0.37
    fd1, fd2 = central(lambda t: math.exp(-t * t), z)
    _, d1, d2 = K.gaussian(z)
    assert d1 == pytest.approx(fd1, rel=1e-6)
    assert d2 == pytest.approx(fd2, rel=1e-5)
    fd2_of_d1 = (K.gaussian(z + H)[1] - K.gaussian(z - H)[1]) / (2 * H)
    assert d2 == pytest.approx(fd2_of_d1, rel=1e-6)


def test_atom_parameters():
    a = K.RBFAtom(center=0.3, width=0.02)
    assert a.slope == 1.0 / (math.sqrt(2) * 0.02)
    assert a.offset == -a.slope * 0.3
    with pytest.raises(ValueError):
        K.RBFAtom(0.5, 0.0)


def _random_atoms(n, seed):
    rng = np.random.default_rng(seed)
    return [K.RBFAtom(c, w) for c, w in zip(rng.uniform(0, 1, n), 10 ** rng.uniform(-4, 0, n))]


def test_constrained_basis_vanishes_at_ends():
    for atom in _random_atoms(2000, 1):
        for x in (0.0, 1.0):
            psi, _, _ = K.constrained_basis(atom, x)
            assert abs(psi) <= 1e-14


def test_constrained_basis_derivatives_fd():
    atom = K.RBFAtom(0.55, 0.1)
    psi = lambda t: K.constrained_basis(atom, t)[0]
    fd1, fd2 = central(psi, 0.6)
    # second difference from first derivatives avoids h^-2 cancellation
    fd2b = (K.constrained_basis(atom, 0.6 + H)[1] - K.constrained_basis(atom, 0.6 - H)[1]) / (2 * H)
    _, d1, d2 = K.constrained_basis(atom, 0.6)
    assert d1 == pytest.approx(fd1, rel=1e-6)
    assert d2 == pytest.approx(fd2b, rel=1e-6)
    assert d2 == pytest.approx(fd2, rel=1e-3)


def test_expanded_form_of_cd_operator():
    nu = 0.01
    op = K.convection_diffusion(nu)
    x = np.linspace(0, 1, 101)
    for atom in _random_atoms(50, 2):
        m, b = atom.slope, atom.offset
        z = m * x + b
        _, d1, d2 = K.gaussian(z)
        expanded = (math.exp(-b * b) - math.exp(-(m + b) ** 2)) + m * d1 - nu * m * m * d2
        got = K.apply_operator(op, atom, x)
        np.testing.assert_allclose(got, expanded, rtol=1e-12, atol=1e-12 * np.max(np.abs(expanded)))


def test_twin_operator_at_midpoint():
    nu = 0.05
    op = K.twin_layer(nu)
    atom = K.RBFAtom(0.4, 0.15)
    psi, _, d2 = K.constrained_basis(atom, 0.5)
    assert K.apply_operator(op, atom, 0.5) == pytest.approx(-nu * d2 + 4 * psi, rel=1e-14)


@pytest.mark.parametrize("op", [K.convection_diffusion(0.03), K.twin_layer(0.03)], ids=["cd", "twin"])
def test_operator_matrix_matches_fd(op):
    rng = np.random.default_rng(5)
    atoms = _random_atoms(6, 7)
    atoms = [K.RBFAtom(a.center, max(a.width, 0.05)) for a in atoms]
    m, b = K.slopes_offsets([a.center for a in atoms], [a.width for a in atoms])
    x = rng.uniform(0.05, 0.95, 20)
    R = K.operator_matrix(op, x, m, b)
    for i, atom in enumerate(atoms):
        psi = lambda t: K.constrained_basis(atom, t)[0]
        dpsi = lambda t: K.constrained_basis(atom, t)[1]
        fd1 = (psi(x + H) - psi(x - H)) / (2 * H)
        fd2 = (dpsi(x + H) - dpsi(x - H)) / (2 * H)
        ref = op.a(x) * fd1 - op.nu * fd2 + op.reaction * psi(x)
        np.testing.assert_allclose(R[:, i], ref, rtol=1e-6, atol=1e-6 * np.max(np.abs(ref)))
        np.testing.assert_allclose(R[:, i], K.apply_operator(op, atom, x), rtol=1e-12, atol=1e-12)


def test_basis_matrix_matches_scalar_path():
    atoms = _random_atoms(7, 11)
    m, b = K.slopes_offsets([a.center for a in atoms], [a.width for a in atoms])
    x = np.linspace(0, 1, 33)
    H_ = K.basis_matrix(x, m, b)
    for i, atom in enumerate(atoms):
        np.testing.assert_allclose(H_[:, i], K.constrained_basis(atom, x)[0], atol=1e-15)


class TestOperatorOnG:
    def test_cd_constant(self):
        op = K.convection_diffusion(1e-3)
        x = np.linspace(0, 1, 11)
        np.testing.assert_array_equal(K.apply_operator_to_g(op, K.BoundaryData(0, 1), x), 1.0)

    def test_zero_data(self):
        op = K.convection_diffusion(0.1)
        assert K.apply_operator_to_g(op, K.BoundaryData(0, 0), 0.3) == 0.0

    def test_twin(self):
        # 2(2*0.25-1)*(1-1) + 4*1
        assert K.apply_operator_to_g(K.twin_layer(0.1), K.BoundaryData(1, 1), 0.25) == 4.0


class TestExactCD:
    def test_boundary_values(self):
        for nu in (1.0, 1e-2, 1e-4, 1e-8):
            assert K.exact_cd(0.0, nu) == 0.0
            assert K.exact_cd(1.0, nu) == 1.0

    def test_direct_formula(self):
        expected = (math.exp(0.5) - 1) / (math.e - 1)
        assert K.exact_cd(0.5, 1.0) == pytest.approx(expected, rel=1e-14)
        assert expected == pytest.approx(0.377541, abs=1e-6)

    def test_small_nu_no_overflow(self):
        assert K.exact_cd(0.999, 1e-4) == pytest.approx(math.exp(-10.0), rel=1e-12)

    def test_increasing(self):
        x = np.linspace(0, 1, 2001)
        assert np.all(np.diff(K.exact_cd(x, 0.05)) > 0)

    @pytest.mark.parametrize("nu", [1.0, 0.1, 0.01])
    def test_satisfies_pde(self, nu):
        h = 1e-4 * nu
        x = np.linspace(0.01, 1 - 10 * nu, 200)
        u = lambda t: K.exact_cd(t, nu)
        d1 = (u(x + h) - u(x - h)) / (2 * h)
        d2 = (u(x + h) - 2 * u(x) + u(x - h)) / h**2
        scale = np.max(np.abs(d1))
        assert np.max(np.abs(d1 - nu * d2)) / scale <= 1e-4


class TestExactTwin:
    def test_boundary_values(self):
        assert K.exact_twin(0.0, 0.3) == 1.0
        assert K.exact_twin(1.0, 0.3) == 1.0

    def test_midpoint(self):
        assert K.exact_twin(0.5, 0.1) == pytest.approx(math.exp(-5.0), rel=1e-14)
        assert K.exact_twin(0.5, 0.1) == pytest.approx(6.7379e-3, rel=1e-4)

    def test_symmetry(self):
        x = np.random.default_rng(0).uniform(0, 1, 100)
        np.testing.assert_allclose(K.exact_twin(x, 0.07), K.exact_twin(1 - x, 0.07), rtol=1e-12)

    @pytest.mark.parametrize("nu", [0.5, 0.05, 0.01])
    def test_satisfies_pde(self, nu):
        h = 1e-4 * nu
        x = np.linspace(0.2, 0.8, 200)
        u = lambda t: K.exact_twin(t, nu)
        d1 = (u(x + h) - u(x - h)) / (2 * h)
        d2 = (u(x + h) - 2 * u(x) + u(x - h)) / h**2
        res = 2 * (2 * x - 1) * d1 - nu * d2 + 4 * u(x)
        assert np.max(np.abs(res)) / np.max(np.abs(d1)) <= 1e-4
