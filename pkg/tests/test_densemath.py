import numpy as np
import pytest

from helpers import random_matrix
from histstates.densemath import (
    KETS,
    commutator,
    eig_hermitian,
    fix_phase,
    frob_inner,
    gate,
    is_isometry,
    is_unitary,
    ket,
    kron,
    kron_all,
    lift,
    partial_trace,
    projector,
    random_unitary,
)
from histstates.errors import NormalizationError, NotHermitian, ShapeMismatch

sx, sy, sz = gate("sx"), gate("sy"), gate("sz")


def test_kron_places_first_factor_leftmost():
    a = np.array([[1, 2], [3, 4]])
    b = np.eye(2)
    k = kron(a, b)
    assert k.shape == (4, 4)
    assert np.allclose(k[:2, 2:], 2 * np.eye(2))
    assert np.allclose(k[2:, :2], 3 * np.eye(2))
    assert np.allclose(kron_all([ket("z-").reshape(-1, 1), ket("z+").reshape(-1, 1)]).ravel(), [0, 0, 1, 0])


def test_kron_of_paulis():
    k = kron(sy, sx)
    expected = np.array([[0, 0, 0, -1j], [0, 0, -1j, 0], [0, 1j, 0, 0], [1j, 0, 0, 0]])
    assert np.allclose(k, expected)
    vals, _ = eig_hermitian(k)
    assert np.allclose(vals, [1, 1, -1, -1])


def test_kron_associative_and_bilinear(rng):
    for _ in range(50):
        d = [int(x) for x in rng.integers(2, 4, size=3)]
        a, b, c = (random_matrix(rng, k) for k in d)
        assert np.linalg.norm(kron(kron(a, b), c) - kron(a, kron(b, c))) <= 1e-12 * np.linalg.norm(kron_all([a, b, c]))
        s = complex(rng.standard_normal(), rng.standard_normal())
        b2 = random_matrix(rng, d[1])
        assert np.allclose(kron(a, s * b + b2), s * kron(a, b) + kron(a, b2), atol=1e-12)


def test_mixed_product(rng):
    for _ in range(50):
        a, c = random_matrix(rng, 2), random_matrix(rng, 2)
        b, d = random_matrix(rng, 3), random_matrix(rng, 3)
        assert np.allclose(kron(a, b) @ kron(c, d), kron(a @ c, b @ d), atol=1e-12)


def test_projector():
    p = projector(KETS["x+"])
    assert np.allclose(p, 0.5 * np.ones((2, 2)))
    assert np.allclose(p @ p, p)
    with pytest.raises(NormalizationError):
        projector([1, 1])


def test_frob_inner(rng):
    a = random_matrix(rng, 3)
    assert frob_inner(a, a).real > 0
    assert frob_inner(np.zeros((2, 2)), np.zeros((2, 2))) == 0
    b = random_matrix(rng, 3)
    assert np.isclose(frob_inner(a, b), np.trace(a.conj().T @ b))
    assert np.isclose(frob_inner(a, b), np.conj(frob_inner(b, a)))
    with pytest.raises(ShapeMismatch):
        frob_inner(np.eye(2), np.eye(3))


@pytest.mark.parametrize("name, plus, minus", [("sz", "z+", "z-"), ("sx", "x+", "x-"), ("sy", "y+", "y-")])
def test_pauli_eigenvectors(name, plus, minus):
    vals, vecs = eig_hermitian(gate(name))
    assert np.allclose(vals, [1, -1])
    for j, k in enumerate((plus, minus)):
        assert abs(abs(np.vdot(KETS[k], vecs[:, j])) - 1) < 1e-12


def test_eig_reconstruction(rng):
    for d in (2, 3, 5, 8):
        a = random_matrix(rng, d)
        h = a + a.conj().T
        vals, vecs = eig_hermitian(h)
        assert np.all(np.diff(vals) <= 1e-12)
        assert np.linalg.norm(vecs @ np.diag(vals) @ vecs.conj().T - h) <= 1e-10
    with pytest.raises(NotHermitian):
        eig_hermitian(np.array([[0, 1], [0, 0]]))


def test_fix_phase():
    v = fix_phase(np.array([0.3j, -0.9j, 0.1]))
    assert v[1].real > 0 and abs(v[1].imag) < 1e-15
    tie = fix_phase(np.array([1j, 1j]) / np.sqrt(2))
    assert np.allclose(tie, [1 / np.sqrt(2)] * 2)


def test_unitary_and_isometry(rng):
    u = random_unitary(4, rng)
    assert is_unitary(u)
    assert is_isometry(u[:, :2]) and is_isometry(u[:2, :])
    assert not is_unitary(u[:, :2])
    assert not is_isometry(2 * u)


def test_commutator_of_restrictions_and_products():
    assert np.linalg.norm(commutator(sy, sx)) > 1
    assert np.linalg.norm(commutator(kron(sy, sx), kron(sx, sz))) <= 1e-12


def test_lift_and_partial_trace(rng):
    a = random_matrix(rng, 2)
    full = lift(a, (3, 2), 1)
    assert np.allclose(full, np.kron(np.eye(3), a))
    rho = kron(projector(ket("x+")), projector(ket("z-")))
    assert np.allclose(partial_trace(rho, (2, 2), 0), projector(ket("x+")))
    assert np.allclose(partial_trace(rho, (2, 2), 1), projector(ket("z-")))


def test_identity_gate_and_unknown_names():
    assert np.array_equal(gate("I(3)"), np.eye(3))
    with pytest.raises(KeyError):
        gate("Hh")
    with pytest.raises(KeyError):
        ket("q")
