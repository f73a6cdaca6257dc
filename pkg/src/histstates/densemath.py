"""Dense complex linear algebra helpers and the registry of named states and gates.

Matrices and kets are plain complex ``numpy`` arrays. The helpers here only add
the validation and conventions the rest of the package relies on:

* Kronecker products put the *latest* time slot leftmost, so ``kron(a, b)``
  for a two-time history operator reads ``a`` at ``t2`` and ``b`` at ``t1``.
* Eigenvectors have their largest-magnitude component made real positive.
"""

from __future__ import annotations

import re
from functools import reduce

import numpy as np

from .errors import NormalizationError, NotHermitian, ShapeMismatch

DEFAULT_TOL = 1e-10

SQRT1_2 = 1.0 / np.sqrt(2.0)


def as_cmatrix(a, name="matrix"):
    """Return ``a`` as a finite 2-D complex array (a copy is made only when needed)."""
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def as_cket(v, name="ket"):
    k = np.asarray(v, dtype=complex)
    if k.ndim == 2 and 1 in k.shape:
        k = k.reshape(-1)
    if k.ndim != 1:
        raise ShapeMismatch(f"{name} must be 1-D, got shape {k.shape}")
    if not np.all(np.isfinite(k)):
        raise ValueError(f"{name} has non-finite entries")
    return k


def frozen(a):
    """Read-only view, used for values stored inside immutable records."""
    a = np.array(a, dtype=complex)
    a.flags.writeable = False
    return a


def dagger(a):
    return np.conj(np.transpose(a))


def kron(a, b):
    """Kronecker product; ``(a⊗b)[i*rb + k, j*cb + l] = a[i, j] * b[k, l]``."""
    return np.kron(as_cmatrix(a, "a"), as_cmatrix(b, "b"))


def kron_all(mats):
    """Kronecker product of a sequence, first element leftmost (slowest varying)."""
    mats = list(mats)
    if not mats:
        return np.ones((1, 1), dtype=complex)
    return reduce(np.kron, (as_cmatrix(m) for m in mats))


def kron_kets(kets):
    kets = list(kets)
    if not kets:
        return np.ones(1, dtype=complex)
    return reduce(np.kron, (as_cket(k) for k in kets))


def is_normalized(v, tol=DEFAULT_TOL):
    return abs(np.linalg.norm(v) - 1.0) <= tol


def projector(v, tol=DEFAULT_TOL):
    """Rank-1 projector ``|v><v|`` onto a normalized ket."""
    v = as_cket(v)
    if not is_normalized(v, tol):
        raise NormalizationError(f"ket has norm {np.linalg.norm(v):.6g}, expected 1")
    return np.outer(v, np.conj(v))


def outer(u, v):
    """``|u><v|`` with no normalization requirement."""
    return np.outer(as_cket(u), np.conj(as_cket(v)))


def frob_inner(a, b):
    """Trace pairing ``Tr[a† b]``."""
    a = as_cmatrix(a, "a")
    b = as_cmatrix(b, "b")
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


def frob_norm(a):
    return float(np.linalg.norm(a))


def is_hermitian(a, tol=DEFAULT_TOL):
    a = np.asarray(a)
    return a.shape[0] == a.shape[1] and np.linalg.norm(a - dagger(a)) <= tol


def is_unitary(a, tol=DEFAULT_TOL):
    a = np.asarray(a)
    if a.shape[0] != a.shape[1]:
        return False
    return np.linalg.norm(dagger(a) @ a - np.eye(a.shape[0])) <= tol


def is_isometry(a, tol=DEFAULT_TOL):
    """True for unitaries and for rectangular maps that are isometric on the smaller space."""
    a = np.asarray(a)
    rows, cols = a.shape
    if rows >= cols:
        return np.linalg.norm(dagger(a) @ a - np.eye(cols)) <= tol
    return np.linalg.norm(a @ dagger(a) - np.eye(rows)) <= tol


def fix_phase(v):
    """Multiply ``v`` by a unit phase so its largest-magnitude entry is real positive.

    Ties are broken by the lowest index (up to a small slack), which keeps the
    convention deterministic for vectors with several equal-magnitude entries.
    """
    v = np.asarray(v, dtype=complex)
    mags = np.abs(v)
    if mags.max() == 0:
        return v.copy()
    k = int(np.flatnonzero(mags >= mags.max() - 1e-12)[0])
    return v * (np.conj(v[k]) / mags[k])


def eig_hermitian(a, tol=DEFAULT_TOL):
    """Eigen-decomposition of a hermitian matrix.

    Returns
    -------
    values : ndarray of float
        Eigenvalues in descending order.
    vectors : ndarray
        Orthonormal eigenvectors as columns, phase-fixed with :func:`fix_phase`.
    """
    a = as_cmatrix(a)
    if not is_hermitian(a, tol):
        raise NotHermitian(f"‖a - a†‖ = {np.linalg.norm(a - dagger(a)):.3g} exceeds {tol}")
    vals, vecs = np.linalg.eigh((a + dagger(a)) / 2)
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    vecs = np.column_stack([fix_phase(vecs[:, j]) for j in range(vecs.shape[1])])
    return vals, vecs


def commutator(a, b):
    return a @ b - b @ a


def partial_trace(m, dims, keep):
    """Trace out every tensor factor of ``m`` except index ``keep``."""
    dims = tuple(dims)
    n = len(dims)
    t = np.asarray(m).reshape(dims + dims)
    keep_dim = dims[keep]
    # move the kept row/column axes to the end and trace pairwise over the rest
    order = [i for i in range(n) if i != keep] + [keep]
    t = np.transpose(t, order + [n + i for i in order])
    rest = int(np.prod([dims[i] for i in range(n) if i != keep]))
    t = t.reshape(rest, keep_dim, rest, keep_dim)
    return np.einsum("iaib->ab", t)


def lift(op, dims, index):
    """Embed ``op`` acting on tensor factor ``index`` into the full space ``⊗ dims``."""
    mats = [np.eye(d, dtype=complex) for d in dims]
    mats[index] = as_cmatrix(op)
    return kron_all(mats)


# --- named registry -------------------------------------------------------

_ZP = np.array([1, 0], dtype=complex)
_ZM = np.array([0, 1], dtype=complex)

KETS = {
    "z+": _ZP,
    "z-": _ZM,
    "x+": (_ZP + _ZM) * SQRT1_2,
    "x-": (_ZP - _ZM) * SQRT1_2,
    "y+": (_ZP + 1j * _ZM) * SQRT1_2,
    "y-": (_ZP - 1j * _ZM) * SQRT1_2,
    "0": _ZP,
    "1": _ZM,
    "+": (_ZP + _ZM) * SQRT1_2,
    "-": (_ZP - _ZM) * SQRT1_2,
}

GATES = {
    "sx": np.array([[0, 1], [1, 0]], dtype=complex),
    "sy": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "sz": np.array([[1, 0], [0, -1]], dtype=complex),
    "H": np.array([[1, 1], [1, -1]], dtype=complex) * SQRT1_2,
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
}

_IDENTITY_RE = re.compile(r"^I\((\d+)\)$")


def ket(name):
    try:
        return KETS[name].copy()
    except KeyError:
        raise KeyError(f"unknown ket {name!r}") from None


def gate(name):
    """Look up a named gate; ``"I(d)"`` gives the d-dimensional identity."""
    m = _IDENTITY_RE.match(name)
    if m:
        return np.eye(int(m.group(1)), dtype=complex)
    try:
        return GATES[name].copy()
    except KeyError:
        raise KeyError(f"unknown gate {name!r}") from None


def basis_ket(dim, index):
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


def random_unitary(d, rng):
    """Haar-random unitary from a ``numpy.random.Generator``."""
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))
