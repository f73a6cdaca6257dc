"""History operators: conjugation chains, spectral observables and eigenhistory families."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .densemath import (
    DEFAULT_TOL,
    as_cmatrix,
    commutator,
    dagger,
    fix_phase,
    frozen,
    is_hermitian,
    kron_all,
    lift,
    outer,
)
from .errors import (
    FamilyInvalid,
    FamilyNotValidated,
    NonCommuting,
    NotHermitian,
    NotNormalized,
    ShapeMismatch,
    ZeroWeight,
)
from .families import Family, validate_family
from .histcore import ChainTerm, HistoryState, elementary_expansion, inner, normalize, weight


@dataclass(frozen=True, eq=False)
class ProductHistoryOperator:
    """One operator per time slot, stored in time order (``t1`` first).

    Acting on a history state it conjugates each chain factor; as a matrix on
    the history space it is the Kronecker product with ``t_n`` leftmost.
    """

    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(frozen(as_cmatrix(f)) for f in self.factors))

    @classmethod
    def printed(cls, *factors):
        """Build from factors written latest time first, e.g. ``printed(sy, sx)`` for σy ⊙ σx."""
        return cls(tuple(reversed(factors)))

    @classmethod
    def identity(cls, timeline):
        return cls(tuple(np.eye(d) for d in timeline.dims))

    @property
    def hermitian(self):
        return all(is_hermitian(f) for f in self.factors)

    def check(self, timeline):
        if len(self.factors) != len(timeline):
            raise ShapeMismatch(f"operator has {len(self.factors)} factors for {len(timeline)} slots")
        for f, d in zip(self.factors, timeline.dims):
            if f.shape != (d, d):
                raise ShapeMismatch(f"operator factor {f.shape} does not match slot dimension {d}")


def conj_apply(op, psi):
    """Map every chain factor ``F_j`` to ``A_j F_j A_j†``."""
    op.check(psi.timeline)
    terms = tuple(
        ChainTerm(t.coeff, tuple(a @ f @ dagger(a) for a, f in zip(op.factors, t.factors)))
        for t in psi.terms
    )
    return HistoryState(psi.timeline, terms)


def conj_apply_sum(weighted_ops, psi):
    """General conjugation operator ``Σ_i α_i (A_i ... )``; ``weighted_ops`` is ``[(α_i, op_i), ...]``."""
    out = HistoryState.zero(psi.timeline)
    for alpha, op in weighted_ops:
        out = out + alpha * conj_apply(op, psi)
    return out


def as_matrix(op):
    return kron_all(reversed(op.factors))


def commutator_norm(a, b):
    return float(np.linalg.norm(commutator(a, b)))


def _split_blocks(values, tol):
    """Group consecutive (sorted) eigenvalues closer than ``tol``."""
    blocks, start = [], 0
    for k in range(1, len(values) + 1):
        if k == len(values) or abs(values[k] - values[start]) > tol:
            blocks.append(range(start, k))
            start = k
    return blocks


def simultaneous_eigenbasis(mats, tol=DEFAULT_TOL, seed=0):
    """Common orthonormal eigenbasis of commuting hermitian matrices.

    A random real combination of the matrices is diagonalized first (fixed
    ``seed``); any block that stays degenerate is re-diagonalized with each
    matrix in turn. Returns ``(values, vectors)`` with ``values[k, j]`` the
    eigenvalue of ``mats[k]`` on column ``j`` of ``vectors``. Columns are
    sorted by descending eigenvalue tuples and phase-fixed.
    """
    mats = [as_cmatrix(m) for m in mats]
    for i, m in enumerate(mats):
        if not is_hermitian(m, tol):
            raise NotHermitian(f"operator {i} is not hermitian")
    for i in range(len(mats)):
        for j in range(i + 1, len(mats)):
            if commutator_norm(mats[i], mats[j]) > tol:
                raise NonCommuting(f"operators {i} and {j} do not commute")
    d = mats[0].shape[0]
    rng = np.random.default_rng(seed)
    weights = rng.uniform(0.5, 1.5, size=len(mats))
    mix = sum(w * m for w, m in zip(weights, mats))
    vals, vecs = np.linalg.eigh((mix + dagger(mix)) / 2)
    blocks = [vecs[:, list(r)] for r in _split_blocks(vals, 1e3 * tol)]

    for m in mats:
        refined = []
        for sub in blocks:
            if sub.shape[1] == 1:
                refined.append(sub)
                continue
            h = dagger(sub) @ m @ sub
            hv, w = np.linalg.eigh((h + dagger(h)) / 2)
            refined.extend((sub @ w)[:, list(r)] for r in _split_blocks(hv, 1e3 * tol))
        blocks = refined
    vecs = np.column_stack(blocks)

    values = np.array([[np.vdot(vecs[:, j], m @ vecs[:, j]).real for j in range(d)] for m in mats])
    for m, row in zip(mats, values):
        if np.linalg.norm(m @ vecs - vecs * row) > 1e3 * tol:
            raise NonCommuting("matrices share no common eigenbasis")
    order = np.lexsort(-np.round(values, 8)[::-1])
    values = values[:, order]
    vecs = np.column_stack([fix_phase(vecs[:, j]) for j in order])
    return values, vecs


def projector_history(timeline, v):
    """``|v><v|`` on the history space written as elementary chains (``d²`` terms)."""
    return elementary_expansion(timeline, outer(v, v))


def _refiners(ops, timeline, tol):
    """Per-slot factors lifted to the history space that commute with every op and each other.

    They break degeneracies that a single product operator leaves open, which
    picks out product eigenvectors whenever the operator set allows them.
    """
    mats = [as_matrix(op) for op in ops]
    dims = tuple(reversed(timeline.dims))
    n = len(timeline)
    accepted = []
    for op in ops:
        for j, f in enumerate(op.factors):
            cand = lift(f, dims, n - 1 - j)
            if all(commutator_norm(cand, m) <= tol for m in mats + accepted):
                accepted.append(cand)
    return accepted


def observable_family(ops, timeline, bridging, tol=DEFAULT_TOL, seed=0):
    """Family of normalized eigenhistories of a set of commuting hermitian product operators.

    Each simultaneous eigenvector ``|Ψ_i>`` of the operators' matrix forms
    becomes the history state ``|Ψ_i><Ψ_i|``, normalized when its weight is
    nonzero and kept as a null member otherwise. The family is validated
    before it is returned.
    """
    for op in ops:
        op.check(timeline)
        if not op.hermitian:
            raise NotHermitian("observable operators must have hermitian factors")
    mats = [as_matrix(op) for op in ops]
    for i in range(len(mats)):
        for j in range(i + 1, len(mats)):
            if commutator_norm(mats[i], mats[j]) > tol:
                raise NonCommuting(f"operators {i} and {j} do not commute on the history space")
    extra = _refiners(ops, timeline, tol)
    values, vecs = simultaneous_eigenbasis(mats + extra, tol, seed)
    values = values[: len(mats)]

    members, names = [], []
    for j in range(vecs.shape[1]):
        h = projector_history(timeline, vecs[:, j])
        try:
            h = normalize(h, bridging, tol)
        except ZeroWeight:
            pass
        members.append(h)
        names.append(f"Psi{j + 1}")
    fam = Family(tuple(members), tuple(names))
    report = validate_family(fam, bridging, tol)
    if not report.passed:
        raise FamilyInvalid("eigenhistories do not form a family: " + "; ".join(report.failures))
    return ObservableFamily(fam.members, fam.names, report, eigenvalues=values, eigenvectors=vecs)


@dataclass(frozen=True, eq=False)
class ObservableFamily(Family):
    """A validated family that also remembers the eigen-data it came from."""

    eigenvalues: np.ndarray | None = None
    eigenvectors: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class SpectralObservable:
    """``B = Σ b_i |Y_i)(Y_i|`` over a validated family."""

    family: Family
    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) != len(self.family):
            raise ValueError("one value per family member required")
        object.__setattr__(self, "values", vals)


def measure_distribution(psi, obs, bridging, tol=DEFAULT_TOL):
    """Outcome distribution ``{b: Σ_{i: b_i = b} |(Y_i|Ψ)|²}``, keys in first-seen order."""
    report = obs.family.report
    if report is None or not report.passed:
        raise FamilyNotValidated("spectral observable needs a validated family")
    w = weight(psi, bridging)
    if abs(w - 1.0) > tol:
        raise NotNormalized(f"history weight is {w:.6g}, expected 1")
    unit = set(report.unit_members)
    dist = {}
    for i, (b, m) in enumerate(zip(obs.values, obs.family.members)):
        p = abs(inner(m, psi, bridging)) ** 2 if i in unit else 0.0
        key = next((k for k in dist if abs(k - b) <= tol), b)
        dist[key] = dist.get(key, 0.0) + p
    return dist
