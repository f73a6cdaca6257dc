"""History spaces, history states and the chain operator.

A history state is stored as an explicit list of :class:`ChainTerm` s. Each
term carries one operator per time slot in *time order* (``t1`` first). The
printed convention ``F_n ⊙ ... ⊙ F_1`` lists the latest time first; use
:func:`chain` to build terms in that order.

Two history states can differ term by term yet be physically identical: the
inner product only sees the chain-operator image ``K|Ψ)``. :func:`physically_equal`
compares those images; :func:`syntactically_equal` compares term lists.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from itertools import product
from math import prod

import numpy as np

from .densemath import (
    DEFAULT_TOL,
    as_cmatrix,
    frob_inner,
    frozen,
    is_isometry,
    kron_all,
)
from .errors import ShapeMismatch, TimelineMismatch, ZeroWeight


@dataclass(frozen=True)
class Slot:
    """One time slot. ``dims`` lists subsystem dimensions; the slot dimension is their product."""

    label: str
    dims: tuple[int, ...] = (2,)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if not self.dims or any(d < 1 for d in self.dims):
            raise ValueError(f"slot {self.label!r} needs positive dimensions, got {self.dims}")

    @property
    def dim(self):
        return prod(self.dims)


@dataclass(frozen=True)
class Timeline:
    slots: tuple[Slot, ...]

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))
        if not self.slots:
            raise ValueError("a timeline needs at least one slot")

    @classmethod
    def from_dims(cls, *dims, labels=None):
        """``Timeline.from_dims(2, 2, 2)``; an entry may be a tuple of subsystem dims."""
        labels = labels or [f"t{i + 1}" for i in range(len(dims))]
        return cls(tuple(Slot(lab, d if isinstance(d, tuple) else (d,)) for lab, d in zip(labels, dims)))

    def __len__(self):
        return len(self.slots)

    @property
    def dims(self):
        return tuple(s.dim for s in self.slots)

    @property
    def labels(self):
        return tuple(s.label for s in self.slots)

    @property
    def hilbert_dim(self):
        """Dimension of the full history space ``H_tn ⊙ ... ⊙ H_t1``."""
        return prod(self.dims)


@dataclass(frozen=True, eq=False)
class BridgingSet:
    """Evolution between consecutive slots; ``steps[j]`` maps slot ``j`` to slot ``j + 1``."""

    steps: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(frozen(as_cmatrix(s, "bridging step")) for s in self.steps))

    @classmethod
    def trivial(cls, timeline):
        """Identity evolution; requires every slot to have the same dimension."""
        dims = set(timeline.dims)
        if len(dims) != 1:
            raise ShapeMismatch("trivial bridging needs equal slot dimensions")
        d = dims.pop()
        return cls(tuple(np.eye(d) for _ in range(len(timeline) - 1)))

    def check(self, timeline, tol=DEFAULT_TOL):
        if len(self.steps) != len(timeline) - 1:
            raise ShapeMismatch(f"{len(timeline)} slots need {len(timeline) - 1} bridging steps, got {len(self.steps)}")
        for j, step in enumerate(self.steps):
            want = (timeline.dims[j + 1], timeline.dims[j])
            if step.shape != want:
                raise ShapeMismatch(f"bridging step {j} has shape {step.shape}, expected {want}")
            if not is_isometry(step, tol):
                raise ShapeMismatch(f"bridging step {j} is not unitary (or isometric)")

    def bridge(self, i, k):
        """Composite evolution from slot ``i`` to slot ``k`` (``i <= k``)."""
        if not 0 <= i <= k <= len(self.steps):
            raise IndexError(f"bad slot range {i}..{k}")
        if i == k:
            d = self.steps[i].shape[1] if i < len(self.steps) else self.steps[i - 1].shape[0]
            return np.eye(d, dtype=complex)
        return reduce(lambda acc, s: s @ acc, self.steps[i + 1:k], np.array(self.steps[i]))


@dataclass(frozen=True, eq=False)
class ChainTerm:
    coeff: complex
    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "coeff", complex(self.coeff))
        object.__setattr__(self, "factors", tuple(frozen(as_cmatrix(f, "factor")) for f in self.factors))

    def scaled(self, c):
        return ChainTerm(self.coeff * c, self.factors)


@dataclass(frozen=True, eq=False)
class HistoryState:
    """A complex linear combination of operator chains (the empty sum is the zero history)."""

    timeline: Timeline
    terms: tuple[ChainTerm, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        for t in self.terms:
            if len(t.factors) != len(self.timeline):
                raise ShapeMismatch(f"term has {len(t.factors)} factors for {len(self.timeline)} slots")
            for f, d in zip(t.factors, self.timeline.dims):
                if f.shape != (d, d):
                    raise ShapeMismatch(f"factor shape {f.shape} does not match slot dimension {d}")

    @classmethod
    def zero(cls, timeline):
        return cls(timeline, ())

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(-1, other))

    def __neg__(self):
        return scale(-1, self)

    def __mul__(self, c):
        return scale(c, self)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return scale(1 / c, self)


def chain(timeline, *factors, coeff=1.0):
    """Single-chain history state, factors given latest time first (``F_n, ..., F_1``)."""
    if len(factors) != len(timeline):
        raise ShapeMismatch(f"{len(factors)} factors given for {len(timeline)} slots")
    return HistoryState(timeline, (ChainTerm(coeff, tuple(reversed(factors))),))


def identity_history(timeline):
    """``1 ⊙ ... ⊙ 1``: no constraint at any time."""
    return HistoryState(timeline, (ChainTerm(1.0, tuple(np.eye(d) for d in timeline.dims)),))


def _same_timeline(phi, psi):
    if phi.timeline != psi.timeline:
        raise TimelineMismatch("history states live on different timelines")


def add(phi, psi):
    _same_timeline(phi, psi)
    return HistoryState(phi.timeline, phi.terms + psi.terms)


def scale(c, psi):
    if c == 0:
        return HistoryState.zero(psi.timeline)
    return HistoryState(psi.timeline, tuple(t.scaled(c) for t in psi.terms))


def combine(coeffs, states):
    """``Σ c_i · states[i]``."""
    states = list(states)
    if not states:
        raise ValueError("nothing to combine")
    out = HistoryState.zero(states[0].timeline)
    for c, s in zip(coeffs, states):
        out = add(out, scale(c, s))
    return out


def chain_k(term, bridging):
    """Chain operator of one term: ``coeff · F_n T ... T F_1``, a ``dim(t_n) × dim(t_1)`` matrix."""
    fs = term.factors
    if len(bridging.steps) != len(fs) - 1:
        raise ShapeMismatch(f"{len(fs)} factors need {len(fs) - 1} bridging steps")
    out = np.array(fs[0])
    for step, f in zip(bridging.steps, fs[1:]):
        if step.shape[1] != out.shape[0] or f.shape[1] != step.shape[0]:
            raise ShapeMismatch("bridging step shape does not match the adjacent factors")
        out = f @ (step @ out)
    return term.coeff * out


def k_of(psi, bridging):
    """Chain-operator image ``K|Ψ)``; the zero history maps to the zero matrix."""
    dims = psi.timeline.dims
    out = np.zeros((dims[-1], dims[0]), dtype=complex)
    for t in psi.terms:
        out += chain_k(t, bridging)
    return out


def inner(phi, psi, bridging):
    """``(Φ|Ψ) = Tr[(K|Φ))† K|Ψ)]``, antilinear in ``phi``."""
    _same_timeline(phi, psi)
    return frob_inner(k_of(phi, bridging), k_of(psi, bridging))


def weight(psi, bridging):
    k = k_of(psi, bridging)
    return float(np.vdot(k, k).real)


def normalize(psi, bridging, tol=DEFAULT_TOL):
    w = weight(psi, bridging)
    if w <= tol:
        raise ZeroWeight(f"history has weight {w:.3g}; it cannot occur")
    return scale(1 / np.sqrt(w), psi)


def physically_equal(phi, psi, bridging, tol=DEFAULT_TOL):
    """True when the two histories have the same chain-operator image (within ``tol``, Frobenius)."""
    _same_timeline(phi, psi)
    return float(np.linalg.norm(k_of(phi, bridging) - k_of(psi, bridging))) <= tol


def as_operator(psi):
    """The history state as an operator on the full history space (``t_n`` leftmost)."""
    d = psi.timeline.hilbert_dim
    out = np.zeros((d, d), dtype=complex)
    for t in psi.terms:
        out += t.coeff * kron_all(reversed(t.factors))
    return out


def syntactically_equal(phi, psi, tol=DEFAULT_TOL):
    """Term-by-term equality, same order."""
    if phi.timeline != psi.timeline or len(phi.terms) != len(psi.terms):
        return False
    for a, b in zip(phi.terms, psi.terms):
        if abs(a.coeff - b.coeff) > tol:
            return False
        if any(np.linalg.norm(fa - fb) > tol for fa, fb in zip(a.factors, b.factors)):
            return False
    return True


def prune(psi, tol=DEFAULT_TOL):
    """Drop terms that have a vanishing coefficient or a vanishing factor; physically a no-op."""
    keep = tuple(
        t for t in psi.terms
        if abs(t.coeff) > tol and all(np.linalg.norm(f) > tol for f in t.factors)
    )
    return HistoryState(psi.timeline, keep)


def elementary_expansion(timeline, op, tol=0.0):
    """Write an operator on the history space as a sum of elementary chains.

    Each term has the matrix unit ``|r_j><c_j|`` at every slot, so a ``d × d``
    operator expands into at most ``d²`` terms (entries with ``|value| <= tol``
    are skipped).
    """
    dims = timeline.dims
    d = timeline.hilbert_dim
    op = as_cmatrix(op)
    if op.shape != (d, d):
        raise ShapeMismatch(f"operator shape {op.shape} does not match history space dimension {d}")
    # multi-index in printed order: slot n first
    printed_dims = tuple(reversed(dims))
    idx = list(product(*(range(k) for k in printed_dims)))
    terms = []
    for r, ri in enumerate(idx):
        for c, ci in enumerate(idx):
            v = op[r, c]
            if tol > 0.0 and abs(v) <= tol:
                continue
            factors = []
            for dj, a, b in zip(printed_dims, ri, ci):
                m = np.zeros((dj, dj), dtype=complex)
                m[a, b] = 1.0
                factors.append(m)
            terms.append(ChainTerm(v, tuple(reversed(factors))))
    return HistoryState(timeline, tuple(terms))

