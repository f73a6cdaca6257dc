"""Families of history states: validation, decomposition and Born-rule probabilities.

A family is an ordered list of history states that are pairwise orthogonal,
have weight 0 or 1, and combine linearly into the unconstrained history
``1 ⊙ ... ⊙ 1``. Completeness is checked as an exact operator identity on the
full history space unless ``completeness="physical"`` is requested, in which
case only the chain-operator images have to add up.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .densemath import DEFAULT_TOL, lift
from .errors import FamilyNotValidated, NotNormalized, TimelineMismatch, ZeroWeight
from .histcore import (
    ChainTerm,
    HistoryState,
    as_operator,
    combine,
    identity_history,
    inner,
    k_of,
    prune,
    scale,
    weight,
)

COMPLETENESS_MODES = ("exact", "physical")


@dataclass(frozen=True, eq=False)
class Family:
    members: tuple[HistoryState, ...]
    names: tuple[str, ...] = ()
    report: "FamilyReport | None" = None

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("a family needs at least one member")
        names = tuple(self.names) or tuple(f"Y{i + 1}" for i in range(len(self.members)))
        if len(names) != len(self.members):
            raise ValueError("one name per member required")
        object.__setattr__(self, "names", names)
        tl = self.members[0].timeline
        if any(m.timeline != tl for m in self.members):
            raise TimelineMismatch("family members live on different timelines")

    @property
    def timeline(self):
        return self.members[0].timeline

    def __len__(self):
        return len(self.members)

    def validated(self, bridging, tol=DEFAULT_TOL, completeness="exact"):
        """Return a copy carrying its :class:`FamilyReport`."""
        return replace(self, report=validate_family(self, bridging, tol, completeness))


@dataclass
class FamilyReport:
    names: list[str]
    gram: np.ndarray
    weights: list[float]
    completeness_residual: float
    coefficients: list[complex] | None
    tolerance: float
    completeness: str = "exact"
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures

    @property
    def unit_members(self):
        """Indices of members with weight 1 (the ones that can be observed)."""
        return [i for i, w in enumerate(self.weights) if abs(w - 1.0) <= self.tolerance]

    def to_dict(self):
        return {
            "members": list(self.names),
            "gram": [[[float(z.real), float(z.imag)] for z in row] for row in self.gram],
            "weights": [float(w) for w in self.weights],
            "completeness": self.completeness,
            "completeness_residual": float(self.completeness_residual),
            "coefficients": None if self.coefficients is None
            else [[float(c.real), float(c.imag)] for c in self.coefficients],
            "verdict": "pass" if self.passed else "fail",
            "failures": list(self.failures),
        }


def _require_report(f):
    if f.report is None or not f.report.passed:
        raise FamilyNotValidated("family has not passed validation; call Family.validated() first")
    return f.report


def _vec(m):
    return np.asarray(m).reshape(-1)


def validate_family(f, bridging, tol=DEFAULT_TOL, completeness="exact"):
    """Check orthogonality, 0/1 weights and completeness; returns a :class:`FamilyReport`.

    ``completeness="exact"`` solves ``Σ c_i Y_i = 1 ⊙ ... ⊙ 1`` by least squares
    over the flattened operator space of the history space. ``"physical"``
    solves the same equation for the chain-operator images instead.
    """
    if completeness not in COMPLETENESS_MODES:
        raise ValueError(f"completeness must be one of {COMPLETENESS_MODES}")
    ks = [k_of(m, bridging) for m in f.members]
    n = len(ks)
    flat = np.column_stack([_vec(k) for k in ks])
    gram = flat.conj().T @ flat
    weights = [float(gram[i, i].real) for i in range(n)]
    failures = []

    for i in range(n):
        for j in range(i + 1, n):
            if abs(gram[i, j]) > tol:
                failures.append(
                    f"orthogonality: ({f.names[i]}|{f.names[j]}) = {abs(gram[i, j]):.6g} != 0"
                )
    for name, w in zip(f.names, weights):
        if abs(w) > tol and abs(w - 1.0) > tol:
            failures.append(f"weight: ({name}|{name}) = {w:.6g}, expected 0 or 1")

    if completeness == "exact":
        cols = np.column_stack([_vec(as_operator(m)) for m in f.members])
        target = _vec(as_operator(identity_history(f.timeline)))
    else:
        cols = flat
        target = _vec(bridging.bridge(0, len(f.timeline) - 1))
    coeffs, *_ = np.linalg.lstsq(cols, target, rcond=None)
    residual = float(np.linalg.norm(cols @ coeffs - target))
    if residual > tol:
        failures.append(f"completeness: identity history not reached, residual {residual:.6g}")
    coeff_list = [complex(c) for c in coeffs] if residual <= tol else None

    return FamilyReport(
        names=list(f.names),
        gram=gram,
        weights=weights,
        completeness_residual=residual,
        coefficients=coeff_list,
        tolerance=tol,
        completeness=completeness,
        failures=failures,
    )


def decompose(psi, f, bridging):
    """Expand ``psi`` in a validated family.

    Returns the coefficients ``d_i = (Y_i|Ψ)`` (0 for null members) and the
    weight of what is left over, ``(R|R)`` with ``R = Ψ - Σ d_i Y_i``.
    """
    report = _require_report(f)
    if psi.timeline != f.timeline:
        raise TimelineMismatch("state and family live on different timelines")
    unit = set(report.unit_members)
    coeffs = [inner(m, psi, bridging) if i in unit else 0j for i, m in enumerate(f.members)]
    k_rest = k_of(psi, bridging) - sum(
        (c * k_of(m, bridging) for c, m in zip(coeffs, f.members)),
        np.zeros_like(k_of(psi, bridging)),
    )
    return coeffs, float(np.vdot(k_rest, k_rest).real)


def probabilities(psi, f, bridging, tol=DEFAULT_TOL):
    """Born-rule probabilities ``|(Y_i|Ψ)|²`` for a normalized history state."""
    w = weight(psi, bridging)
    if abs(w - 1.0) > tol:
        raise NotNormalized(f"history weight is {w:.6g}, expected 1")
    coeffs, _ = decompose(psi, f, bridging)
    return [abs(c) ** 2 for c in coeffs]


def nonzero_count(f):
    return len(_require_report(f).unit_members)


def nonzero_bound(timeline):
    """Largest possible number of non-null members: ``dim(t_n) · dim(t_1)``."""
    return timeline.dims[-1] * timeline.dims[0]


def nonzero_bound_check(f):
    return nonzero_count(f) <= nonzero_bound(f.timeline)


def compatible(fa, fb, bridging, tol=DEFAULT_TOL):
    """Look for ``R`` with ``fb_j ≈ Σ_i R[j, i] fa_i`` (chain-operator images, least squares).

    Returns ``(ok, R, residuals)`` where ``ok`` is true when every member of
    ``fb`` is reproduced within ``tol``.
    """
    if fa.timeline != fb.timeline:
        raise TimelineMismatch("families live on different timelines")
    a = np.column_stack([_vec(k_of(m, bridging)) for m in fa.members])
    rows, residuals = [], []
    for m in fb.members:
        target = _vec(k_of(m, bridging))
        r, *_ = np.linalg.lstsq(a, target, rcond=None)
        rows.append(r)
        residuals.append(float(np.linalg.norm(a @ r - target)))
    transform = np.array(rows)
    return all(r <= tol for r in residuals), transform, residuals


def conditional_history(psi, slot, subsystem, p, bridging, renormalize=True, tol=DEFAULT_TOL):
    """Condition ``psi`` on a subsystem of one time slot being found in projector ``p``.

    Every factor ``F`` at ``slot`` becomes ``L F L†`` with ``L = p`` lifted to
    the slot's tensor structure. Terms that vanish are dropped. With
    ``renormalize`` the result is rescaled to weight 1; a conditioning that
    annihilates the history raises :class:`ZeroWeight`.
    """
    dims = psi.timeline.slots[slot].dims
    lifted = lift(p, dims, subsystem)
    terms = []
    for t in psi.terms:
        fs = list(t.factors)
        fs[slot] = lifted @ fs[slot] @ lifted.conj().T
        terms.append(ChainTerm(t.coeff, tuple(fs)))
    out = prune(HistoryState(psi.timeline, tuple(terms)), tol)
    w = weight(out, bridging)
    if w <= tol:
        raise ZeroWeight(f"conditioning slot {slot}, subsystem {subsystem} leaves weight {w:.3g}")
    return scale(1 / np.sqrt(w), out) if renormalize else out


def conditional_weight(psi, slot, subsystem, p, bridging, tol=DEFAULT_TOL):
    """Weight left after conditioning, 0.0 when the conditioning annihilates ``psi``."""
    try:
        return weight(conditional_history(psi, slot, subsystem, p, bridging, renormalize=False, tol=tol), bridging)
    except ZeroWeight:
        return 0.0


def member_sum(f, coefficients):
    return combine(coefficients, f.members)
