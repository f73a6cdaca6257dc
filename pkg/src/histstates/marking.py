"""Marking histories with ancilla registers.

The system evolves under its bridging operators while controlled couplings
``U = Σ_i P_i ⊗ V_i`` write which-history information into ancilla registers.
The joint vector is ordered system first, then the ancilla registers in order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod

import numpy as np

from .densemath import (
    DEFAULT_TOL,
    as_cket,
    as_cmatrix,
    dagger,
    fix_phase,
    frozen,
    is_hermitian,
    is_unitary,
    kron_all,
)
from .errors import BasisNotOrthonormal, FamilyNotValidated, InvalidStep, Misaligned, ShapeMismatch
from .histcore import chain_k, k_of


@dataclass(frozen=True, eq=False)
class MarkingStep:
    """Controlled coupling applied once the system has arrived at slot ``time``.

    ``controls`` is a sequence of ``(P, V)`` pairs: ``P`` a projector on the
    system slot, ``V`` a unitary on the whole ancilla space. The projectors
    must be an orthogonal resolution of the identity; anything else imposes
    orthogonality the evolution does not have and is rejected.
    """

    time: int
    controls: tuple[tuple[np.ndarray, np.ndarray], ...]
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        ctrls = tuple((frozen(as_cmatrix(p, "control projector")), frozen(as_cmatrix(v, "ancilla unitary")))
                      for p, v in self.controls)
        object.__setattr__(self, "controls", ctrls)
        if not ctrls:
            raise InvalidStep("a marking step needs at least one control")
        d = ctrls[0][0].shape[0]
        total = np.zeros((d, d), dtype=complex)
        for i, (p, v) in enumerate(ctrls):
            if p.shape != (d, d):
                raise InvalidStep(f"control {i} has shape {p.shape}, expected {(d, d)}")
            if not is_hermitian(p, self.tol) or np.linalg.norm(p @ p - p) > self.tol:
                raise InvalidStep(f"control {i} is not an orthogonal projector")
            if not is_unitary(v, self.tol):
                raise InvalidStep(f"ancilla operation {i} is not unitary")
            total += p
            for j in range(i):
                if np.linalg.norm(p @ ctrls[j][0]) > self.tol:
                    raise InvalidStep(f"controls {j} and {i} overlap")
        if np.linalg.norm(total - np.eye(d)) > self.tol:
            raise InvalidStep("controls do not add up to the identity")
        adims = {v.shape for _, v in ctrls}
        if len(adims) != 1:
            raise InvalidStep("ancilla operations act on spaces of different size")

    @property
    def system_dim(self):
        return self.controls[0][0].shape[0]

    @property
    def ancilla_dim(self):
        return self.controls[0][1].shape[0]

    def unitary(self):
        return sum(np.kron(p, v) for p, v in self.controls)

    def is_crisp(self, tol=DEFAULT_TOL):
        """True when any two ancilla operations are equal or send every computational
        basis state to orthogonal states, i.e. labels are either shared or distinct."""
        vs = [v for _, v in self.controls]
        for i in range(len(vs)):
            for j in range(i):
                if np.linalg.norm(vs[i] - vs[j]) <= tol:
                    continue
                if np.max(np.abs(np.diag(dagger(vs[j]) @ vs[i]))) > tol:
                    return False
        return True


@dataclass(frozen=True, eq=False)
class MarkedSystem:
    timeline: object
    bridging: object
    ancilla_dims: tuple[int, ...]
    psi0: np.ndarray
    anc0: np.ndarray
    schedule: tuple[MarkingStep, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "ancilla_dims", tuple(int(d) for d in self.ancilla_dims))
        object.__setattr__(self, "psi0", frozen(as_cket(self.psi0, "initial system state")))
        object.__setattr__(self, "anc0", frozen(as_cket(self.anc0, "initial ancilla state")))
        object.__setattr__(self, "schedule", tuple(self.schedule))
        self.bridging.check(self.timeline)
        if self.psi0.shape[0] != self.timeline.dims[0]:
            raise ShapeMismatch(f"initial state has dimension {self.psi0.shape[0]}, slot t1 has {self.timeline.dims[0]}")
        if self.anc0.shape[0] != self.ancilla_dim:
            raise ShapeMismatch(f"ancilla state has dimension {self.anc0.shape[0]}, registers need {self.ancilla_dim}")
        times = [s.time for s in self.schedule]
        if times != sorted(set(times)):
            raise InvalidStep("at most one marking step per time, in time order")
        for s in self.schedule:
            if not 0 <= s.time < len(self.timeline):
                raise InvalidStep(f"marking step at time index {s.time} is outside the timeline")
            if s.system_dim != self.timeline.dims[s.time]:
                raise InvalidStep(f"step at time {s.time} acts on dimension {s.system_dim}")
            if s.ancilla_dim != self.ancilla_dim:
                raise InvalidStep(f"step at time {s.time} acts on ancilla dimension {s.ancilla_dim}")

    @property
    def ancilla_dim(self):
        return prod(self.ancilla_dims)

    @property
    def system_dim(self):
        return self.timeline.dims[-1]

    @property
    def joint_dims(self):
        return (self.system_dim, *self.ancilla_dims)


def simulate(m):
    """Evolve ``|ψ0> ⊗ |anc0>`` to the final time, applying each marking step on arrival."""
    steps = {s.time: s for s in m.schedule}
    eye_a = np.eye(m.ancilla_dim)
    state = np.kron(m.psi0, m.anc0)
    norm0 = np.linalg.norm(state)
    for j in range(len(m.timeline)):
        if j > 0:
            state = np.kron(m.bridging.steps[j - 1], eye_a) @ state
        if j in steps:
            state = steps[j].unitary() @ state
    if abs(np.linalg.norm(state) - norm0) > 1e-12:
        raise InvalidStep("evolution did not preserve the norm")
    return state


@dataclass
class BranchMap:
    names: list[str]
    coefficients: list[complex]
    amplitudes: np.ndarray  # row i: c_i K|Y_i) |ψ0>
    labels: np.ndarray  # row i: ancilla label |m_i>
    residual: float
    valid: bool
    problems: list[str] = field(default_factory=list)
    method: str = "least-squares"

    def pairing(self, basis, tol=DEFAULT_TOL):
        """Map member name to the index of the basis ket its label matches (up to phase), else None."""
        out = {}
        for name, lab, amp in zip(self.names, self.labels, self.amplitudes):
            if np.linalg.norm(amp) <= tol:
                out[name] = None
                continue
            hits = [k for k, e in enumerate(basis) if abs(abs(np.vdot(e, lab)) - 1.0) <= 1e-9]
            out[name] = hits[0] if hits else None
        return out

    def history_for(self, outcome):
        """Coefficients over the family of the history an ancilla outcome ket selects (normalized)."""
        a = np.array([c * np.vdot(outcome, lab) for c, lab in zip(self.coefficients, self.labels)])
        n = np.linalg.norm(a)
        return fix_phase(a / n) if n > 0 else a

    def branch_norms(self):
        return [float(np.linalg.norm(a) ** 2) for a in self.amplitudes]

    def to_dict(self):
        def cvec(v):
            return [[float(z.real), float(z.imag)] for z in v]

        return {
            "members": list(self.names),
            "coefficients": cvec(self.coefficients),
            "labels": [cvec(lab) for lab in self.labels],
            "amplitudes": [cvec(a) for a in self.amplitudes],
            "branch_weights": self.branch_norms(),
            "residual": self.residual,
            "valid": self.valid,
            "problems": list(self.problems),
            "method": self.method,
        }


def _scheduled_labels(m, f, tol):
    """Labels the schedule writes for each member, or None when that is not well defined.

    A chain whose factor at every marked slot lies inside a single control
    projector picks up ``V_k ... V_1 |anc0>``. A member gets a label only when
    all its (non-vanishing) chains agree on it.
    """
    labels = []
    for y in f.members:
        label = None
        for term in y.terms:
            if np.linalg.norm(chain_k(term, m.bridging)) <= tol:
                continue
            a = m.anc0
            for step in m.schedule:
                fac = term.factors[step.time]
                hits = [v for p, v in step.controls if np.linalg.norm(p @ fac @ p - fac) <= tol]
                if len(hits) != 1:
                    return None
                a = hits[0] @ a
            if label is None:
                label = a
            elif np.linalg.norm(label - a) > tol:
                return None
        labels.append(m.anc0 * 0 if label is None else label)
    return np.array(labels)


def _label_problems(names, amps, labels, residual, tol):
    problems = []
    if residual > tol:
        problems.append(f"final state not reproduced, residual {residual:.3g}")
    live = [i for i in range(len(names)) if np.linalg.norm(amps[i]) > tol]
    for i in live:
        n = np.linalg.norm(labels[i])
        if abs(n - 1.0) > 1e-9:
            problems.append(f"label of {names[i]} has norm {n:.6g}")
        for j in live:
            if j < i and abs(np.vdot(labels[j], labels[i])) > 1e-9:
                problems.append(f"labels of {names[j]} and {names[i]} overlap")
    return problems


def branch_map(m, f, tol=DEFAULT_TOL, final=None, strict=True):
    """Explain the final joint state as ``Σ_i c_i K|Y_i)|ψ0> ⊗ |m_i>``.

    The ancilla labels ``|m_i>`` are solved for by least squares; ``c_i`` are
    the family's completeness coefficients. When the branch amplitudes are
    linearly dependent the least-squares labels are not unique, so the labels
    the schedule itself writes (see :func:`_scheduled_labels`) are tried too.
    The map is valid when the residual is within ``tol`` and the labels of
    nonzero branches are orthonormal. With ``strict`` an invalid map raises
    :class:`Misaligned`.
    """
    report = f.report
    if report is None or not report.passed or report.coefficients is None:
        raise FamilyNotValidated("branch_map needs a family that passed validation")
    if final is None:
        final = simulate(m)
    coeffs = list(report.coefficients)
    names = list(f.names)
    amps = np.array([c * (k_of(y, m.bridging) @ m.psi0) for c, y in zip(coeffs, f.members)])
    target = np.asarray(final).reshape(m.system_dim, m.ancilla_dim)

    labels, *_ = np.linalg.lstsq(amps.T, target, rcond=None)
    residual = float(np.linalg.norm(amps.T @ labels - target))
    problems = _label_problems(names, amps, labels, residual, tol)
    method = "least-squares"
    if problems:
        sched = _scheduled_labels(m, f, tol)
        if sched is not None:
            r2 = float(np.linalg.norm(amps.T @ sched - target))
            p2 = _label_problems(names, amps, sched, r2, tol)
            if not p2:
                labels, residual, problems, method = sched, r2, p2, "schedule"
    bm = BranchMap(names, coeffs, amps, labels, residual, not problems, problems, method)
    if strict and problems:
        raise Misaligned("; ".join(problems))
    return bm


def _check_basis(basis, dim, tol):
    b = np.array([as_cket(e, "basis ket") for e in basis])
    if b.ndim != 2 or b.shape != (dim, dim):
        raise BasisNotOrthonormal(f"need {dim} basis kets of dimension {dim}, got shape {b.shape}")
    if np.linalg.norm(b.conj() @ b.T - np.eye(dim)) > tol:
        raise BasisNotOrthonormal("measurement basis is not orthonormal")
    return b


def _register_projector(dims, register, e):
    """``|e><e|`` on ancilla register ``register`` (joint index ``register + 1``), identity elsewhere."""
    mats = [np.eye(d) for d in dims]
    mats[register + 1] = np.outer(e, np.conj(e))
    return kron_all(mats)


@dataclass
class Outcome:
    index: int
    probability: float
    state: np.ndarray | None  # normalized collapsed joint state, None when probability is 0


def measure_ancilla(final, dims, register, basis, tol=DEFAULT_TOL):
    """Measure one ancilla register in an orthonormal basis.

    ``dims`` is ``(system_dim, *ancilla_dims)``. Every basis ket yields an
    :class:`Outcome`; zero-probability outcomes are kept with ``state=None``.
    """
    dims = tuple(dims)
    final = as_cket(final, "joint state")
    if final.shape[0] != prod(dims):
        raise ShapeMismatch(f"joint state dimension {final.shape[0]} does not match {dims}")
    b = _check_basis(basis, dims[register + 1], tol)
    out = []
    for k, e in enumerate(b):
        v = _register_projector(dims, register, e) @ final
        p = float(np.vdot(v, v).real)
        out.append(Outcome(k, p, v / np.sqrt(p) if p > tol**2 else None))
    return out


@dataclass
class Plan:
    register: int
    basis: list
    family: object
    basis_names: list[str] | None = None


@dataclass
class Node:
    stage: int
    outcome: int
    label: str
    probability: float  # conditional on the parent
    joint_probability: float
    history: dict | None
    children: list["Node"] = field(default_factory=list)

    def to_dict(self):
        return {
            "stage": self.stage,
            "outcome": self.label,
            "probability": self.probability,
            "joint_probability": self.joint_probability,
            "history": None if self.history is None
            else {k: [float(v.real), float(v.imag)] for k, v in self.history.items()},
            "children": [c.to_dict() for c in self.children],
        }


def _assigned_history(bm, path_projector, tol):
    """History coefficients selected by the outcomes so far, or None if still a mixture."""
    g = np.array([path_projector @ lab for lab in bm.labels])
    weighted = g * np.array(bm.coefficients)[:, None]
    if np.linalg.norm(weighted) <= tol:
        return None
    _, s, vh = np.linalg.svd(weighted)
    if len(s) > 1 and s[1] > 1e-9 * s[0]:
        return None
    a = fix_phase(weighted @ vh[0].conj())
    a = a / np.linalg.norm(a)
    return {name: complex(c) for name, c in zip(bm.names, a)}


def sequential_measure(m, plans, tol=DEFAULT_TOL):
    """Measure ancilla registers one after another, each read out for its own family.

    Returns the list of stage-1 :class:`Node` s; every path down the tree
    carries conditional and joint probabilities and, per stage, the history
    (as coefficients over that stage's family) the outcomes so far select.
    """
    final = simulate(m)
    dims = m.joint_dims
    maps = [branch_map(m, p.family, tol, final=final) for p in plans]
    bases = [_check_basis(p.basis, m.ancilla_dims[p.register], tol) for p in plans]

    def anc_projector(path):
        mats = [np.eye(d) for d in m.ancilla_dims]
        for (reg, e) in path:
            mats[reg] = mats[reg] @ np.outer(e, np.conj(e))
        return kron_all(mats)

    def expand(stage, state, path, joint):
        if stage == len(plans):
            return []
        plan = plans[stage]
        nodes = []
        names = plan.basis_names or [str(k) for k in range(len(bases[stage]))]
        for out in measure_ancilla(state, dims, plan.register, bases[stage], tol):
            e = bases[stage][out.index]
            new_path = path + [(plan.register, e)]
            jp = joint * out.probability
            hist = _assigned_history(maps[stage], anc_projector(new_path), tol) if out.state is not None else None
            node = Node(stage + 1, out.index, names[out.index], out.probability, jp, hist)
            if out.state is not None:
                node.children = expand(stage + 1, out.state, new_path, jp)
            nodes.append(node)
        return nodes

    return expand(0, final, [], 1.0)


def coupling_admissible(psi, joint, controls, tol=DEFAULT_TOL):
    """Check a displayed system-ancilla coupling against a set of control projectors.

    The coupling is admissible when ``joint = Σ_i P_i|ψ> ⊗ |w_i>`` with unit
    labels ``|w_i>`` that are pairwise either equal or orthogonal. Returns
    ``(ok, labels, reasons)``.
    """
    psi = as_cket(psi)
    d = psi.shape[0]
    joint = as_cket(joint).reshape(d, -1)
    reasons, labels = [], []
    recon = np.zeros_like(joint)
    for i, p in enumerate(controls):
        branch = as_cmatrix(p) @ psi
        nb = np.vdot(branch, branch).real
        if nb <= tol:
            labels.append(None)
            continue
        w = branch.conj() @ joint / nb
        labels.append(w)
        recon += np.outer(branch, w)
        if abs(np.linalg.norm(w) - 1.0) > 1e-9:
            reasons.append(f"branch {i} label has norm {np.linalg.norm(w):.6g}")
    if np.linalg.norm(recon - joint) > 1e-9:
        reasons.append("coupling is not controlled by these projectors")
    live = [(i, w) for i, w in enumerate(labels) if w is not None]
    for a, (i, wi) in enumerate(live):
        for j, wj in live[:a]:
            ov = abs(np.vdot(wj, wi))
            if ov > 1e-9 and np.linalg.norm(wi - wj) > 1e-9:
                reasons.append(f"labels {j} and {i} overlap by {ov:.6g} without being equal")
    return not reasons, labels, reasons
