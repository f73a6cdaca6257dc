"""Random instance generators shared by the property tests."""

import numpy as np

from histstates.densemath import projector, random_unitary
from histstates.families import Family
from histstates.histcore import BridgingSet, ChainTerm, HistoryState, Timeline, chain, normalize
from histstates.marking import MarkedSystem, MarkingStep


def random_matrix(rng, d, k=None):
    k = d if k is None else k
    return rng.standard_normal((d, k)) + 1j * rng.standard_normal((d, k))


def random_state(rng, timeline, n_terms=None):
    n_terms = n_terms or int(rng.integers(1, 4))
    terms = []
    for _ in range(n_terms):
        c = complex(rng.standard_normal(), rng.standard_normal())
        terms.append(ChainTerm(c, tuple(random_matrix(rng, d) for d in timeline.dims)))
    return HistoryState(timeline, tuple(terms))


def random_timeline(rng, max_dim=3, max_times=4):
    n = int(rng.integers(1, max_times + 1))
    return Timeline.from_dims(*(int(d) for d in rng.integers(1, max_dim + 1, size=n)))


def random_bridging_steps(rng, timeline):
    """Unitary steps for equal dims, otherwise a unitary cut down to a (co-)isometry."""
    return [random_unitary(max(a, b), rng)[:b, :a] for a, b in zip(timeline.dims, timeline.dims[1:])]


def shift(d, k):
    return np.roll(np.eye(d), k, axis=0)


def branch_instance(rng):
    """End-slot product family with markings that copy the end-slot outcomes into two registers."""
    n = int(rng.integers(2, 5))
    dims = sorted(int(x) for x in rng.integers(1, 4, size=n))
    dims[-1] = max(dims[-1], 2)
    tl = Timeline.from_dims(*dims)
    b = BridgingSet(tuple(random_bridging_steps(rng, tl)))
    d1, dn = dims[0], dims[-1]
    u1, un = random_unitary(d1, rng), random_unitary(dn, rng)
    middle = [np.eye(d) for d in dims[1:-1]]
    members = [
        normalize(chain(tl, projector(un[:, a]), *reversed(middle), projector(u1[:, c])), b)
        for a in range(dn) for c in range(d1)
    ]
    fam = Family(tuple(members)).validated(b)
    first = MarkingStep(0, tuple((projector(u1[:, c]), np.kron(shift(d1, c), np.eye(dn))) for c in range(d1)))
    last = MarkingStep(n - 1, tuple((projector(un[:, a]), np.kron(np.eye(d1), shift(dn, a))) for a in range(dn)))
    psi0 = random_unitary(d1, rng)[:, 0]
    m = MarkedSystem(tl, b, (d1, dn), psi0, np.eye(d1 * dn)[0], (first, last))
    return m, fam
