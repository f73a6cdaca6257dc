import numpy as np
import pytest

from histstates.densemath import KETS, projector
from histstates.errors import FamilyNotValidated, NotNormalized, ZeroWeight
from histstates.families import (
    Family,
    compatible,
    conditional_history,
    conditional_weight,
    decompose,
    member_sum,
    nonzero_bound,
    nonzero_bound_check,
    nonzero_count,
    probabilities,
    validate_family,
)
from histstates.histcore import (
    BridgingSet,
    Timeline,
    as_operator,
    chain,
    combine,
    identity_history,
    physically_equal,
    weight,
)
from histstates.scenario import load

P = {k: projector(v) for k, v in KETS.items()}
S2 = np.sqrt(2)
ONE = np.eye(2)
T3 = Timeline.from_dims(2, 2, 2)
TRIV3 = BridgingSet.trivial(T3)


def y_members():
    pairs = [("z+", "z-", "z+"), ("z-", "z+", "z+"), ("z+", "z-", "z-"), ("z-", "z+", "z-")]
    return [
        chain(T3, P[a], P["x+"], P[c], coeff=S2) + chain(T3, P[b], P["x-"], P[c], coeff=S2)
        for a, b, c in pairs
    ]


def y_family():
    return Family(tuple(y_members())).validated(TRIV3)


def zpath(*names):
    return chain(T3, *(P[n] for n in names))


def test_y_family_validates():
    r = y_family().report
    assert r.passed, r.failures
    assert np.allclose(r.gram, np.eye(4), atol=1e-10)
    assert np.allclose(r.weights, 1)
    assert np.allclose(r.coefficients, [1 / S2] * 4, atol=1e-10)
    assert r.completeness_residual <= 1e-10
    assert validate_family(Family(tuple(y_members())), TRIV3, completeness="physical").passed


def test_completeness_coefficients_rebuild_the_identity():
    f = y_family()
    rebuilt = sum(c * as_operator(m) for c, m in zip(f.report.coefficients, f.members))
    assert np.max(np.abs(rebuilt - np.eye(8))) <= 1e-10
    assert physically_equal(member_sum(f, f.report.coefficients), identity_history(T3), TRIV3)


def test_passing_gram_is_zero_one_diagonal():
    f = Family(tuple(y_members()) + (zpath("z-", "z-", "z+"),)).validated(TRIV3)
    assert f.report.passed
    assert np.allclose(f.report.gram, np.diag([1, 1, 1, 1, 0]), atol=1e-10)


def test_mach_zehnder_variants():
    sc = load("mach-zehnder")
    printed = validate_family(sc.families["alpha-printed"], sc.bridging)
    assert not printed.passed
    assert np.allclose(printed.weights, [2, 2], atol=1e-10)
    assert all(f.startswith("weight") for f in printed.failures)
    fixed = validate_family(sc.families["alpha"], sc.bridging)
    assert fixed.passed
    assert np.allclose(fixed.coefficients, [1 / S2, 1 / S2], atol=1e-10)


def test_z_family_variants():
    sc = load("zfamily")
    printed = validate_family(sc.families["Z-printed"], sc.bridging)
    assert not printed.passed
    assert any("Z15-printed" in f for f in printed.failures)
    f = sc.families["Z"].validated(sc.bridging)
    assert f.report.passed and len(f) == 16
    assert nonzero_count(f) == nonzero_bound(f.timeline) == 16
    assert f.report.completeness_residual <= 1e-10


def test_validation_ignores_member_order(rng):
    members = y_members() + [zpath("z-", "z-", "z+")]
    base = validate_family(Family(tuple(members)), TRIV3)
    for _ in range(5):
        perm = rng.permutation(len(members))
        r = validate_family(Family(tuple(members[i] for i in perm)), TRIV3)
        assert r.passed == base.passed
        assert abs(r.completeness_residual - base.completeness_residual) <= 1e-12
    bad = y_members()
    bad[1] = bad[0]
    assert not validate_family(Family(tuple(bad)), TRIV3).passed


def test_decompose_examples(rng):
    f = y_family()
    coeffs, residual = decompose(zpath("z+", "z+", "z+"), f, TRIV3)
    assert np.allclose(coeffs, [1 / S2, 1 / S2, 0, 0], atol=1e-10)
    assert residual <= 1e-10
    for _ in range(3):
        v = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        a, b = v / np.linalg.norm(v)
        phi = combine([a, b], [zpath("z+", "z+", "z+"), zpath("z-", "z-", "z-")])
        coeffs, residual = decompose(phi, f, TRIV3)
        assert np.allclose(coeffs, [a / S2, a / S2, b / S2, b / S2], atol=1e-10)
        assert residual <= 1e-10
    for i, m in enumerate(f.members):
        assert np.allclose(decompose(m, f, TRIV3)[0], np.eye(4)[i], atol=1e-10)


def test_decompose_needs_validation():
    with pytest.raises(FamilyNotValidated):
        decompose(zpath("z+", "z+", "z+"), Family(tuple(y_members())), TRIV3)
    bad = Family(tuple(y_members()[:2])).validated(TRIV3)
    with pytest.raises(FamilyNotValidated):
        decompose(zpath("z+", "z+", "z+"), bad, TRIV3)


def test_probabilities():
    f = y_family()
    assert np.allclose(probabilities(zpath("z+", "z+", "z+"), f, TRIV3), [0.5, 0.5, 0, 0])
    assert np.allclose(probabilities(f.members[0], f, TRIV3), [1, 0, 0, 0])
    with pytest.raises(NotNormalized):
        probabilities(zpath("z-", "x+", "z+"), f, TRIV3)
    sc = load("mach-zehnder")
    alpha = sc.families["alpha"].validated(sc.bridging)
    assert np.allclose(probabilities(sc.states["unitary"], alpha, sc.bridging), [0.5, 0.5])


def test_probabilities_sum_to_one_in_a_saturated_family(rng):
    f = y_family()
    for _ in range(20):
        c = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        psi = combine(c / np.linalg.norm(c), f.members)
        assert abs(sum(probabilities(psi, f, TRIV3)) - 1) <= 1e-9


def test_nonzero_bound():
    f = y_family()
    assert nonzero_bound_check(f) and nonzero_count(f) == 4 == nonzero_bound(T3)
    padded = Family(tuple(y_members()) + (zpath("z-", "z-", "z+"), zpath("z+", "z-", "z+"))).validated(TRIV3)
    assert padded.report.passed
    assert nonzero_bound_check(padded) and nonzero_count(padded) == 4


def test_compatible_families():
    sc = load("mach-zehnder")
    a = sc.families["alpha"].validated(sc.bridging)
    b = sc.families["alpha-mixed"].validated(sc.bridging)
    ok, r, residuals = compatible(a, b, sc.bridging)
    want = np.array([[1 / np.sqrt(3), 1j * np.sqrt(2 / 3)], [np.sqrt(2 / 3), -1j / np.sqrt(3)]])
    assert ok and np.allclose(r, want, atol=1e-10)
    assert np.allclose(r @ r.conj().T, np.eye(2))
    ok, r, _ = compatible(a, a, sc.bridging)
    assert ok and np.allclose(r, np.eye(2))


def test_incompatible_families():
    tl = Timeline.from_dims(2, 2)
    b = BridgingSet.trivial(tl)
    fz = Family((chain(tl, P["z+"], ONE), chain(tl, P["z-"], ONE))).validated(b)
    fx = Family((chain(tl, P["x+"], ONE), chain(tl, P["x-"], ONE))).validated(b)
    assert fz.report.passed and fx.report.passed
    ok, _, residuals = compatible(fz, fx, b)
    assert not ok and max(residuals) > 1e-10


def z1():
    return load("zfamily").states["Z1"]


def test_time_entanglement_of_z1():
    psi = z1()
    b = BridgingSet.trivial(psi.timeline)
    for s in ("z+", "z-"):
        other = "z-" if s == "z+" else "z+"
        cond = conditional_history(psi, 0, 0, P[s], b)
        assert abs(weight(cond, b) - 1) <= 1e-10
        assert len(cond.terms) == 1
        assert conditional_weight(cond, 2, 1, P[s], b) > 0.99
        assert conditional_weight(cond, 2, 1, P[other], b) <= 1e-12
    with pytest.raises(ZeroWeight):
        conditional_history(psi, 0, 1, P["x-"], b)
    assert conditional_weight(psi, 0, 1, P["x-"], b) == 0.0


def test_conditioning_on_identity_changes_nothing():
    psi = z1()
    b = BridgingSet.trivial(psi.timeline)
    assert physically_equal(conditional_history(psi, 1, 0, ONE, b), psi, b)


def test_complementary_conditioning_splits_the_weight():
    psi = z1()
    b = BridgingSet.trivial(psi.timeline)
    w = conditional_weight(psi, 0, 0, P["z+"], b) + conditional_weight(psi, 0, 0, P["z-"], b)
    assert abs(w - weight(psi, b)) <= 1e-10
