"""Run scenario checks and assemble machine-readable reports."""

from __future__ import annotations

import hashlib
import json

import numpy as np

from . import __version__
from .densemath import DEFAULT_TOL, ket, projector
from .errors import HistoryError
from .families import (
    compatible,
    conditional_history,
    conditional_weight,
    decompose,
    nonzero_bound,
    probabilities,
    validate_family,
)
from .histcore import inner, k_of, physically_equal, weight
from .marking import Plan, branch_map, measure_ancilla, sequential_measure, simulate
from .observables import SpectralObservable, measure_distribution, observable_family
from .scenario import matrix, scalar, vector

REPORT_SCHEMA = "histstates-report/1"

COMMANDS = (
    "validate",
    "weight",
    "inner",
    "decompose",
    "probabilities",
    "eigenhistories",
    "simulate-marking",
    "branch-map",
    "sequential",
    "report-all",
)


def clean(x, digits=12):
    """JSON-ready copy with floats rounded so reports are byte-stable."""
    if isinstance(x, dict):
        return {str(k): clean(v, digits) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [clean(v, digits) for v in x]
    if isinstance(x, np.ndarray):
        return clean(x.tolist(), digits)
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [clean(float(x.real), digits), clean(float(x.imag), digits)]
    if isinstance(x, (float, np.floating)):
        v = round(float(x), digits)
        return 0.0 if v == 0 else v
    if isinstance(x, np.integer):
        return int(x)
    return x


def digest(obj):
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


class Context:
    def __init__(self, sc, tol=DEFAULT_TOL, seed=0, completeness="exact", variant=None):
        self.sc = sc
        self.tol = tol
        self.seed = seed
        self.completeness = completeness
        self.variant = variant
        self._validated = {}
        self.records = []

    @property
    def b(self):
        return self.sc.bridging

    def family(self, name):
        """Validated family (validation is cached per run)."""
        if name not in self._validated:
            fam = self.sc.families[name]
            report = validate_family(fam, self.b, self.tol, self.completeness)
            self._validated[name] = type(fam)(fam.members, fam.names, report)
        return self._validated[name]

    def included(self, *families):
        return all(self.sc.family_included(f, self.variant) for f in families if f is not None)

    def refs(self, spec, **tables):
        doc = self.sc.doc
        out = {"check": spec}
        for table, names in tables.items():
            out[table] = {n: doc.get(table, {}).get(n) for n in names if n is not None}
        for key in ("timeline", "kets", "matrices"):
            out[key] = doc.get(key)
        out["bridging"] = doc.get("bridging", "trivial")
        return digest(out)

    def record(self, command, name, inputs_digest, fn):
        rec = {"name": name, "command": command, "inputs_digest": inputs_digest, "tolerance": self.tol}
        try:
            results, failures = fn()
            rec["results"] = results
            rec["pass"] = not failures
            if failures:
                rec["failures"] = failures
        except HistoryError as e:
            rec["results"] = {}
            rec["pass"] = False
            rec["error"] = f"{type(e).__name__}: {e}"
        self.records.append(rec)


def _close(a, b, tol):
    return bool(np.all(np.abs(np.asarray(a, dtype=complex) - np.asarray(b, dtype=complex)) <= tol))


def _expect(failures, label, got, spec, tol, parse=scalar):
    if spec is None:
        return
    want = parse(spec, label) if parse else spec
    if not _close(got, want, tol):
        failures.append(f"{label}: got {clean(got)}, expected {clean(want)}")


# --- commands ---------------------------------------------------------------


def run_weight(ctx):
    for c in ctx.sc.checks.get("weight", []):
        name = c["state"]

        def fn(c=c, name=name):
            psi = ctx.sc.states[name]
            w = weight(psi, ctx.b)
            k = k_of(psi, ctx.b)
            failures = []
            _expect(failures, "weight", w, c.get("expect"), ctx.tol)
            _expect(failures, "k_image", k, c.get("expect_k"), ctx.tol, matrix)
            return {"weight": w, "k_image": k}, failures

        ctx.record("weight", f"weight:{name}", ctx.refs(c, states=[name]), fn)


def run_inner(ctx):
    for c in ctx.sc.checks.get("inner", []):
        left, right = c["left"], c["right"]

        def fn(c=c, left=left, right=right):
            v = inner(ctx.sc.states[left], ctx.sc.states[right], ctx.b)
            failures = []
            _expect(failures, "inner", v, c.get("expect"), ctx.tol)
            return {"inner": v}, failures

        ctx.record("inner", f"inner:{left}|{right}", ctx.refs(c, states=[left, right]), fn)


def run_validate(ctx):
    entries = ctx.sc.checks.get("validate")
    if entries is None:
        entries = list(ctx.sc.families)
    for e in entries:
        spec = e if isinstance(e, dict) else {"family": e}
        name = spec["family"]
        if not ctx.included(name):
            continue

        def fn(spec=spec, name=name):
            fam = ctx.family(name)
            report = fam.report
            res = report.to_dict()
            res["variant"] = ctx.sc.variants.get(name)
            nonzero = len(report.unit_members)
            bound = nonzero_bound(fam.timeline)
            res["nonzero_members"] = nonzero
            res["nonzero_bound"] = bound
            failures = list(report.failures)
            if nonzero > bound:
                failures.append(f"bound: {nonzero} non-null members exceed {bound}")
            if spec.get("expect_coefficients") is not None and report.coefficients is not None:
                _expect(failures, "coefficients", report.coefficients,
                        spec["expect_coefficients"], ctx.tol, vector)
            if spec.get("expect_saturated") and nonzero != bound:
                failures.append(f"bound: expected saturation {bound}, found {nonzero}")
            return res, failures

        members = list(ctx.sc.doc.get("families", {}).get(name, {}).get("members", []))
        ctx.record("validate", f"validate:{name}", ctx.refs(spec, families=[name], states=members), fn)

    for c in ctx.sc.checks.get("compatible", []):
        a, b = c["a"], c["b"]
        if not ctx.included(a, b):
            continue

        def fn(c=c, a=a, b=b):
            fa, fb = ctx.family(a), ctx.family(b)
            failures = []
            for f in (fa, fb):
                if not f.report.passed:
                    failures.append(f"family {f.names} did not validate")
            ok, transform, residuals = compatible(fa, fb, ctx.b, ctx.tol)
            if not ok:
                failures.append("families are not related by a linear transformation")
            if c.get("expect_transform") is not None:
                _expect(failures, "transform", transform, c["expect_transform"], 1e-9, matrix)
            return {"compatible": ok, "transform": transform, "residuals": residuals}, failures

        ctx.record("validate", f"compatible:{a}~{b}", ctx.refs(c, families=[a, b]), fn)


def run_decompose(ctx):
    for c in ctx.sc.checks.get("decompose", []):
        s, f = c["state"], c["family"]
        if not ctx.included(f):
            continue

        def fn(c=c, s=s, f=f):
            coeffs, residual = decompose(ctx.sc.states[s], ctx.family(f), ctx.b)
            failures = []
            _expect(failures, "coefficients", coeffs, c.get("expect"), ctx.tol, vector)
            _expect(failures, "residual", residual, c.get("expect_residual"), ctx.tol)
            return {"coefficients": coeffs, "residual": residual}, failures

        ctx.record("decompose", f"decompose:{s}@{f}", ctx.refs(c, states=[s], families=[f]), fn)


def run_probabilities(ctx):
    for c in ctx.sc.checks.get("probabilities", []):
        s, f = c["state"], c["family"]
        if not ctx.included(f):
            continue

        def fn(c=c, s=s, f=f):
            p = probabilities(ctx.sc.states[s], ctx.family(f), ctx.b, ctx.tol)
            failures = []
            _expect(failures, "probabilities", p, c.get("expect"), ctx.tol, vector)
            return {"probabilities": p, "total": float(sum(p))}, failures

        ctx.record("probabilities", f"probabilities:{s}@{f}", ctx.refs(c, states=[s], families=[f]), fn)

    for c in ctx.sc.checks.get("measure", []):
        s, o = c["state"], c["observable"]
        fam_name, values = ctx.sc.observables[o]
        if not ctx.included(fam_name):
            continue

        def fn(c=c, s=s, fam_name=fam_name, values=values):
            obs = SpectralObservable(ctx.family(fam_name), values)
            dist = measure_distribution(ctx.sc.states[s], obs, ctx.b, ctx.tol)
            failures = []
            for key, want in (c.get("expect") or {}).items():
                got = next((p for v, p in dist.items() if abs(v - float(key)) <= ctx.tol), 0.0)
                if abs(got - scalar(want)) > ctx.tol:
                    failures.append(f"P({key}) = {got:.12g}, expected {want}")
            return {"distribution": {f"{v:g}": p for v, p in dist.items()}}, failures

        ctx.record("probabilities", f"measure:{s}@{o}", ctx.refs(c, states=[s], observables=[o]), fn)

    for c in ctx.sc.checks.get("conditional", []):
        s = c["state"]

        def fn(c=c, s=s):
            return _conditional(ctx, c, ctx.sc.states[s])

        ctx.record("probabilities", f"conditional:{s}", ctx.refs(c, states=[s]), fn)


def _conditional(ctx, c, psi):
    """Condition on each case's ``given``; its ``then`` outcome must follow with certainty."""
    sc = ctx.sc
    failures, results = [], []
    for case in c.get("cases", []):
        g, t = case["given"], case["then"]
        gslot, tslot = sc.slot_index(g["slot"]), sc.slot_index(t["slot"])
        pt = projector(_ket_spec(ctx, t["ket"]))
        cond = conditional_history(psi, gslot, g["subsystem"], projector(_ket_spec(ctx, g["ket"])), ctx.b, tol=ctx.tol)
        d = sc.timeline.slots[tslot].dims[t["subsystem"]]
        hit = conditional_weight(cond, tslot, t["subsystem"], pt, ctx.b, ctx.tol)
        miss = conditional_weight(cond, tslot, t["subsystem"], np.eye(d) - pt, ctx.b, ctx.tol)
        prob = hit / (hit + miss)
        results.append({"given": g, "then": t, "probability": prob, "surviving_terms": len(cond.terms)})
        if abs(prob - 1.0) > ctx.tol:
            failures.append(f"given {g} the outcome {t} has probability {prob:.6g}, expected 1")
    comp = c.get("complementary")
    if comp:
        slot = sc.slot_index(comp["slot"])
        p = projector(_ket_spec(ctx, comp["ket"]))
        d = sc.timeline.slots[slot].dims[comp["subsystem"]]
        w1 = conditional_weight(psi, slot, comp["subsystem"], p, ctx.b, ctx.tol)
        w2 = conditional_weight(psi, slot, comp["subsystem"], np.eye(d) - p, ctx.b, ctx.tol)
        total = weight(psi, ctx.b)
        results.append({"complementary_weights": [w1, w2], "weight": total})
        if abs(w1 + w2 - total) > ctx.tol:
            failures.append(f"complementary conditional weights {w1:.6g} + {w2:.6g} != {total:.6g}")
    return {"cases": results}, failures


def _ket_spec(ctx, e):
    if isinstance(e, str):
        if e in ctx.sc.kets:
            return ctx.sc.kets[e]
        return ket(e)
    return vector(e, "ket")


def run_eigenhistories(ctx):
    for k, c in enumerate(ctx.sc.checks.get("eigenhistories", [])):
        ops = c["operators"]

        def fn(c=c, ops=ops):
            fam = observable_family([ctx.sc.operators[o] for o in ops], ctx.sc.timeline, ctx.b, ctx.tol, ctx.seed)
            failures = []
            res = {
                "members": list(fam.names),
                "eigenvalues": fam.eigenvalues.T,
                "eigenvectors": fam.eigenvectors.T,
                "weights": fam.report.weights,
                "coefficients": fam.report.coefficients,
            }
            if c.get("expect_count") is not None and len(fam) != c["expect_count"]:
                failures.append(f"expected {c['expect_count']} eigenhistories, found {len(fam)}")
            if c.get("expect_members"):
                wanted = [ctx.sc.states[s] for s in c["expect_members"]]
                unmatched = [n for n, s in zip(c["expect_members"], wanted)
                             if not any(physically_equal(s, m, ctx.b, 1e-9) for m in fam.members)]
                extra = [n for n, m in zip(fam.names, fam.members)
                         if not any(physically_equal(s, m, ctx.b, 1e-9) for s in wanted)]
                res["unmatched_expected"] = unmatched
                res["unmatched_found"] = extra
                if unmatched or extra:
                    failures.append(f"eigenhistory sets differ: missing {unmatched}, extra {extra}")
            overlaps = {}
            for label, vec in (c.get("expect_vectors") or {}).items():
                v = vector(vec, label)
                v = v / np.linalg.norm(v)
                best = max(abs(np.vdot(v, fam.eigenvectors[:, j])) for j in range(fam.eigenvectors.shape[1]))
                overlaps[label] = best
                if best < 1 - 1e-9:
                    failures.append(f"{label}: best overlap {best:.12g} < 1 - 1e-9")
            if overlaps:
                res["overlaps"] = overlaps
            return res, failures

        ctx.record("eigenhistories", f"eigenhistories:{'+'.join(ops)}", ctx.refs(c, operators=ops), fn)


def _marking_refs(ctx, name, c):
    return ctx.refs(c, markings=[name])


def run_simulate(ctx):
    for name, mk in ctx.sc.markings.items():
        spec = mk["spec"]
        m = mk["system"]

        def fn(spec=spec, m=m):
            final = simulate(m)
            failures = []
            _expect(failures, "final_state", final, spec.get("expect_final"), 1e-12, vector)
            res = {"final_state": final, "norm": float(np.linalg.norm(final)), "measurements": []}
            for k, meas in enumerate(spec.get("measurements", [])):
                basis = [_ket_spec(ctx, e) for e in meas["basis"]]
                outs = measure_ancilla(final, m.joint_dims, meas.get("register", 0), basis, ctx.tol)
                probs = [o.probability for o in outs]
                res["measurements"].append({"register": meas.get("register", 0), "basis": meas["basis"],
                                            "probabilities": probs})
                _expect(failures, f"measurement[{k}]", probs, meas.get("expect"), ctx.tol, vector)
            return res, failures

        ctx.record("simulate-marking", f"simulate:{name}", _marking_refs(ctx, name, spec), fn)


def run_branch_map(ctx):
    for name, mk in ctx.sc.markings.items():
        m = mk["system"]
        for c in mk["spec"].get("branch_maps", []):
            f = c["family"]
            if not ctx.included(f):
                continue

            def fn(c=c, f=f, m=m):
                bm = branch_map(m, ctx.family(f), ctx.tol, strict=False)
                want_valid = c.get("expect_valid", True)
                failures = []
                if bm.valid != want_valid:
                    failures.append(f"branch map valid={bm.valid}, expected {want_valid}: {bm.problems}")
                res = bm.to_dict()
                if c.get("pairing_basis"):
                    basis = [_ket_spec(ctx, e) for e in c["pairing_basis"]]
                    pairing = bm.pairing(basis)
                    res["pairing"] = {k: (None if v is None else c["pairing_basis"][v]) for k, v in pairing.items()}
                    for member, label in (c.get("expect_pairing") or {}).items():
                        if res["pairing"].get(member) != label:
                            failures.append(f"{member} paired with {res['pairing'].get(member)}, expected {label}")
                return res, failures

            ctx.record("branch-map", f"branch-map:{name}:{f}", ctx.refs(c, markings=[name], families=[f]), fn)


def run_sequential(ctx):
    for name, mk in ctx.sc.markings.items():
        spec = mk["spec"]
        plans_spec = spec.get("sequential")
        if not plans_spec or not ctx.included(*(p["family"] for p in plans_spec)):
            continue
        m = mk["system"]

        def fn(spec=spec, plans_spec=plans_spec, m=m):
            plans = [
                Plan(p.get("register", 0),
                     [_ket_spec(ctx, e) for e in p["basis"]],
                     ctx.family(p["family"]),
                     [e if isinstance(e, str) else str(i) for i, e in enumerate(p["basis"])])
                for p in plans_spec
            ]
            tree = sequential_measure(m, plans, ctx.tol)
            failures = []
            stage1 = [n.probability for n in tree]
            _expect(failures, "stage1", stage1, spec.get("expect_stage1"), ctx.tol, vector)
            leaves = _leaf_probabilities(tree)
            if abs(sum(leaves) - 1.0) > ctx.tol:
                failures.append(f"leaf probabilities add to {sum(leaves):.12g}")
            return {"stage1": stage1, "tree": [n.to_dict() for n in tree]}, failures

        ctx.record("sequential", f"sequential:{name}", ctx.refs(spec, markings=[name]), fn)


def _leaf_probabilities(nodes):
    out = []
    for n in nodes:
        if n.children:
            out.extend(_leaf_probabilities(n.children))
        else:
            out.append(n.joint_probability)
    return out


DISPATCH = {
    "validate": [run_validate],
    "weight": [run_weight],
    "inner": [run_inner],
    "decompose": [run_decompose],
    "probabilities": [run_probabilities],
    "eigenhistories": [run_eigenhistories],
    "simulate-marking": [run_simulate],
    "branch-map": [run_branch_map],
    "sequential": [run_sequential],
}
DISPATCH["report-all"] = [fn for cmd in COMMANDS[:-1] for fn in DISPATCH[cmd]]


def run(sc, command, tol=DEFAULT_TOL, seed=0, completeness="exact", variant=None):
    """Execute ``command`` on a loaded scenario and return the report as a dict."""
    if command not in DISPATCH:
        raise ValueError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    ctx = Context(sc, tol, seed, completeness, variant)
    for fn in DISPATCH[command]:
        fn(ctx)
    passed = sum(1 for r in ctx.records if r["pass"])
    report = {
        "schema": REPORT_SCHEMA,
        "generator": f"histstates {__version__}",
        "scenario": sc.id,
        "command": command,
        "tolerance": tol,
        "seed": seed,
        "completeness": completeness,
        "variant": variant,
        "checks": ctx.records,
        "summary": {"total": len(ctx.records), "passed": passed, "failed": len(ctx.records) - passed},
    }
    return clean(report)


def to_json(report):
    return json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def to_text(report):
    lines = [f"scenario {report['scenario']}  command {report['command']}  tol {report['tolerance']:g}"]
    width = max([len(r["name"]) for r in report["checks"]] + [10])
    for r in report["checks"]:
        status = "PASS" if r["pass"] else "FAIL"
        detail = r.get("error") or "; ".join(r.get("failures", []))
        lines.append(f"  {r['name']:<{width}}  {status}  {detail}".rstrip())
    s = report["summary"]
    lines.append(f"{s['passed']}/{s['total']} checks passed")
    return "\n".join(lines) + "\n"
