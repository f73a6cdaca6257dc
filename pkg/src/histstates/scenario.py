"""Scenario files: a JSON description of a history space and the checks to run on it.

Layout (``version`` 1)::

    {
      "version": 1,
      "id": "spin3",
      "timeline": [{"label": "t1", "dims": [2]}, ...],     # earliest slot first
      "bridging": "trivial" | [step, ...],                 # step: gate name, matrix name,
                                                           #   inline matrix, or {"compose": [...]}
      "kets": {"0a": {"dim": 1, "amplitudes": [1]}, "1b": [1, 0]},
      "matrices": {"T10": [[...], ...]},
      "states": {
        "Y1": [{"coeff": "sqrt(2)", "chain": ["[z+]", "[x+]", "[z+]"]}, ...],
        "M1": {"combine": {"alpha1": "1/sqrt(3)", "alpha2": "i*sqrt(2/3)"}}
      },
      "families": {"Y": {"members": ["Y1", ...], "variant": "printed"}},
      "operators": {"C": ["sy", "sx"]},
      "observables": {"B": {"family": "Y", "values": [5, 5, 7, 7]}},
      "checks": {...},
      "markings": {"single": {...}}
    }

Chains and operator lists are written the way histories are printed: latest
time first. A factor is ``"[k]"`` (projector onto ket ``k``), ``"|a><b|"``,
``"1"`` (identity), a gate or matrix name, an inline matrix, or, for a slot
with several subsystems, a list with one such entry per subsystem.

Scalars are numbers, ``[re, im]`` pairs, or short expressions over ``i``,
``pi``, ``sqrt``, ``exp`` and arithmetic, e.g. ``"i*sqrt(2/3)"``.
"""

from __future__ import annotations

import ast
import cmath
import copy
import json
import math
import operator
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .densemath import KETS, gate, is_normalized, kron_all, outer, projector
from .errors import InvalidStep, ParseError, ResolutionError, ShapeError
from .families import Family
from .histcore import BridgingSet, ChainTerm, HistoryState, Slot, Timeline, combine
from .marking import MarkedSystem, MarkingStep
from .observables import ProductHistoryOperator

SCHEMA_VERSION = 1
BUNDLED = ("spin3", "twotime-observables", "mach-zehnder", "zfamily")

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_NAMES = {"i": 1j, "j": 1j, "pi": math.pi}
_FUNCS = {"sqrt": cmath.sqrt, "exp": cmath.exp, "conj": lambda z: complex(z).conjugate()}


def _eval_expr(text, where):
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float, complex)):
            return node.value
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ParseError(f"unsupported expression {text!r}", where)

    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError:
        raise ParseError(f"cannot parse expression {text!r}", where) from None
    return complex(ev(tree))


def scalar(value, where=""):
    """Parse a scalar: number, ``[re, im]`` or expression string."""
    if isinstance(value, bool):
        raise ParseError("booleans are not scalars", where)
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, list) and len(value) == 2 and all(isinstance(x, (int, float)) for x in value):
        return complex(value[0], value[1])
    if isinstance(value, str):
        return _eval_expr(value, where)
    raise ParseError(f"expected a scalar, got {value!r}", where)


def vector(value, where=""):
    if not isinstance(value, list):
        raise ParseError("expected a list of scalars", where)
    return np.array([scalar(v, f"{where}[{k}]") for k, v in enumerate(value)], dtype=complex)


def matrix(value, where=""):
    if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
        raise ParseError("expected a matrix as nested lists", where)
    rows = [vector(r, f"{where}[{k}]") for k, r in enumerate(value)]
    if len({len(r) for r in rows}) != 1:
        raise ShapeError("matrix rows differ in length", where)
    return np.array(rows)


_OUTER_RE = re.compile(r"^\|([^<>|]+)><([^<>|]+)\|$")


@dataclass
class Scenario:
    doc: dict
    id: str
    timeline: Timeline
    bridging: BridgingSet
    kets: dict = field(default_factory=dict)
    matrices: dict = field(default_factory=dict)
    states: dict = field(default_factory=dict)
    families: dict = field(default_factory=dict)
    variants: dict = field(default_factory=dict)
    operators: dict = field(default_factory=dict)
    observables: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    markings: dict = field(default_factory=dict)

    def slot_index(self, ref, where=""):
        """Slot index from a label (``"t3"``) or an integer."""
        if isinstance(ref, int) and not isinstance(ref, bool):
            if 0 <= ref < len(self.timeline):
                return ref
        elif ref in self.timeline.labels:
            return self.timeline.labels.index(ref)
        raise ResolutionError(f"unknown time slot {ref!r}", where)

    def family_included(self, name, variant):
        v = self.variants.get(name)
        return variant is None or v is None or v == variant


class _Resolver:
    def __init__(self, doc):
        self.doc = doc

    def ket(self, name, dim, where):
        kets = self.sc.kets
        if name in kets:
            v = kets[name]
        elif name in KETS:
            v = KETS[name]
        else:
            raise ResolutionError(f"undefined ket {name!r}", where)
        if dim is not None and v.shape[0] != dim:
            raise ShapeError(f"ket {name!r} has dimension {v.shape[0]}, slot needs {dim}", where)
        return v

    def named_matrix(self, name, where):
        if name in self.sc.matrices:
            return self.sc.matrices[name]
        try:
            return gate(name)
        except KeyError:
            raise ResolutionError(f"undefined gate or matrix {name!r}", where) from None

    def factor(self, spec, dim, where):
        """One operator on a space of dimension ``dim``."""
        if isinstance(spec, list) and spec and all(isinstance(r, list) for r in spec):
            m = matrix(spec, where)
        elif isinstance(spec, str):
            s = spec.strip()
            if s == "1":
                return np.eye(dim, dtype=complex)
            if s.startswith("[") and s.endswith("]"):
                v = self.ket(s[1:-1].strip(), dim, where)
                if not is_normalized(v):
                    raise ShapeError(f"ket {s[1:-1]!r} is not normalized", where)
                m = projector(v)
            elif _OUTER_RE.match(s):
                a, b = _OUTER_RE.match(s).groups()
                m = outer(self.ket(a.strip(), dim, where), self.ket(b.strip(), dim, where))
            else:
                m = self.named_matrix(s, where)
        else:
            raise ParseError(f"cannot interpret factor {spec!r}", where)
        if m.shape != (dim, dim):
            raise ShapeError(f"factor has shape {m.shape}, slot needs {(dim, dim)}", where)
        return m

    def slot_factor(self, spec, slot, where):
        if isinstance(spec, list) and spec and not all(isinstance(r, list) for r in spec):
            if len(spec) != len(slot.dims):
                raise ShapeError(f"slot {slot.label} has {len(slot.dims)} subsystems, got {len(spec)} factors", where)
            return kron_all(self.factor(s, d, f"{where}[{k}]") for k, (s, d) in enumerate(zip(spec, slot.dims)))
        return self.factor(spec, slot.dim, where)

    def printed_chain(self, specs, where):
        tl = self.sc.timeline
        if not isinstance(specs, list) or len(specs) != len(tl):
            raise ShapeError(f"need {len(tl)} factors (latest time first)", where)
        slots = list(reversed(tl.slots))
        return [self.slot_factor(s, slot, f"{where}[{k}]") for k, (s, slot) in enumerate(zip(specs, slots))]

    def state(self, name, spec, where):
        tl = self.sc.timeline
        if isinstance(spec, dict) and "combine" in spec:
            parts = spec["combine"]
            if not isinstance(parts, dict):
                raise ParseError("combine expects a mapping of state name to coefficient", where)
            refs = []
            for ref, c in parts.items():
                if ref not in self.sc.states:
                    raise ResolutionError(f"undefined state {ref!r} (define it earlier)", f"{where}.combine")
                refs.append((scalar(c, f"{where}.combine.{ref}"), self.sc.states[ref]))
            return combine([c for c, _ in refs], [s for _, s in refs])
        if not isinstance(spec, list):
            raise ParseError("a state is a list of chain terms or a combine mapping", where)
        terms = []
        for k, term in enumerate(spec):
            w = f"{where}[{k}]"
            if not isinstance(term, dict) or "chain" not in term:
                raise ParseError("each term needs a 'chain'", w)
            factors = self.printed_chain(term["chain"], f"{w}.chain")
            terms.append(ChainTerm(scalar(term.get("coeff", 1), f"{w}.coeff"), tuple(reversed(factors))))
        return HistoryState(tl, tuple(terms))

    def resolve(self):
        doc = self.doc
        if not isinstance(doc, dict):
            raise ParseError("scenario must be a JSON object")
        if doc.get("version") != SCHEMA_VERSION:
            raise ParseError(f"unsupported version {doc.get('version')!r}", "version")
        sid = doc.get("id")
        if not isinstance(sid, str):
            raise ParseError("missing scenario id", "id")

        slots = []
        for k, s in enumerate(doc.get("timeline") or []):
            w = f"timeline[{k}]"
            if not isinstance(s, dict) or "label" not in s:
                raise ParseError("slot needs a label", w)
            dims = s.get("dims", [2])
            if not isinstance(dims, list) or not all(isinstance(d, int) and d >= 1 for d in dims):
                raise ShapeError("dims must be a list of positive integers", f"{w}.dims")
            slots.append(Slot(s["label"], tuple(dims)))
        if not slots:
            raise ParseError("timeline needs at least one slot", "timeline")
        tl = Timeline(tuple(slots))
        self.sc = Scenario(doc=doc, id=sid, timeline=tl, bridging=None)

        for name, spec in (doc.get("kets") or {}).items():
            w = f"kets.{name}"
            if isinstance(spec, dict):
                v = vector(spec.get("amplitudes"), f"{w}.amplitudes")
                if "dim" in spec and v.shape[0] != spec["dim"]:
                    raise ShapeError(f"{v.shape[0]} amplitudes for declared dimension {spec['dim']}", w)
            else:
                v = vector(spec, w)
            self.sc.kets[name] = v
        for name, spec in (doc.get("matrices") or {}).items():
            self.sc.matrices[name] = matrix(spec, f"matrices.{name}")

        self.sc.bridging = self.bridging(doc.get("bridging", "trivial"))

        for name, spec in (doc.get("states") or {}).items():
            self.sc.states[name] = self.state(name, spec, f"states.{name}")

        for name, spec in (doc.get("families") or {}).items():
            w = f"families.{name}"
            members = spec.get("members") if isinstance(spec, dict) else None
            if not isinstance(members, list) or not members:
                raise ParseError("family needs a non-empty member list", w)
            for m in members:
                if m not in self.sc.states:
                    raise ResolutionError(f"undefined state {m!r}", f"{w}.members")
            self.sc.families[name] = Family(tuple(self.sc.states[m] for m in members), tuple(members))
            if spec.get("variant") is not None:
                self.sc.variants[name] = spec["variant"]

        for name, spec in (doc.get("operators") or {}).items():
            w = f"operators.{name}"
            factors = self.printed_chain(spec, w)
            self.sc.operators[name] = ProductHistoryOperator.printed(*factors)

        for name, spec in (doc.get("observables") or {}).items():
            w = f"observables.{name}"
            fam = spec.get("family")
            if fam not in self.sc.families:
                raise ResolutionError(f"undefined family {fam!r}", f"{w}.family")
            vals = [scalar(v, f"{w}.values[{k}]") for k, v in enumerate(spec.get("values", []))]
            if any(abs(v.imag) > 0 for v in vals):
                raise ParseError("observable values must be real", f"{w}.values")
            if len(vals) != len(self.sc.families[fam]):
                raise ShapeError("one value per family member required", f"{w}.values")
            self.sc.observables[name] = (fam, [v.real for v in vals])

        self.sc.checks = doc.get("checks") or {}
        self._check_references()
        for name, spec in (doc.get("markings") or {}).items():
            self.sc.markings[name] = self.marking(spec, f"markings.{name}")
        return self.sc

    def bridging(self, spec):
        tl = self.sc.timeline
        if spec == "trivial":
            try:
                return BridgingSet.trivial(tl)
            except ValueError as e:
                raise ShapeError(str(e), "bridging") from None
        if not isinstance(spec, list) or len(spec) != len(tl) - 1:
            raise ShapeError(f"need {len(tl) - 1} bridging steps", "bridging")
        steps = []
        for k, s in enumerate(spec):
            w = f"bridging[{k}]"
            if isinstance(s, dict) and "compose" in s:
                parts = [self.step_matrix(p, f"{w}.compose[{j}]") for j, p in enumerate(s["compose"])]
                m = parts[0]
                for p in parts[1:]:
                    if m.shape[1] != p.shape[0]:
                        raise ShapeError("composition shapes do not chain", w)
                    m = m @ p
            else:
                m = self.step_matrix(s, w)
            want = (tl.dims[k + 1], tl.dims[k])
            if m.shape != want:
                raise ShapeError(f"step has shape {m.shape}, expected {want}", w)
            steps.append(m)
        b = BridgingSet(tuple(steps))
        try:
            b.check(tl)
        except ValueError as e:
            raise ShapeError(str(e), "bridging") from None
        return b

    def step_matrix(self, s, where):
        if isinstance(s, str):
            return self.named_matrix(s, where)
        return matrix(s, where)

    def _check_references(self):
        sc = self.sc
        checks = sc.checks
        if not isinstance(checks, dict):
            raise ParseError("checks must be an object", "checks")

        def need(kind, table, name, where):
            if name not in table:
                raise ResolutionError(f"undefined {kind} {name!r}", where)

        for k, c in enumerate(checks.get("weight", [])):
            need("state", sc.states, c.get("state"), f"checks.weight[{k}].state")
        for k, c in enumerate(checks.get("inner", [])):
            need("state", sc.states, c.get("left"), f"checks.inner[{k}].left")
            need("state", sc.states, c.get("right"), f"checks.inner[{k}].right")
        for key in ("decompose", "probabilities"):
            for k, c in enumerate(checks.get(key, [])):
                need("state", sc.states, c.get("state"), f"checks.{key}[{k}].state")
                need("family", sc.families, c.get("family"), f"checks.{key}[{k}].family")
        for k, c in enumerate(checks.get("measure", [])):
            need("state", sc.states, c.get("state"), f"checks.measure[{k}].state")
            need("observable", sc.observables, c.get("observable"), f"checks.measure[{k}].observable")
        for k, c in enumerate(checks.get("eigenhistories", [])):
            for op in c.get("operators", []):
                need("operator", sc.operators, op, f"checks.eigenhistories[{k}].operators")
            for s in c.get("expect_members", []):
                need("state", sc.states, s, f"checks.eigenhistories[{k}].expect_members")
        for k, c in enumerate(checks.get("compatible", [])):
            need("family", sc.families, c.get("a"), f"checks.compatible[{k}].a")
            need("family", sc.families, c.get("b"), f"checks.compatible[{k}].b")
        for k, c in enumerate(checks.get("conditional", [])):
            need("state", sc.states, c.get("state"), f"checks.conditional[{k}].state")
        for k, f in enumerate(checks.get("validate", [])):
            name = f.get("family") if isinstance(f, dict) else f
            need("family", sc.families, name, f"checks.validate[{k}]")

    def marking(self, spec, where):
        sc = self.sc
        tl = sc.timeline
        regs = spec.get("ancillas", [2])
        if not isinstance(regs, list) or not all(isinstance(d, int) and d >= 1 for d in regs):
            raise ShapeError("ancillas must be a list of register dimensions", f"{where}.ancillas")
        init = spec.get("ancilla_initial", ["0"] * len(regs))
        if not isinstance(init, list) or len(init) != len(regs):
            raise ShapeError("one initial ket per ancilla register", f"{where}.ancilla_initial")
        anc0 = kron_all([self.ket_or_vector(x, d, f"{where}.ancilla_initial[{k}]").reshape(-1, 1)
                         for k, (x, d) in enumerate(zip(init, regs))]).reshape(-1)
        psi0 = self.ket_or_vector(spec.get("system_initial"), tl.dims[0], f"{where}.system_initial")
        steps = []
        for k, st in enumerate(spec.get("schedule", [])):
            w = f"{where}.schedule[{k}]"
            t = sc.slot_index(st.get("time"), f"{w}.time")
            controls = []
            for j, c in enumerate(st.get("controls", [])):
                cw = f"{w}.controls[{j}]"
                p = self.slot_factor(c.get("projector"), tl.slots[t], f"{cw}.projector")
                v = self.ancilla_op(c.get("ancilla", "1"), regs, f"{cw}.ancilla")
                controls.append((p, v))
            try:
                steps.append(MarkingStep(t, tuple(controls)))
            except InvalidStep as e:
                raise ShapeError(str(e), w) from None
        try:
            ms = MarkedSystem(tl, sc.bridging, tuple(regs), psi0, anc0, tuple(steps))
        except ValueError as e:
            raise ShapeError(str(e), where) from None
        for k, bm in enumerate(spec.get("branch_maps", [])):
            if bm.get("family") not in sc.families:
                raise ResolutionError(f"undefined family {bm.get('family')!r}", f"{where}.branch_maps[{k}]")
        for k, plan in enumerate(spec.get("sequential", [])):
            if plan.get("family") not in sc.families:
                raise ResolutionError(f"undefined family {plan.get('family')!r}", f"{where}.sequential[{k}]")
        return {"system": ms, "spec": spec}

    def ket_or_vector(self, x, dim, where):
        if isinstance(x, str):
            return self.ket(x, dim, where)
        v = vector(x, where)
        if v.shape[0] != dim:
            raise ShapeError(f"ket has dimension {v.shape[0]}, expected {dim}", where)
        return v

    def ancilla_op(self, spec, regs, where):
        dim = int(np.prod(regs))
        if isinstance(spec, list) and spec and not all(isinstance(r, list) for r in spec):
            if len(spec) != len(regs):
                raise ShapeError(f"{len(regs)} ancilla registers, got {len(spec)} operators", where)
            return kron_all(self.factor(s, d, f"{where}[{k}]") for k, (s, d) in enumerate(zip(spec, regs)))
        return self.factor(spec, dim, where)


def loads(text, source="<string>"):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg} at line {e.lineno}", source) from None
    return from_dict(doc)


def from_dict(doc):
    return _Resolver(copy.deepcopy(doc)).resolve()


def load(path):
    """Load and fully resolve a scenario file, or a bundled scenario by name."""
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        return loads(bundled_text(str(path)), str(path))
    try:
        text = p.read_text()
    except OSError as e:
        raise ParseError(f"cannot read scenario: {e.strerror}", str(path)) from None
    return loads(text, str(path))


def bundled_text(name):
    return resources.files("histstates").joinpath("scenarios", f"{name}.json").read_text()


def bundled_path(name):
    return Path(str(resources.files("histstates").joinpath("scenarios", f"{name}.json")))


def dumps(sc):
    """Serialize a scenario back to JSON (the normalized source document)."""
    return json.dumps(sc.doc, indent=2, sort_keys=False) + "\n"
