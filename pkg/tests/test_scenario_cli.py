import json
import subprocess
import sys
import time

import numpy as np
import pytest

from histstates.cli import main
from histstates.errors import ParseError, ResolutionError, ShapeError
from histstates.histcore import k_of, physically_equal
from histstates.runner import run, to_json, to_text
from histstates.scenario import BUNDLED, bundled_text, dumps, load, loads


def minimal(**extra):
    doc = {
        "version": 1,
        "id": "mini",
        "timeline": [{"label": "t1", "dims": [2]}, {"label": "t2", "dims": [2]}],
        "bridging": "trivial",
        "states": {"a": [{"coeff": 1, "chain": ["[z+]", "[x+]"]}]},
    }
    doc.update(extra)
    return doc


def test_bundled_spin3_has_the_y_family():
    sc = load("spin3")
    f = sc.families["Y"]
    assert f.names == ("Y1", "Y2", "Y3", "Y4")
    want = np.array([[1, 0], [-1, 0]]) / np.sqrt(2)
    assert np.allclose(k_of(f.members[0], sc.bridging), want)


def test_ket_with_wrong_dimension_is_located():
    doc = minimal(kets={"k": {"dim": 2, "amplitudes": [1, 0, 0]}})
    with pytest.raises(ShapeError) as e:
        loads(json.dumps(doc))
    assert e.value.location == "kets.k"
    doc = minimal(kets={"k": [1, 0, 0]})
    doc["states"]["b"] = [{"chain": ["[k]", "1"]}]
    with pytest.raises(ShapeError) as e:
        loads(json.dumps(doc))
    assert e.value.location.startswith("states.b[0].chain")


def test_undefined_names_are_located():
    with pytest.raises(ResolutionError) as e:
        loads(json.dumps(minimal(bridging=["Hh"])))
    assert "Hh" in str(e.value) and e.value.location == "bridging[0]"
    doc = minimal(families={"F": {"members": ["a", "nope"]}})
    with pytest.raises(ResolutionError):
        loads(json.dumps(doc))
    doc = minimal(checks={"weight": [{"state": "missing"}]})
    with pytest.raises(ResolutionError) as e:
        loads(json.dumps(doc))
    assert e.value.location == "checks.weight[0].state"


def test_parse_errors(tmp_path):
    with pytest.raises(ParseError):
        loads("{not json")
    with pytest.raises(ParseError):
        loads(json.dumps(minimal(version=7)))
    with pytest.raises(ParseError):
        loads(json.dumps(minimal(states={"a": [{"coeff": "__import__('os')", "chain": ["1", "1"]}]})))
    with pytest.raises(ParseError):
        load(tmp_path / "absent.json")


def test_scalar_forms():
    doc = minimal(states={"a": [
        {"coeff": [0, 1], "chain": ["1", "1"]},
        {"coeff": "i*sqrt(2/3) - 1/sqrt(3)", "chain": ["[z+]", "|z+><z-|"]},
    ]})
    sc = loads(json.dumps(doc))
    assert sc.states["a"].terms[0].coeff == 1j
    assert sc.states["a"].terms[1].coeff == pytest.approx(1j * np.sqrt(2 / 3) - 1 / np.sqrt(3))


@pytest.mark.parametrize("name", BUNDLED)
def test_round_trip(name):
    sc = load(name)
    again = loads(dumps(sc))
    assert again.id == sc.id and again.timeline == sc.timeline
    assert all(np.allclose(a, b) for a, b in zip(again.bridging.steps, sc.bridging.steps))
    for key, s in sc.states.items():
        assert physically_equal(s, again.states[key], sc.bridging, 1e-14)
    assert list(again.families) == list(sc.families)
    assert again.variants == sc.variants
    for key, mk in sc.markings.items():
        m, m2 = mk["system"], again.markings[key]["system"]
        assert len(m.schedule) == len(m2.schedule)
        assert np.allclose(m.psi0, m2.psi0) and np.allclose(m.anc0, m2.anc0)


def test_bundled_files_are_valid_json():
    for name in BUNDLED:
        assert json.loads(bundled_text(name))["id"] == name


def test_spin3_probabilities_command():
    rep = run(load("spin3"), "probabilities")
    rec = next(r for r in rep["checks"] if r["name"] == "probabilities:Psi@Y")
    assert rec["pass"]
    assert rec["results"]["probabilities"] == [0.5, 0.5, 0.0, 0.0]


def test_mach_zehnder_validate_command():
    rep = run(load("mach-zehnder"), "validate")
    by = {r["name"]: r for r in rep["checks"]}
    assert not by["validate:alpha-printed"]["pass"]
    assert by["validate:alpha-printed"]["results"]["weights"] == [2.0, 2.0]
    assert by["validate:alpha"]["pass"]


def test_zfamily_validate_command():
    rep = run(load("zfamily"), "validate")
    by = {r["name"]: r for r in rep["checks"]}
    assert not by["validate:Z-printed"]["pass"]
    assert any("Z15-printed" in f for f in by["validate:Z-printed"]["failures"])
    z = by["validate:Z"]
    assert z["pass"] and len(z["results"]["members"]) == 16 and z["results"]["nonzero_bound"] == 16


def test_module_errors_become_fail_records():
    doc = minimal(
        families={"F": {"members": ["a"]}},
        checks={"probabilities": [{"state": "a", "family": "F"}]},
    )
    rep = run(loads(json.dumps(doc)), "probabilities")
    (rec,) = rep["checks"]
    assert rec["pass"] is False and rec["error"].startswith("NotNormalized")
    assert rep["summary"] == {"total": 1, "passed": 0, "failed": 1}


def test_report_shape():
    rep = run(load("spin3"), "weight", tol=1e-9, seed=4)
    assert rep["schema"] == "histstates-report/1"
    assert rep["tolerance"] == 1e-9 and rep["seed"] == 4
    for r in rep["checks"]:
        assert set(r) >= {"name", "command", "inputs_digest", "tolerance", "results", "pass"}
        assert len(r["inputs_digest"]) == 16
    assert to_text(rep).splitlines()[-1] == f"{len(rep['checks'])}/{len(rep['checks'])} checks passed"


@pytest.mark.parametrize("name", BUNDLED)
def test_reports_are_byte_stable(name):
    a = to_json(run(load(name), "report-all"))
    b = to_json(run(load(name), "report-all"))
    assert a == b
    proc = subprocess.run([sys.executable, "-m", "histstates", "--scenario", name, "--cmd", "report-all"],
                          capture_output=True, text=True, check=False)
    assert proc.stdout == a


def test_digest_tracks_inputs():
    doc = json.loads(bundled_text("spin3"))
    base = {r["name"]: r["inputs_digest"] for r in run(loads(json.dumps(doc)), "weight")["checks"]}
    doc["states"]["unitary"][0]["coeff"] = 2
    changed = {r["name"]: r["inputs_digest"] for r in run(loads(json.dumps(doc)), "weight")["checks"]}
    assert base["weight:unitary"] != changed["weight:unitary"]
    assert base["weight:Y1"] == changed["weight:Y1"]


@pytest.mark.parametrize("name, variant, code", [
    ("spin3", None, 0),
    ("twotime-observables", None, 0),
    ("mach-zehnder", "corrected", 0),
    ("mach-zehnder", "printed", 1),
    ("mach-zehnder", None, 1),
    ("zfamily", "corrected", 0),
    ("zfamily", "printed", 1),
])
def test_exit_codes(name, variant, code, capsys):
    args = ["--scenario", name, "--cmd", "report-all", "--format", "text"]
    if variant:
        args += ["--variant", variant]
    assert main(args) == code
    assert "checks passed" in capsys.readouterr().out


def test_usage_and_load_errors_exit_2(tmp_path, capsys):
    assert main(["--scenario", "spin3", "--cmd", "bogus"]) == 2
    assert main(["--scenario", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(minimal(bridging=["Hh"])))
    assert main(["--scenario", str(bad)]) == 2
    assert "ResolutionError" in capsys.readouterr().err
    assert main(["--scenario", "spin3", "--tol", "-1"]) == 2


def test_physical_completeness_flag():
    assert main(["--scenario", "spin3", "--completeness", "physical", "--format", "text"]) == 0


@pytest.mark.parametrize("name", BUNDLED)
def test_report_all_is_fast(name):
    start = time.perf_counter()
    run(load(name), "report-all")
    assert time.perf_counter() - start < 10
