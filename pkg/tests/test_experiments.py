import csv
import io
import json

import numpy as np
import pytest

from noarb import cli, dmw, detect
from noarb import experiments as ex


def cfg(exp, **kw):
    d = {"experiment": exp, "seed": 3}
    d.update(kw)
    return d


def test_catalog_contract():
    required = {"example1-geometric-fbm", "example2-arbitrage", "example4-tanaka", "example5-capped", "example6-power",
                "lemma2-reachability", "corollary3-fbm-reachability", "theorem2-monotone-invariance", "theorem6-timechange",
                "theorem7-qvdrift", "dmw-random-trees", "corollary4-girsanov", "lemma7-projection", "theorem9-hedging"}
    assert required <= set(ex.CATALOG)


@pytest.mark.parametrize("bad,match", [
    ({"experiment": "example4-tanaka"}, "seed"),
    ({"experiment": "example4-tanaka", "seed": 1, "colour": "red"}, "colour"),
    ({"experiment": "example4-tanaka", "seed": 1, "grid": {"T": 1, "M": 3}}, "M"),
    ({"experiment": "example4-tanaka", "seed": -1}, "minimum"),
    ({"experiment": "nope", "seed": 1}, "unknown experiment"),
    ({"experiment": "example5-capped", "seed": 1, "params": {"kap": 1}}, "unknown parameter"),
    ({"experiment": "example5-capped", "seed": 1, "params": {"cap": "big"}}, "cap"),
    ({"experiment": "example5-capped", "seed": 1, "confidence": 1.0}, "maximum"),
])
def test_config_rejections(bad, match):
    with pytest.raises(ex.ConfigError, match=match):
        ex.load_config(bad, "/tmp")


def test_config_defaults_and_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("NOARB_OUTPUT_ROOT", str(tmp_path))
    rc = ex.load_config(cfg("example5-capped", params={"cap": 0.3}))
    assert rc.output_dir == tmp_path / "example5-capped"
    assert rc.params["cap"] == 0.3 and rc.grid.N == 256 and rc.confidence == 0.999
    rc = ex.load_config(cfg("example5-capped", output_dir="/abs/x"))
    assert str(rc.output_dir) == "/abs/x"


def small_run(tmp_path, name):
    c = cfg("example2-arbitrage", n_paths=500, params={"search_paths": 200}, output_dir=name)
    return ex.run_experiment(c, str(tmp_path))


def test_deterministic_bytes_and_manifest(tmp_path):
    a = small_run(tmp_path, "a")
    b = small_run(tmp_path, "b")
    assert [f["sha256"] for f in a.files] == [f["sha256"] for f in b.files]
    assert a.passed
    names = {f["path"] for f in a.files}
    assert {"certificate.csv", "summary.json", "X_path.svg", "X_path.axis.json"} <= names
    ok, problems = ex.verify_manifest(tmp_path / "a" / "manifest.json")
    assert ok and not problems
    m = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert m["config"]["seed"] == 3 and "numpy" in m["versions"] and m["wall_clock_seconds"] >= 0


def test_tamper_detected(tmp_path):
    small_run(tmp_path, "a")
    p = tmp_path / "a" / "certificate.csv"
    p.write_text(p.read_text() + "x\n")
    ok, problems = ex.verify_manifest(tmp_path / "a" / "manifest.json")
    assert not ok and problems == ["digest mismatch certificate.csv"]
    (tmp_path / "a" / "summary.json").unlink()
    assert "missing summary.json" in ex.verify_manifest(tmp_path / "a" / "manifest.json")[1]


def test_emit_report_bit_stable(tmp_path):
    m = small_run(tmp_path, "a")
    for fmt in ex.FORMATS:
        names = ex.emit_report(tmp_path / "a" / "manifest.json", fmt, tmp_path / "again")
        for n in names:
            assert (tmp_path / "again" / n).read_bytes() == (tmp_path / "a" / n).read_bytes()
    with pytest.raises(ValueError):
        ex.emit_report(m.report, "xml", tmp_path)


def test_svg_point_count(tmp_path):
    r = ex.Report("x")
    t = np.linspace(0, 1, 65)
    r.path_series("p", t, np.sin(t))
    ex.emit_report(r, "svg-data", tmp_path)
    svg = (tmp_path / "p.svg").read_text()
    pts = svg.split('points="')[1].split('"')[0].split()
    assert len(pts) == 65
    axis = json.loads((tmp_path / "p.axis.json").read_text())
    assert axis["n_points"] == 65 and axis["xlabel"] == "t"


def test_verdict_csv_schema(tmp_path):
    r = ex.Report("x")
    v = detect.classify_increments(np.array([1.0, -2.0] * 30))
    r.table("verdicts", ex.VERDICT_COLS, [ex._verdict_row("c", v)])
    ex.emit_report(r, "csv", tmp_path)
    head = (tmp_path / "verdicts.csv").read_text().splitlines()[0]
    assert head == "candidate,n_pos,n_neg,n_zero,lb_pos,lb_neg,class"


def test_twelve_significant_digits(tmp_path):
    r = ex.Report("x")
    r.table("t", ["v"], [{"v": 1 / 3}, {"v": 2.0 / 3e7}])
    ex.emit_report(r, "csv", tmp_path)
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[1] == "0.333333333333"
    assert rows[2].rstrip("0").endswith("666666666667")


def test_fbm_covariance_brownian_case(tmp_path):
    m = ex.run_experiment(cfg("fbm-covariance", n_paths=20000, params={"H": 0.5}), str(tmp_path))
    rows = m.report["tables"]["covariance"]["rows"]
    assert all(row["theory"] == min(row["s"], row["t"]) for row in rows)
    assert m.checks["within_4se"]


def test_dmw_experiment_matches_oracle_file(tmp_path):
    m = ex.run_experiment(cfg("dmw-random-trees", params={"n_trees": 60}), str(tmp_path))
    text = (tmp_path / "dmw-random-trees" / "trees.csv").read_text()
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 60 and all(r["solver"] == r["oracle"] for r in rows)
    assert m.passed


@pytest.fixture
def failing_experiment(monkeypatch):
    def fn(rc):
        r = ex.Report("always-fails")
        r.checks["impossible"] = False
        return r

    monkeypatch.setitem(ex.CATALOG, "always-fails", ex.Experiment("always-fails", fn, 1.0, 8, 1, {}, "test"))


def test_cli_exit_codes(tmp_path, capsys, failing_experiment):
    good = tmp_path / "good.json"
    good.write_text(json.dumps(cfg("example4-tanaka", n_paths=500)))
    assert cli.main(["run", str(good), "--output-root", str(tmp_path)]) == 0
    assert "PASS gains_nonneg" in capsys.readouterr().out
    assert cli.main(["verify", str(tmp_path / "example4-tanaka" / "manifest.json")]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"experiment": "example4-tanaka"}))
    assert cli.main(["run", str(bad)]) == 1
    assert cli.main(["run", str(tmp_path / "missing.json")]) == 1
    fail = tmp_path / "fail.json"
    fail.write_text(json.dumps(cfg("always-fails")))
    assert cli.main(["run", str(fail), "--output-root", str(tmp_path)]) == 2
    assert "FAIL impossible" in capsys.readouterr().out
    assert cli.main(["list"]) == 0
    assert "theorem9-hedging" in capsys.readouterr().out
