"""Experiment catalog, reports and run manifests.

Each experiment maps a validated configuration to a :class:`Report` (tables,
summary values, plot series and named pass/fail checks).  Reports are emitted
as CSV, JSON and SVG polyline data with numbers fixed at 12 significant
digits, so identical configurations give identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import platform
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path as FsPath
from typing import Callable, Optional

import jsonschema
import numpy as np
from scipy import stats
from scipy.optimize import linprog

from . import __version__, _accel, detect, dmw, frackernel, hedge, procgen, strategy as st, xform
from ._io import dumps as json_dumps, format_number, rows_to_csv, to_jsonable
from .procgen import Path, ProcessSpec, TimeGrid, VSpec

# -- reports --------------------------------------------------------------------------


def _rounded(a) -> list:
    return [float(format_number(v)) for v in np.asarray(a, float)]


@dataclass
class Report:
    experiment: str
    tables: dict = field(default_factory=dict)  # name -> {"columns": [...], "rows": [...]}
    summary: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)  # name -> {"t", "y", "xlabel", "ylabel", "title"}
    checks: dict = field(default_factory=dict)  # name -> bool

    def table(self, name: str, columns: list[str], rows: list[dict]) -> None:
        self.tables[name] = {"columns": list(columns), "rows": [{c: r[c] for c in columns} for r in rows]}

    def path_series(self, name: str, t: np.ndarray, y: np.ndarray, ylabel: str = "value", title: str = "") -> None:
        # stored at the written precision so re-emitting from a manifest redraws the same bytes
        self.series[name] = {"t": _rounded(t), "y": _rounded(y),
                             "xlabel": "t", "ylabel": ylabel, "title": title or name}

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return to_jsonable({"experiment": self.experiment, "tables": self.tables, "summary": self.summary,
                            "series": self.series, "checks": self.checks})

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        return cls(d["experiment"], d["tables"], d["summary"], d["series"], d["checks"])


def _svg(series: dict, width: int = 800, height: int = 300) -> str:
    t = np.asarray(series["t"], float)
    y = np.asarray(series["y"], float)
    t0, t1 = float(t.min()), float(t.max())
    y0, y1 = float(np.nanmin(y)), float(np.nanmax(y))
    sx = width / (t1 - t0) if t1 > t0 else 0.0
    sy = height / (y1 - y0) if y1 > y0 else 0.0
    pts = " ".join(f"{format_number((a - t0) * sx)},{format_number(height - (b - y0) * sy)}" for a, b in zip(t, y))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">\n'
        f'<polyline fill="none" stroke="black" stroke-width="1" points="{pts}"/>\n</svg>\n'
    )


def _axis(series: dict) -> dict:
    t = np.asarray(series["t"], float)
    y = np.asarray(series["y"], float)
    return {"title": series["title"], "xlabel": series["xlabel"], "ylabel": series["ylabel"],
            "x_range": [float(t.min()), float(t.max())], "y_range": [float(np.nanmin(y)), float(np.nanmax(y))],
            "n_points": int(t.size)}


FORMATS = ("csv", "json", "svg-data")


def emit_report(report, fmt: str, out_dir) -> list[str]:
    """Write ``report`` (a Report, a manifest dict or a manifest path) in one format; returns relative file names."""
    if isinstance(report, (str, os.PathLike)) and not isinstance(report, Report):
        report = json.loads(FsPath(report).read_text())
    if isinstance(report, dict):
        report = Report.from_dict(report["report"] if "report" in report else report)
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name: str, text: str):
        (out / name).write_text(text, newline="")
        written.append(name)

    if fmt == "csv":
        for name, tab in sorted(report.tables.items()):
            put(f"{name}.csv", rows_to_csv(tab["rows"], tab["columns"]))
    elif fmt == "json":
        put("summary.json", json_dumps({"experiment": report.experiment, "summary": report.summary,
                                        "checks": report.checks, "passed": report.passed}))
    else:
        for name, s in sorted(report.series.items()):
            put(f"{name}.svg", _svg(s))
            put(f"{name}.axis.json", json_dumps(_axis(s)))
    return written


# -- configuration ------------------------------------------------------------------------

TOP_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment", "seed"],
    "properties": {
        "experiment": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"T": {"type": "number", "exclusiveMinimum": 0}, "N": {"type": "integer", "minimum": 1}},
        },
        "n_paths": {"type": "integer", "minimum": 1},
        "confidence": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "output_dir": {"type": "string"},
        "params": {"type": "object"},
    },
}


@dataclass
class RunConfig:
    experiment: str
    seed: int
    grid: TimeGrid
    n_paths: int
    confidence: float
    params: dict
    output_dir: FsPath

    def echo(self) -> dict:
        return {"experiment": self.experiment, "seed": self.seed, "grid": {"T": self.grid.T, "N": self.grid.N},
                "n_paths": self.n_paths, "confidence": self.confidence, "params": self.params,
                "output_dir": str(self.output_dir)}


@dataclass(frozen=True)
class Experiment:
    id: str
    fn: Callable[[RunConfig], Report]
    T: float
    N: int
    n_paths: int
    params: dict
    about: str


CATALOG: dict[str, Experiment] = {}


def experiment(id: str, T: float, N: int, n_paths: int, about: str, **params):
    def deco(fn):
        CATALOG[id] = Experiment(id, fn, T, N, n_paths, params, about)
        return fn

    return deco


class ConfigError(ValueError):
    pass


def _check_param(exp: str, key: str, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, (int, float)) and not isinstance(default, bool):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok and isinstance(default, int) and not isinstance(value, int):
            ok = False
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{exp}: parameter {key!r} should look like {default!r}, got {value!r}")


def load_config(cfg: dict, output_root: Optional[str] = None) -> RunConfig:
    """Validate a JSON config (strict schema, unknown keys rejected) and fill defaults."""
    try:
        jsonschema.validate(cfg, TOP_SCHEMA)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"invalid config: {e.message}") from None
    exp_id = cfg["experiment"]
    if exp_id not in CATALOG:
        raise ConfigError(f"unknown experiment id {exp_id!r}; see `noarb list`")
    exp = CATALOG[exp_id]
    params = dict(exp.params)
    for k, v in cfg.get("params", {}).items():
        if k not in exp.params:
            raise ConfigError(f"{exp_id}: unknown parameter {k!r}; allowed: {sorted(exp.params)}")
        _check_param(exp_id, k, v, exp.params[k])
        params[k] = v
    g = cfg.get("grid", {})
    grid = TimeGrid(float(g.get("T", exp.T)), int(g.get("N", exp.N)))
    root = output_root if output_root is not None else os.environ.get("NOARB_OUTPUT_ROOT", "noarb-output")
    out = FsPath(cfg.get("output_dir", exp_id))
    if not out.is_absolute():
        out = FsPath(root) / out
    return RunConfig(exp_id, int(cfg["seed"]), grid, int(cfg.get("n_paths", exp.n_paths)),
                     float(cfg.get("confidence", 0.999)), params, out)


# -- manifest ---------------------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def versions() -> dict:
    import numba
    import scipy

    return {"noarb": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__,
            "python": platform.python_version(), "backend": _accel.backend()}


@dataclass
class RunManifest:
    config: dict
    versions: dict
    wall_clock_seconds: float
    files: list  # [{"path", "sha256", "bytes"}]
    checks: dict
    passed: bool
    report: dict
    output_dir: str

    def to_dict(self) -> dict:
        return {"config": self.config, "versions": self.versions, "wall_clock_seconds": self.wall_clock_seconds,
                "files": self.files, "checks": self.checks, "passed": self.passed, "report": self.report,
                "output_dir": self.output_dir}

    def write(self, path) -> None:
        FsPath(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def run_experiment(config, output_root: Optional[str] = None) -> RunManifest:
    rc = config if isinstance(config, RunConfig) else load_config(config, output_root)
    t0 = time.perf_counter()
    try:
        report = CATALOG[rc.experiment].fn(rc)
    except (ValueError, RuntimeError) as e:
        raise RuntimeError(f"experiment {rc.experiment} failed: {e}") from e
    wall = time.perf_counter() - t0
    rc.output_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for fmt in FORMATS:
        names += emit_report(report, fmt, rc.output_dir)
    files = [{"path": n, "sha256": sha256_file(rc.output_dir / n), "bytes": (rc.output_dir / n).stat().st_size}
             for n in sorted(names)]
    m = RunManifest(rc.echo(), versions(), round(wall, 3), files, dict(report.checks), report.passed,
                    report.to_dict(), str(rc.output_dir))
    m.write(rc.output_dir / "manifest.json")
    return m


def verify_manifest(path) -> tuple[bool, list[str]]:
    """Re-hash every listed file next to the manifest; returns (ok, problems)."""
    path = FsPath(path)
    d = json.loads(path.read_text())
    base = path.parent
    problems = []
    for f in d["files"]:
        p = base / f["path"]
        if not p.exists():
            problems.append(f"missing {f['path']}")
        elif sha256_file(p) != f["sha256"]:
            problems.append(f"digest mismatch {f['path']}")
    return not problems, problems


# -- helpers ------------------------------------------------------------------------------------


def _within(z: float, k: float = 4.0) -> bool:
    return bool(abs(z) <= k)


def _verdict_row(name: str, v: detect.Verdict) -> dict:
    return {"candidate": name, "n_pos": v.n_pos, "n_neg": v.n_neg, "n_zero": v.n_zero,
            "lb_pos": v.lb_pos, "lb_neg": v.lb_neg, "class": v.classification}


VERDICT_COLS = ["candidate", "n_pos", "n_neg", "n_zero", "lb_pos", "lb_neg", "class"]


def _spec_v(params) -> VSpec:
    return VSpec("sine", bound=params["V_bound"], amplitude=params["V_amplitude"], freq=params["V_freq"])


# -- catalog --------------------------------------------------------------------------------------

DEFAULT_PAIRS = [[0.1, 0.2], [0.1, 1.0], [0.25, 0.5], [0.25, 0.75], [0.3, 0.9], [0.5, 0.5],
                 [0.5, 1.0], [0.6, 0.7], [0.75, 1.0], [1.0, 1.0]]


def fbm_covariance_table(H: float, grid: TimeGrid, n: int, seed: int, pairs, method: str = "davies-harte"):
    x = procgen.sample_fbm(H, grid, seed, method=method, n_paths=n).values
    rows = []
    for s, t in pairs:
        i, j = grid.index_of(s), grid.index_of(t)
        prod = x[:, i] * x[:, j]
        emp = float(prod.mean())
        se = float(prod.std(ddof=1) / math.sqrt(n))
        theory = float(min(s, t)) if H == 0.5 else float(procgen.fbm_covariance(H, s, t))
        rows.append({"s": s, "t": t, "empirical": emp, "theory": theory, "se": se, "z": (emp - theory) / se})
    return rows


@experiment("fbm-covariance", 1.0, 256, 20000, "fBm covariance law at fixed (s, t) pairs", H=0.7, method="davies-harte", pairs=DEFAULT_PAIRS)
def _fbm_cov(rc: RunConfig) -> Report:
    r = Report(rc.experiment)
    rows = fbm_covariance_table(rc.params["H"], rc.grid, rc.n_paths, rc.seed, rc.params["pairs"], rc.params["method"])
    r.table("covariance", ["s", "t", "empirical", "theory", "se", "z"], rows)
    r.checks["within_4se"] = all(_within(row["z"]) for row in rows)
    r.summary["max_abs_z"] = max(abs(row["z"]) for row in rows)
    return r


@experiment("example1-geometric-fbm", 1.0, 256, 4000, "exp of fBm: sign verdicts match fBm's", H=0.7, tau0=0.2, tau1=0.5)
def _example1(rc: RunConfig) -> Report:
    r = Report(rc.experiment)
    p = rc.params
    rows = []
    verdicts = {}
    for name, spec in (("fbm", ProcessSpec("fbm", H=p["H"])), ("geometric_fbm", ProcessSpec("geometric_fbm", H=p["H"]))):
        v = detect.increment_sign_test(spec, st.Deterministic(p["tau0"]), st.Deterministic(p["tau1"]), n=rc.n_paths,
                                       conf=rc.confidence, grid=rc.grid, seed=rc.seed)
        verdicts[name] = v
        rows.append(_verdict_row(name, v))
    r.table("verdicts", VERDICT_COLS, rows)
    a, b = verdicts["fbm"], verdicts["geometric_fbm"]
    r.checks["same_classification"] = a.classification == b.classification
    r.checks["same_counts"] = (a.n_pos, a.n_neg, a.n_zero) == (b.n_pos, b.n_neg, b.n_zero)
    r.checks["both_signs"] = b.classification == detect.BOTH
    x = procgen.simulate(ProcessSpec("geometric_fbm", H=p["H"]), rc.grid, 1, rc.seed)["X"][0]
    r.path_series("geometric_fbm_path", rc.grid.times, x, "exp(B^H)")
    return r


def example2_certificate(grid: TimeGrid, h: float, n: int, seed: int):
    """Per-path gain of ``1_(0,h]`` on the Itô-quadratic process and its discretization slack."""
    X, B = procgen.sample_ito_quadratic(grid, seed, n_paths=n)
    strat = st.interval(st.Deterministic(0.0), st.Deterministic(h), h=h)
    g = st.gains(strat, X).total
    k = grid.index_of(h)
    qv = procgen.realized_quadratic_variation(B).values[:, k]
    slack = 0.5 * (qv - grid.times[k])  # X_h - (B_h^2 + h)/2 = -(QV_h - h)/2
    return g, np.maximum(slack, 0.0), X, B


@experiment("example2-arbitrage", 1.0, 1024, 10000, "Ito quadratic process: 1_(0,h] is an arbitrage", h=0.25, search_paths=2000, delta_star_h=0.1)
def _example2(rc: RunConfig) -> Report:
    r = Report(rc.experiment)
    h = rc.params["h"]
    g, slack, X, B = example2_certificate(rc.grid, h, rc.n_paths, rc.seed)
    ok = g >= h / 2 - slack - 1e-12
    r.table("certificate", ["quantity", "value"], [
        {"quantity": "n_paths", "value": rc.n_paths},
        {"quantity": "fraction_gain_ge_bound", "value": float(ok.mean())},
        {"quantity": "min_gain", "value": float(g.min())},
        {"quantity": "h_over_2", "value": h / 2},
        {"quantity": "max_slack", "value": float(slack.max())},
        {"quantity": "mean_slack", "value": float(slack.mean())},
    ])
    r.checks["certificate_all_paths"] = bool(ok.all())
    M = Path(rc.grid, X.values - rc.grid.times)
    qv_m = procgen.realized_quadratic_variation(M)
    qv_b = procgen.realized_quadratic_variation(B)
    hs = rc.params["delta_star_h"]
    cm = procgen.check_condition_star(qv_m, lambda u: u * u / 10, hs)
    cb = procgen.check_condition_star(qv_b, lambda u: u / 2, hs)
    r.table("condition_star", ["process", "delta", "fraction_failing"], [
        {"process": "M=int B dB", "delta": "h^2/10", "fraction_failing": float(1 - cm.holds.mean())},
        {"process": "B", "delta": "h/2", "fraction_failing": float(1 - cb.holds.mean())},
    ])
    r.checks["martingale_part_fails_star"] = bool(1 - cm.holds.mean() > 0.01)
    r.checks["brownian_satisfies_star"] = cb.all_hold
    fam = detect.interval_family(rc.grid, h, [h, 0.5, 1.0])
    res = detect.arbitrage_search(ProcessSpec("ito_quadratic"), fam, h, rc.params["search_paths"], grid=rc.grid,
                                  seed=rc.seed + 1, conf=rc.confidence)
    r.table("search", ["candidate", "n_pos", "n_neg", "n_zero", "lb_pos", "lb_neg", "class", "mean", "mean_lcb", "flagged"],
            [c.row() for c in res.candidates])
    r.checks["search_flags_1_0h"] = any(c.flagged and c.candidate == f"+1*1(0,{h:g}]" for c in res.candidates)
    r.summary["best_candidate"] = res.best.candidate
    r.path_series("X_path", rc.grid.times, X.values[0], "X")
    return r


@experiment("example4-tanaka", 1.0, 256, 10000, "|B| buy-and-hold is an arbitrage")
def _example4(rc: RunConfig) -> Report:
    r = Report(rc.experiment)
    absb, L, M = procgen.sample_tanaka(rc.grid, rc.seed, n_paths=rc.n_paths)
    strat = st.interval(st.Deterministic(0.0), st.Deterministic(rc.grid.T))
    g = st.gains(strat, absb).total
    r.table("certificate", ["quantity", "value"], [
        {"quantity": "fraction_nonneg", "value": float((g >= 0).mean())},
        {"quantity": "fraction_positive", "value": float((g > 0).mean())},
        {"quantity": "max_identity_gap", "value": float(np.abs(absb.values - M.values - L.values).max())},
        {"quantity": "min_local_time_step", "value": float(np.diff(L.values, axis=1).min())},
    ])
    r.checks["gains_nonneg"] = bool((g >= 0).all())
    r.checks["gains_positive_99pct"] = bool((g > 0).mean() >= 0.99)
    r.checks["local_time_nondecreasing"] = bool(np.diff(L.values, axis=1).min() >= -1e-12)
    r.path_series("abs_B", rc.grid.times, absb.values[0], "|B|")
    r.path_series("local_time", rc.grid.times, L.values[0], "L")
    return r


@experiment("example5-capped", 1.0, 256, 10000, "Tanaka with local time capped: no sign certificate", cap=0.5)
def _example5(rc: RunConfig) -> Report:
    r = Report(rc.experiment)
    cap = rc.params["cap"]
    D, L, M = procgen.sample_tanaka(rc.grid, rc.seed, cap=cap, n_paths=rc.n_paths)
    inc = D.values[:, -1] - D.values[:, 0]
    v = detect.classify_increments(inc, rc.confidence)
    r.table("verdicts", VERDICT_COLS, [_verdict_row("D_T - D_0", v)])
    lstop = D.values - M.values
    step = np.abs(np.diff(L.values, axis=1)).max()
    r.checks["both_signs"] = v.classification == detect.BOTH
    r.checks["cap_respected"] = bool(lstop.max() <= cap + step + 1e-12)
    r.summary["max_stopped_local_time"] = float(lstop.max())
    return r


@experiment("example6-power", 0.5, 16384, 200, "power integrand satisfies condition (*)", alpha=1.0, h=0.25, slack=0.1)
def _example6(rc: RunConfig) -> Report:
    r = Report(rc.experiment)
    a, h = rc.params["alpha"], rc.params["h"]
    rows = []
    all_ok = True
    for size, child in procgen.chunk_seeds(rc.seed, rc.n_paths, 50):
        x = procgen.simulate(ProcessSpec("power_integrand", alpha=a), rc.grid, size, child)["X"]
        res = procgen.check_condition_star(procgen.realized_quadratic_variation(Path(rc.grid, x)),
                                           lambda u: u ** (2 * a + 1) / (2 * a + 1), h, rc.params["slack"])
        all_ok &= res.all_hold
        rows.append({"chunk": len(rows), "paths": size, "min_increment": float(res.min_increment.min()),
                     "threshold": res.threshold, "all_hold": bool(res.all_hold)})
    r.table("condition_star", ["chunk", "paths", "min_increment", "threshold", "all_hold"], rows)
    r.checks["condition_star_holds"] = bool(all_ok)
    return r


@experiment("lemma2-reachability", 1.0, 256, 100000, "Brownian window events vs the chaining bound", h=0.1, C=0.5)
def _window_reachability(rc: RunConfig) -> Report:
    r = Report(rc.experiment)
    h, C = rc.params["h"], rc.params["C"]
    rep = detect.reachability_test(ProcessSpec("brownian"), h, rc.grid.T, C, n=rc.n_paths, grid=rc.grid, seed=rc.seed,
                                   nu=rc.grid.T, conf=rc.confidence)
    bound = detect.chaining_lower_bound(h, rc.grid.T, C)
    se = rep.se(rep.p_sup_below)
    p_point = float(stats.norm.sf(C / math.sqrt(rc.grid.T)))
    r.table("reachability", ["event", "estimate", "se", "reference"], [
        {"event": "sup_[h,T] B < -C", "estimate": rep.p_sup_below, "se": se, "reference": bound},
        {"event": "inf_[h,T] B > C", "estimate": rep.p_inf_above, "se": rep.se(rep.p_inf_above), "reference": bound},
        {"event": "B_T > C", "estimate": rep.p_up, "se": rep.se(rep.p_up), "reference": p_point},
    ])
    r.checks["estimate_minus_3se_exceeds_bound"] = bool(rep.p_sup_below - 3 * se > bound)
    r.checks["point_tail_within_4se"] = _within((rep.p_up - p_point) / rep.se(rep.p_up))
    r.summary.update(bound=bound, estimate=rep.p_sup_below, se=se)
    return r


def fbm_reachability_report(grid: TimeGrid, n: int, seed: int, conf: float, H: float, level: float, offset: float, C: float, A_before: float):
    tau = st.Truncate(st.HittingLevel(level), grid.T - offset)
    A = st.EventSpec(st.BinOp("<", st.StopTime(), st.Const(A_before)), tau)
    return detect.reachability_test(ProcessSpec("fbm", H=H), offset / 2, offset, C, tau, A, n, grid=grid, seed=seed,
                                    nu=offset, conf=conf)


@experiment("corollary3-fbm-reachability", 1.5, 384, 50000, "fBm increments after a hitting time reach both tails",
            H=0.7, level=0.3, offset=0.5, C=0.2, A_before=0.6)
def _fbm_reachability(rc: RunConfig) -> Report:
    r = Report(rc.experiment)
    p = rc.params
    rep = fbm_reachability_report(rc.grid, rc.n_paths, rc.seed, rc.confidence, p["H"], p["level"], p["offset"], p["C"], p["A_before"])
    r.table("reachability", ["event", "count", "estimate", "lower_bound"], [
        {"event": "dX > C", "count": rep.n_up, "estimate": rep.p_up, "lower_bound": rep.lb_up},
        {"event": "dX < -C", "count": rep.n_down, "estimate": rep.p_down, "lower_bound": rep.lb_down},
    ])
    r.summary.update(n_cond=rep.n_cond, freq_A=rep.freq_A)
    r.checks["both_tails_positive"] = bool(rep.lb_up > 0 and rep.lb_down > 0)
    r.checks["A_nontrivial"] = bool(0 < rep.freq_A < 1)
    return r


INVARIANCE_MAPS = {"exp": xform.MonotoneMap("exp"), "x3+x": xform.MonotoneMap("cubic_linear"), "arctan": xform.MonotoneMap("arctan")}


@experiment("theorem2-monotone-invariance", 1.0, 256, 4000, "certificate types and verdicts survive strictly increasing maps",
            n_trees=200, H=0.7, tau0=0.2, tau1=0.5)
def _monotone_invariance(rc: RunConfig) -> Report:
    r = Report(rc.experiment)
    p = rc.params
    rng = np.random.default_rng(rc.seed)
    trees = [dmw.random_tree(rng) for _ in range(p["n_trees"])]
    base = [type(dmw.solve_tree(t)).__name__ for t in trees]
    rows = []
    for name, f in INVARIANCE_MAPS.items():
        changed = sum(type(dmw.solve_tree(t.map_prices(f))).__name__ != b for t, b in zip(trees, base))
        rows.append({"map": name, "trees": len(trees), "type_changes": changed})
    r.table("tree_invariance", ["map", "trees", "type_changes"], rows)
    r.checks["tree_types_unchanged"] = all(row["type_changes"] == 0 for row in rows)
    vrows = []
    tau0, tau1 = st.Deterministic(p["tau0"]), st.Deterministic(p["tau1"])
    ref = detect.increment_sign_test(ProcessSpec("fbm", H=p["H"]), tau0, tau1, n=rc.n_paths, conf=rc.confidence, grid=rc.grid, seed=rc.seed)
    vrows.append(_verdict_row("identity", ref))
    same = True
    for name, f in INVARIANCE_MAPS.items():
        v = detect.increment_sign_test(ProcessSpec("fbm", H=p["H"], transform=f), tau0, tau1, n=rc.n_paths,
                                       conf=rc.confidence, grid=rc.grid, seed=rc.seed)
        vrows.append(_verdict_row(name, v))
        same &= v.classification == ref.classification
    r.table("verdict_invariance", VERDICT_COLS, vrows)
    r.checks["verdicts_unchanged"] = bool(same)
    return r


def timechange_max_gap(kind: str, grid: TimeGrid, n: int, seed: int, levels=(0.3, -0.2)) -> float:
    """Largest pathwise gap between gains of ``1_(t0,t1]`` on ``X`` and ``1_(C_t0, C_t1]`` on ``X~``.

    ``kind`` picks the clock: ``t``, ``2t`` or the realized QV of the path.
    """
    if kind in ("t", "2t"):
        c = 1.0 if kind == "t" else 2.0
        X = procgen.sample_brownian(TimeGrid(c * grid.T, grid.N), seed, n_paths=n)
        pairs = [(X, xform.build_time_change(c * grid.times, grid))]
    elif kind == "qv":
        B = procgen.sample_brownian(grid, seed, n_paths=n)
        pairs = [(B[i], xform.qv_time_change(B[i])) for i in range(n)]
    else:
        raise ValueError(f"unknown clock {kind!r}")
    worst = 0.0
    for X, tc in pairs:
        bound = 0.8 * min(float(tc.nu[-1]), X.grid.T)
        t0 = st.Truncate(st.HittingLevel(levels[0]), 0.4 * bound)
        t1 = st.Truncate(st.HittingLevel(levels[1], "down", start=0.4 * bound), bound)
        g, gt, _, _ = xform.gains_correspondence(X, tc, st.evaluate_stop(t0, X), st.evaluate_stop(t1, X))
        worst = max(worst, float(np.abs(g - gt).max()))
    return worst


@experiment("theorem6-timechange", 1.0, 1024, 200, "gains correspondence under continuous time changes")
def _timechange(rc: RunConfig) -> Report:
    r = Report(rc.experiment)
    rows = []
    for kind in ("t", "2t", "qv"):
        gap = timechange_max_gap(kind, rc.grid, rc.n_paths, rc.seed)
        rows.append({"clock": kind, "max_abs_gap": gap})
    r.table("correspondence", ["clock", "max_abs_gap"], rows)
    r.checks["pathwise_equal_1e-12"] = all(row["max_abs_gap"] <= 1e-12 for row in rows)
    B = procgen.sample_brownian(rc.grid, rc.seed)
    tc = xform.qv_time_change(B)
    r.path_series("qv_clock", rc.grid.times, tc.nu, "nu")
    return r


@experiment("theorem7-qvdrift", 1.0, 1024, 10000, "Z = S + [S,S]^alpha for Brownian S", alphas=[1.0, 0.5])
def _qvdrift(rc: RunConfig) -> Report:
    r = Report(rc.experiment)
    rows = []
    for a in rc.params["alphas"]:
        z = xform.qv_drift_process(ProcessSpec("brownian"), a, rc.grid, rc.seed, n_paths=rc.n_paths).values[:, -1]
        se = float(z.std(ddof=1) / math.sqrt(z.size))
        rows.append({"alpha": a, "mean_Z_T": float(z.mean()), "se": se, "reference": rc.grid.T**a,
                     "z": (float(z.mean()) - rc.grid.T**a) / se, "regime": "no-arbitrage" if a >= 0.5 else "exploration"})
    r.table("qv_drift", ["alpha", "mean_Z_T", "se", "reference", "z", "regime"], rows)
    r.checks["means_within_4se"] = all(_within(row["z"]) for row in rows)
    return r


def lp_oracle_has_arbitrage(tree: dmw.ScenarioTree) -> bool:
    """Global LP over positions in [-1, 1]: is there a nonzero nonnegative terminal gain?"""
    inner = tree.internal()
    leaves = tree.leaves()
    price = [float(x) for x in tree.price]
    G = np.zeros((len(leaves), len(inner)))
    pos = {n: k for k, n in enumerate(inner)}
    for r_, leaf in enumerate(leaves):
        chain = tree.ancestry(leaf)
        for a, b in zip(chain[:-1], chain[1:]):
            G[r_, pos[a]] += price[b] - price[a]
    res = linprog(-G.sum(axis=0), A_ub=-G, b_ub=np.zeros(len(leaves)), bounds=[(-1, 1)] * len(inner), method="highs")
    return bool(-res.fun > 1e-9)


def perturbed(cert):
    """Adversarial variants that must all fail verification."""
    out = []
    if isinstance(cert, dmw.MartingaleCertificate):
        for k in sorted(cert.q)[:3]:
            q = dict(cert.q)
            q[k] = q[k] + (Fraction(1, 1000) if isinstance(q[k], Fraction) else 1e-3)
            out.append(dmw.MartingaleCertificate(q, cert.exact))
    else:
        f = dict(cert.f)
        f[cert.node] = -f[cert.node]
        out.append(dmw.ArbitrageCertificate(f, cert.node, cert.exact))
        f0 = {k: 0 * v for k, v in cert.f.items()}
        out.append(dmw.ArbitrageCertificate(f0, cert.node, cert.exact))
    return out


@experiment("dmw-random-trees", 1.0, 1, 1, "tree solver vs a global LP oracle", n_trees=200, max_levels=3, max_children=3)
def _dmw_trees(rc: RunConfig) -> Report:
    r = Report(rc.experiment)
    p = rc.params
    rng = np.random.default_rng(rc.seed)
    rows = []
    agree = verified = rejected = True
    for i in range(p["n_trees"]):
        tree = dmw.random_tree(rng, p["max_levels"], p["max_children"])
        cert = dmw.solve_tree(tree)
        oracle = lp_oracle_has_arbitrage(tree)
        is_arb = isinstance(cert, dmw.ArbitrageCertificate)
        ok = dmw.verify_certificate(tree, cert)
        bad = [dmw.verify_certificate(tree, c) for c in perturbed(cert)]
        agree &= is_arb == oracle
        verified &= ok
        rejected &= not any(bad)
        rows.append({"tree": i, "nodes": tree.n_nodes, "solver": "arbitrage" if is_arb else "martingale",
                     "oracle": "arbitrage" if oracle else "martingale", "verified": ok, "perturbed_rejected": not any(bad)})
    r.table("trees", ["tree", "nodes", "solver", "oracle", "verified", "perturbed_rejected"], rows)
    r.checks["matches_oracle"] = bool(agree)
    r.checks["certificates_verify"] = bool(verified)
    r.checks["perturbations_rejected"] = bool(rejected)
    r.summary["arbitrage_fraction"] = sum(row["solver"] == "arbitrage" for row in rows) / len(rows)
    return r


@experiment("corollary4-girsanov", 1.0, 256, 10000, "Girsanov density removes a constant drift from fBm", H=0.7, mu=0.5)
def _girsanov(rc: RunConfig) -> Report:
    r = Report(rc.experiment)
    H, mu = rc.params["H"], rc.params["mu"]
    X, B = frackernel.kernel_fbm(H, rc.grid, rc.seed, n_paths=rc.n_paths, return_driver=True)
    d0 = frackernel.girsanov_density(0.0, B, H)
    d = frackernel.girsanov_density(mu, B, H)
    lam = d.Lam[:, -1]
    y = X.values[:, -1] + mu * rc.grid.T
    m, se = frackernel.weighted_mean_se(y, lam)
    lam_se = float(lam.std(ddof=1) / math.sqrt(lam.size))
    r.table("density", ["quantity", "value"], [
        {"quantity": "C_H", "value": frackernel.calibrated_constant(H)},
        {"quantity": "mean_Lambda_T", "value": float(lam.mean())},
        {"quantity": "se_Lambda_T", "value": lam_se},
        {"quantity": "raw_mean_Y_T", "value": float(y.mean())},
        {"quantity": "weighted_mean_Y_T", "value": m},
        {"quantity": "weighted_se", "value": se},
        {"quantity": "int_a2", "value": float((d.a[0] ** 2).sum() * rc.grid.dt)},
    ])
    r.checks["zero_drift_gives_one"] = bool(np.all(d0.Lam == 1.0))
    r.checks["mean_Lambda_in_band"] = bool(0.95 <= lam.mean() <= 1.05)
    r.checks["drift_removed_4se"] = _within(m / se)
    r.checks["Lambda_positive"] = bool(np.all(d.Lam > 0) and np.all(d.Lam[:, 0] == 1))
    r.path_series("Lambda_path", rc.grid.times, d.Lam[0], "Lambda")
    return r


def ladder_strategy(levels, bounds, exit_t: float) -> st.SimpleStrategy:
    legs = tuple(st.Leg(st.Truncate(st.HittingLevel(lv, "up" if lv >= 0 else "down"), b), st.Const((-1.0) ** k))
                 for k, (lv, b) in enumerate(zip(levels, bounds)))
    return st.SimpleStrategy(legs, st.Deterministic(exit_t))


@experiment("lemma7-projection", 1.0, 512, 10000, "projection of a hitting-time ladder onto CC", delta0=0.1, n_rungs=4, rung=0.1)
def _projection(rc: RunConfig) -> Report:
    r = Report(rc.experiment)
    p = rc.params
    k = p["n_rungs"]
    levels = [p["rung"] * (i + 1) for i in range(k)]
    bounds = [0.3 + 0.15 * i for i in range(k)]
    strat = ladder_strategy(levels, bounds, rc.grid.T)
    d = procgen.simulate(ProcessSpec("brownian"), rc.grid, rc.n_paths, rc.seed)
    ctx = st.Context(d, rc.grid)
    res = hedge.project_to_cc(strat, p["delta0"], ctx)
    orig = st.gains(strat, ctx).total
    proj = res.projected.gains(d["X"])
    differ = np.abs(orig - proj) > 1e-12  # merged legs reorder the float sums
    h_orig = hedge.PathwiseStrategy.from_strategy(strat, ctx).holdings()
    sup = np.abs(h_orig - res.projected.holdings()).max(axis=1)
    r.table("projection", ["quantity", "value"], [
        {"quantity": "violating_fraction", "value": res.p},
        {"quantity": "gains_differ_fraction", "value": float(differ.mean())},
        {"quantity": "holdings_differ_fraction", "value": float((sup > 0).mean())},
        {"quantity": "projected_spacing_ok_fraction", "value": float(res.projected.spacing_ok().mean())},
    ])
    r.checks["projected_cc_all_paths"] = bool(res.projected.spacing_ok().all())
    r.checks["gains_differ_iff_violation"] = bool(np.array_equal(differ, res.violating))
    r.checks["holdings_differ_iff_violation"] = bool(np.array_equal(sup > 0, res.violating))
    return r


@experiment("theorem9-hedging", 1.0, 256, 20000, "CC call hedging error shrinks with h", K=0.2, hs=[0.0625, 0.015625, 0.00390625], model="brownian", sigma=1.0, S0=0.0)
def _hedging(rc: RunConfig) -> Report:
    r = Report(rc.experiment)
    p = rc.params
    model = hedge.Model(p["model"], p["sigma"], p["S0"])
    payoff = hedge.Payoff("call", p["K"])
    reps = [hedge.cc_rebalance_hedge(payoff, model, h, rc.grid, rc.n_paths, rc.seed) for h in p["hs"]]
    r.table("hedging", list(reps[0].to_csv_row()), [x.to_csv_row() for x in reps])
    rms = [x.rms for x in reps]
    inversions = sum(b > a for a, b in zip(rms[:-1], rms[1:]))
    r.checks["trend_at_most_one_inversion"] = inversions <= 1
    r.checks["finest_below_coarsest"] = bool(rms[-1] < rms[0])
    r.summary["rms"] = rms
    return r


@experiment("theorem5-search", 1.0, 256, 20000, "arbitrage search on fBm plus bounded V flags nothing",
            H=0.7, h=0.1, V_bound=0.1, V_amplitude=0.1, V_freq=1.0, lengths=[0.1, 0.25, 0.5, 1.0], levels=[0.2, -0.2])
def _negative_control(rc: RunConfig) -> Report:
    r = Report(rc.experiment)
    p = rc.params
    spec = ProcessSpec("fbm", H=p["H"], V=_spec_v(p))
    fam = detect.interval_family(rc.grid, p["h"], p["lengths"], levels=p["levels"])
    res = detect.arbitrage_search(spec, fam, p["h"], rc.n_paths, grid=rc.grid, seed=rc.seed, conf=rc.confidence)
    r.table("search", ["candidate", "n_pos", "n_neg", "n_zero", "lb_pos", "lb_neg", "class", "mean", "mean_lcb", "flagged"],
            [c.row() for c in res.candidates])
    r.checks["no_candidate_flagged"] = not res.arbitrage_found
    r.summary["best_candidate"] = res.best.candidate
    return r
