"""Command line runner: ``kahlerlab run --config exp.yaml`` and ``kahlerlab report``.

Exit codes: 0 success, 1 usage or configuration error, 2 failed invariant.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

import numpy as np
import sympy as sp
import yaml

from . import __version__
from .asymptotics import LAPLACE_FIXTURES, expansion_check, laplace_convergence
from .bergman import WeightedSpace, gram_oracle, kernel_eval, measure_density
from .errors import ConfigInvalid, InsufficientData, InvariantFailed, KahlerLabError, MissingManifest
from .geometry import S, SymbolicFunction, manufacture_instance, poincare_instance
from .iteration import DkSchedule, iterate, rate_fit, standard_grid
from .numerics import loglog_slope
from .variation import DiscFamily, ScanGrid, fiber_uniform_bound_check, psh_scan, radius_profile

log = logging.getLogger("kahlerlab")

EXPERIMENTS = ("iterate", "expansion", "laplace", "variation", "oracle-dump")

# every accepted key with its default; nested dicts are sections
DEFAULTS = {
    "experiment": None,
    "seed": 20240601,
    "output_dir": None,
    "record_timings": False,
    "instance": {"kind": "poincare", "R": 1.0, "perturbation": []},
    "schedule": {"kind": "kahler_einstein", "n": 1, "c_conv": math.pi},
    "start": {"kind": "exact", "value": 0.0, "coefficients": []},
    "numeric": {"k0": 2, "k_max": 30, "grid_points": 512, "tolerance": 1e-9},
    "analysis": {"model": "inverse_k", "k_range": None, "min_order": 0.8},
    "expansion": {"k_list": [8, 16, 32, 48], "points": [0.0, 0.3, 0.6, 0.9]},
    "laplace": {"fixtures": list(LAPLACE_FIXTURES), "lambdas": [20, 40, 80, 160],
                "slope_window": 0.2},
    "variation": {"profile": "shrinking", "scale": 1.0, "potential": "ke_glued", "expected": "yes",
                  "n_t": 9, "n_z": 9, "t_max": 0.6, "tol": 1e-6},
    "oracle": {"k": 3, "J": 64, "gram_J": 32, "gram_points": [0.0, 0.25, 0.5]},
}


def _merge(defaults: dict, given: dict, where: str = "") -> dict:
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigInvalid(f"unknown key(s) {unknown} in {where or 'top level'}")
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if isinstance(defaults[key], dict):
            if not isinstance(val, dict):
                raise ConfigInvalid(f"{where}{key} must be a mapping")
            out[key] = _merge(defaults[key], val, f"{where}{key}.")
        else:
            out[key] = val
    return out


def load_config(path, tol_override: float | None = None) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a mapping")
    cfg = _merge(DEFAULTS, raw)
    if tol_override is not None:
        cfg["numeric"]["tolerance"] = tol_override
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigInvalid(f"experiment must be one of {EXPERIMENTS}, got {cfg['experiment']!r}")
    num = cfg["numeric"]
    try:
        k0, k_max = int(num["k0"]), int(num["k_max"])
        positive = [float(num["tolerance"]), float(cfg["instance"]["R"]),
                    float(cfg["schedule"]["c_conv"]), float(cfg["variation"]["tol"])]
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"numeric field has the wrong type: {exc}") from exc
    if k0 < 2:
        raise ConfigInvalid(f"k0 = {k0}: the iteration starts at k0 >= 2, since at k = 1 the "
                            f"weight exponent k - 1 vanishes and the first step is degenerate")
    if k_max < k0:
        raise ConfigInvalid("k_max must be >= k0")
    if any(not v > 0 for v in positive):
        raise ConfigInvalid("tolerances, R and c_conv must be positive")
    if cfg["instance"]["kind"] not in ("poincare", "manufactured"):
        raise ConfigInvalid(f"unknown instance kind {cfg['instance']['kind']!r}")
    if cfg["schedule"]["kind"] not in ("generic", "kahler_einstein"):
        raise ConfigInvalid(f"unknown schedule kind {cfg['schedule']['kind']!r}")
    if cfg["start"]["kind"] not in ("exact", "shift", "sine", "polynomial"):
        raise ConfigInvalid(f"unknown start kind {cfg['start']['kind']!r}")
    if cfg["analysis"]["model"] not in ("inverse_k", "logk_over_k"):
        raise ConfigInvalid(f"unknown rate model {cfg['analysis']['model']!r}")
    unknown = sorted(set(cfg["laplace"]["fixtures"]) - set(LAPLACE_FIXTURES))
    if unknown:
        raise ConfigInvalid(f"unknown laplace fixture(s) {unknown}")
    var = cfg["variation"]
    if var["profile"] not in ("shrinking", "growing", "constant"):
        raise ConfigInvalid(f"unknown radius profile {var['profile']!r}")
    if var["potential"] not in ("ke_glued", "bergman_log") or var["expected"] not in ("yes", "no", "boundary"):
        raise ConfigInvalid("variation.potential or variation.expected is invalid")
    if int(cfg["oracle"]["gram_J"]) > 64:
        raise ConfigInvalid("oracle.gram_J must be <= 64")


# -- builders ---------------------------------------------------------------

def build_instance(spec: dict):
    base = poincare_instance(float(spec["R"]))
    if spec["kind"] == "poincare":
        return base
    coeffs = [float(c) for c in spec["perturbation"]]
    if not coeffs:
        raise ConfigInvalid("a manufactured instance needs perturbation coefficients")
    # w = s (s_max - s) sum_i c_i s^i vanishes at both ends of [0, s_max]
    s_max = base.s_max
    expr = S * (s_max - S) * sum(sp.nsimplify(c) * S ** i for i, c in enumerate(coeffs))
    return manufacture_instance(SymbolicFunction(sp.expand(expr), f"w{coeffs}"), base)


def build_schedule(spec: dict) -> DkSchedule:
    return DkSchedule(spec["kind"], int(spec["n"]), float(spec["c_conv"]))


def build_start(spec: dict, instance):
    phi = instance.phi_inf
    kind = spec["kind"]
    if kind == "exact":
        return phi
    if kind == "shift":
        return phi.shifted(float(spec["value"]))
    if kind == "sine":
        w = float(spec["value"]) * sp.sin(sp.pi * S / instance.s_max)
        return phi.plus(SymbolicFunction(w, f"{spec['value']} sin(pi s)"))
    coeffs = [float(c) for c in spec["coefficients"]]
    w = sum(sp.nsimplify(c) * S ** i for i, c in enumerate(coeffs))
    return phi.plus(SymbolicFunction(w, f"poly{coeffs}"))


# -- experiments ------------------------------------------------------------

def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def run_iterate(cfg, threads):
    instance = build_instance(cfg["instance"])
    schedule = build_schedule(cfg["schedule"])
    start = build_start(cfg["start"], instance)
    num = cfg["numeric"]
    tol = float(num["tolerance"])
    grid = standard_grid(instance, int(num["grid_points"]))
    trace = iterate(start, instance, schedule, int(num["k0"]), int(num["k_max"]), grid,
                    callback=lambda r: log.info("k=%d e_k=%.3e eps_k=%.3e J=%d", r.k, r.sup_error,
                                                r.eps_k, r.truncation_J))
    files = {"trace.csv": trace.to_csv(timings=cfg["record_timings"])}
    slack = trace.recurrence_slack()
    checks = {"recurrence_bound": bool(slack.size == 0 or slack.min() >= -tol),
              "finite": bool(np.all(np.isfinite(trace.errors)))}
    if cfg["start"]["kind"] == "exact" and instance.kind == "kahler_einstein" and schedule.kind == "kahler_einstein":
        checks["fixed_point"] = bool(np.max(trace.errors) <= tol)
    summary = {"min_recurrence_slack": float(slack.min()) if slack.size else None,
               "final_error": float(trace.errors[-1]), "steps": len(trace.records),
               "timings": [r.seconds for r in trace.records]}
    k_range = cfg["analysis"]["k_range"]
    try:
        C, alpha, rms = rate_fit(trace, model=cfg["analysis"]["model"],
                                 k_range=tuple(k_range) if k_range else None)
        summary["rate_fit"] = {"model": cfg["analysis"]["model"], "C": C, "alpha": alpha, "rms": rms}
    except InsufficientData as exc:
        summary["rate_fit"] = {"model": cfg["analysis"]["model"], "skipped": str(exc)}
    summary["schedule"] = cfg["schedule"]["kind"]
    return files, summary, checks


def run_expansion(cfg, threads):
    instance = build_instance(cfg["instance"])
    c_conv = float(cfg["schedule"]["c_conv"])
    ks = [int(k) for k in cfg["expansion"]["k_list"]]
    points = [float(p) for p in cfg["expansion"]["points"]]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda k: expansion_check(instance, [k], points, c_conv), ks))
    report = expansion_check(instance, [], points, c_conv)
    for part in parts:
        report.records.extend(part.records)
    ksa, res = report.max_residual_by_k()
    if len(ksa) >= 2 and np.all(res > 0):
        C, slope, _ = loglog_slope(ksa, res)
        report.fit_order, report.fit_constant = -slope, C
    summary = report.summary()
    tol = float(cfg["numeric"]["tolerance"])
    if instance.kind == "kahler_einstein":
        checks = {"exact_second_order": bool(np.max(res) <= tol)}
    else:
        checks = {"decay_order": bool(report.fit_order >= float(cfg["analysis"]["min_order"]))}
    return {"expansion.csv": report.to_csv()}, summary, checks


def run_laplace(cfg, threads):
    window = float(cfg["laplace"]["slope_window"])
    rows, summary, checks = [], {}, {}
    for name in cfg["laplace"]["fixtures"]:
        f, u, box, x0 = LAPLACE_FIXTURES[name]
        res = laplace_convergence(f, u, box, x0, [float(x) for x in cfg["laplace"]["lambdas"]])
        for r in res["rows"]:
            rows.append([name, r["lambda"], r["oracle"], r["with_l1"], r["without_l1"], r["err_l1"], r["err_l0"]])
        summary[name] = {"l1": res["l1"], "slope_l1": res["slope_l1"], "slope_l0": res["slope_l0"]}
        checks[f"{name}_slope_l1"] = bool(abs(res["slope_l1"] - 2) <= window)
        checks[f"{name}_slope_l0"] = bool(abs(res["slope_l0"] - 1) <= window)
    text = _csv_text(["fixture", "lambda", "oracle", "expansion_l1", "expansion_l0", "rel_err_l1", "rel_err_l0"], rows)
    return {"laplace.csv": text}, summary, checks


def run_variation(cfg, threads):
    var = cfg["variation"]
    family = DiscFamily(radius_profile(var["profile"], float(var["scale"])), var["potential"],
                        var["expected"], label=f"{var['profile']}/{var['potential']}")
    report = psh_scan(family, ScanGrid(int(var["n_t"]), int(var["n_z"]), float(var["t_max"])),
                      float(var["tol"]))
    summary = report.summary()
    files = {"levi.csv": report.to_csv(), "verdict.json": report.to_json() + "\n"}
    expected = {"yes": "PSH_CONFIRMED", "no": "VIOLATION"}.get(var["expected"])
    checks = {"verdict": expected is None or report.verdict == expected}
    if var["potential"] == "ke_glued":
        ts = np.linspace(-var["t_max"], var["t_max"], int(var["n_t"]))
        bound = fiber_uniform_bound_check(family, [complex(a, b) for a in ts for b in ts])
        summary["fiber_bound"] = bound["bound"]
        summary["fiber_max_oscillation"] = bound["max_oscillation"]
        checks["fiber_constancy"] = bool(bound["max_oscillation"] <= 1e-10)
    return files, summary, checks


def poincare_moment_closed_form(k: int, j: int, R: float = 1.0) -> float:
    """``m_j = pi (2 R^2)^(1-k) R^(2(j+2k-1)) j! (2k-2)! / (j+2k-1)!`` in exact arithmetic."""
    beta = Fraction(math.factorial(j) * math.factorial(2 * k - 2), math.factorial(j + 2 * k - 1))
    return math.pi * float(beta * Fraction(1, 2 ** (k - 1))) * R ** (2 * (j + 2 * k - 1)) / R ** (2 * (k - 1))


def run_oracle_dump(cfg, threads):
    instance = build_instance(cfg["instance"])
    if instance.kind != "kahler_einstein":
        raise ConfigInvalid("oracle-dump needs the poincare instance")
    R = float(cfg["instance"]["R"])
    k, J = int(cfg["oracle"]["k"]), int(cfg["oracle"]["J"])
    tol = 1e-11
    space = WeightedSpace.build(instance.phi_inf, instance, k, J=J)
    rows, worst = [], 0.0
    for j in range(J + 1):
        exact = poincare_moment_closed_form(k, j, R)
        got = float(np.exp(space.moments.log_m[j]))
        err = abs(got - exact) / exact
        worst = max(worst, err)
        rows.append([j, got, exact, err])
    files = {"moments.csv": _csv_text(["j", "m_j", "closed_form", "rel_err"], rows)}
    gJ = int(cfg["oracle"]["gram_J"])
    oracle = gram_oracle(gJ, lambda x, y: measure_density(instance.phi_inf, instance, k, x * x + y * y),
                         instance.s_max)
    small = WeightedSpace.build(instance.phi_inf, instance, k, J=gJ)
    grows, gworst = [], 0.0
    for s in cfg["oracle"]["gram_points"]:
        a, b = oracle(math.sqrt(s)), kernel_eval(small.moments, float(s), check_tail=False)
        gworst = max(gworst, abs(a - b) / b)
        grows.append([float(s), a, b, abs(a - b) / b])
    files["gram.csv"] = _csv_text(["s", "gram_kernel", "moment_kernel", "rel_err"], grows)
    summary = {"max_moment_rel_err": worst, "max_gram_rel_err": gworst, "gram_cond": float(oracle.cond)}
    checks = {"beta_closed_form": bool(worst <= tol), "gram_equivalence": bool(gworst <= 1e-10)}
    return files, summary, checks


RUNNERS = {"iterate": run_iterate, "expansion": run_expansion, "laplace": run_laplace,
           "variation": run_variation, "oracle-dump": run_oracle_dump}


# -- manifests --------------------------------------------------------------

def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def execute(cfg: dict, out_dir: Path, threads: int = 1) -> dict:
    """Run one experiment into ``out_dir``; returns the manifest."""
    out_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    files, summary, checks = RUNNERS[cfg["experiment"]](cfg, max(1, int(threads)))
    # wall-clock data lives only in the manifest so that output files are reproducible
    timings = summary.pop("timings", None)
    for name, text in files.items():
        with open(out_dir / name, "w", newline="") as fh:
            fh.write(text)
    summary_text = json.dumps(_jsonable({"summary": summary, "checks": checks}), indent=2, sort_keys=True)
    (out_dir / "summary.json").write_text(summary_text + "\n")
    names = sorted(list(files) + ["summary.json"])
    manifest = {
        "tool": "kahlerlab", "version": __version__,
        "config": cfg, "started": started, "finished": datetime.now(timezone.utc).isoformat(),
        "seconds": time.perf_counter() - t0, "step_seconds": timings, "threads": threads,
        "experiment": cfg["experiment"], "summary": summary, "checks": checks,
        "passed": all(checks.values()),
        "failed_checks": sorted(k for k, v in checks.items() if not v),
        "files": [{"name": n, "sha256": sha256(out_dir / n)} for n in names],
    }
    (out_dir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(run_dir) -> dict:
    path = Path(run_dir) / "manifest.json"
    try:
        data = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise MissingManifest(f"{path}: {exc}") from exc
    if not isinstance(data, dict) or not {"experiment", "checks", "passed", "summary"} <= set(data):
        raise MissingManifest(f"{path}: not a run manifest")
    return data


def consolidate(run_dirs) -> list[dict]:
    rows = []
    for d in sorted(str(p) for p in run_dirs):
        m = read_manifest(d)
        fit = m["summary"].get("rate_fit", {}) if isinstance(m["summary"], dict) else {}
        rows.append({"run": d, "experiment": m["experiment"],
                     "schedule": m.get("config", {}).get("schedule", {}).get("kind"),
                     "model": fit.get("model"), "alpha": fit.get("alpha"), "C": fit.get("C"),
                     "passed": m["passed"], "failed_checks": ";".join(m.get("failed_checks", []))})
    return rows


# -- entry point ------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kahlerlab", description="Bergman-kernel iteration experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="run one experiment from a YAML config")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--out-dir", type=Path, default=None)
    r.add_argument("--tol-override", type=float, default=None)
    r.add_argument("--threads", type=int, default=1)
    rp = sub.add_parser("report", help="merge manifests of several run directories")
    rp.add_argument("runs", nargs="*", type=Path)
    rp.add_argument("--out-dir", type=Path, default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.cmd == "run":
            cfg = load_config(args.config, args.tol_override)
            if args.threads < 1:
                raise ConfigInvalid("--threads must be >= 1")
            out = args.out_dir or (Path(cfg["output_dir"]) if cfg["output_dir"] else None)
            if out is None:
                raise ConfigInvalid("no output directory: pass --out-dir or set output_dir")
            manifest = execute(cfg, out, args.threads)
            if not manifest["passed"]:
                raise InvariantFailed(f"failed checks: {', '.join(manifest['failed_checks'])}")
            print(f"{cfg['experiment']}: all {len(manifest['checks'])} checks passed -> {out}")
            return 0
        rows = consolidate(args.runs)
        text = json.dumps(_jsonable(rows), indent=2)
        if args.out_dir is not None:
            args.out_dir.mkdir(parents=True, exist_ok=True)
            (args.out_dir / "report.json").write_text(text + "\n")
            header = ["run", "experiment", "schedule", "model", "alpha", "C", "passed", "failed_checks"]
            (args.out_dir / "report.csv").write_text(
                _csv_text(header, [[r[h] if r[h] is not None else "" for h in header] for r in rows]))
        print(text)
        return 0
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except InvariantFailed as exc:
        print(f"invariant failed: {exc}", file=sys.stderr)
        return 2
    except MissingManifest as exc:
        print(f"missing manifest: {exc}", file=sys.stderr)
        return 1
    except KahlerLabError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
