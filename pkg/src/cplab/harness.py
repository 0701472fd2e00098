"""Survey orchestration and deterministic serialisation.

A survey samples ``n_instances`` Gaussian instances, classifies all ``2^m``
cells of each, traces every bounded strictly feasible cell, integrates the
three curvatures, cross-checks them with Crofton estimates and compares the
results against the closed-form bounds. Per-cell failures are recorded in an
exclusion ledger and never abort the run.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .arrangement import enumerate_cells
from .bezout import crossing_bounds
from .centralpath import TailFlag, acceleration_residual, trace_path, velocity_residual
from .core import DEFAULT_TOLERANCES, CplabError, LpInstance, Tolerances, make_rng, sample_instance
from .curvature import (
    FLAVORS,
    Flavor,
    HyperplaneSample,
    crofton_length,
    gauss_curve,
    gauss_matrix,
    random_normals,
    refine_crossing,
    sign_changes,
    total_curvature,
    transversality_residual,
)

BOUND_SLACK = 1e-2
MAX_M = 20
EMIT_CHOICES = ("json", "csv", "plotdata")

# RNG stream tags below the instance index
_CROFTON_STREAM = 1
_CROSSING_STREAM = 2


@dataclass(frozen=True)
class ExperimentConfig:
    m: int
    n: int
    n_instances: int = 1
    seed: int = 0
    tolerances: Tolerances = DEFAULT_TOLERANCES
    n_hyperplanes: int = 1000
    flavors: tuple = ("PD", "P", "D")
    output_dir: str = "."
    emit: tuple = ("json",)
    n_refine: int = 2  # hyperplanes per flavor and instance whose crossings are refined

    def __post_init__(self):
        object.__setattr__(self, "flavors", tuple(Flavor(str(f).upper()).value for f in self.flavors))
        object.__setattr__(self, "emit", tuple(self.emit))
        self.validate()

    def validate(self):
        if not (isinstance(self.m, int) and isinstance(self.n, int)) or not self.m > self.n >= 1:
            raise ValueError(f"need integers m > n >= 1, got m={self.m}, n={self.n}")
        if self.m > MAX_M:
            raise ValueError(f"m={self.m} exceeds the limit {MAX_M}")
        if self.n_instances < 1:
            raise ValueError("n_instances must be at least 1")
        if self.n_hyperplanes < 2:
            raise ValueError("n_hyperplanes must be at least 2")
        if self.n_refine < 0:
            raise ValueError("n_refine must be non-negative")
        bad = set(self.emit) - set(EMIT_CHOICES)
        if bad:
            raise ValueError(f"unknown emit format(s): {sorted(bad)}")

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "n_instances": self.n_instances,
            "seed": self.seed,
            "tolerances": self.tolerances.as_dict(),
            "n_hyperplanes": self.n_hyperplanes,
            "flavors": list(self.flavors),
            "output_dir": str(self.output_dir),
            "emit": list(self.emit),
            "n_refine": self.n_refine,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        if "tolerances" in d and not isinstance(d["tolerances"], Tolerances):
            d["tolerances"] = Tolerances(**d["tolerances"])
        for key in ("flavors", "emit"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class SurveyReport:
    config: ExperimentConfig
    per_instance: List[dict]
    aggregate: dict

    @property
    def bound_violations(self) -> int:
        return self.aggregate["bound_violations"]

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "aggregate": self.aggregate, "per_instance": self.per_instance}


# --------------------------------------------------------------------------
# per instance


def curvature_bounds(m: int, n: int) -> Dict[str, dict]:
    """Average and summed curvature bounds, plus integer crossing bounds, per flavor."""
    b_pd, b_p, b_d, _ = crossing_bounds(m, n)
    q = comb(m - 1, n)
    avg = {"PD": 2 * math.pi * n, "P": 2 * math.pi * (n - 1), "D": 2 * math.pi * n}
    cross = {"PD": b_pd, "P": b_p, "D": b_d}
    return {f: {"average": avg[f], "sum": avg[f] * q, "crossings": cross[f]} for f in avg}


def _cell_record(cell, trace=None, curv=None, crofton=None, residuals=None) -> dict:
    rec = {
        "eps": str(cell.eps),
        "primal_status": cell.primal_status.value,
        "dual_strict": cell.dual_strict,
        "jointly_strict": cell.jointly_strict,
        "traced": trace is not None,
        "excluded": False,
        "reason": None,
    }
    if trace is not None:
        rec.update({
            "n_points": len(trace.points),
            "mu_lo": trace.mu_lo,
            "mu_hi": trace.mu_hi,
            "tail_flags": sorted(f.value for f in trace.truncation_flags),
            "max_cond": trace.max_cond,
            "tail_movement_lo": trace.tail_movement[0],
            "tail_movement_hi": trace.tail_movement[1],
        })
        rec.update(residuals)
    if curv is not None:
        rec.update({
            "K_pd": curv.K_pd,
            "K_p": curv.K_p,
            "K_d": curv.K_d,
            "quad_error_estimate": curv.quad_error_estimate,
            "n_samples": curv.n_samples,
        })
    if crofton is not None:
        rec["crofton"] = {f: {"mean_crossings": c.mean_crossings, "length_estimate": c.length_estimate,
                              "std_error": c.std_error} for f, c in crofton.items()}
    return rec


def _path_residuals(trace) -> dict:
    inst = trace.inst
    return {
        "max_residual_path": max(p.residual for p in trace.points),
        "max_residual_velocity": max(velocity_residual(inst, p) for p in trace.points),
        "max_residual_acceleration": max(acceleration_residual(inst, p) for p in trace.points),
    }


def analyze_instance(inst: LpInstance, config: ExperimentConfig, index: int) -> dict:
    """Full pipeline for one instance; returns a JSON-ready record."""
    tol = config.tolerances
    m, n = inst.m, inst.n
    summary = enumerate_cells(inst, tol)
    bounds = curvature_bounds(m, n)
    cells, ledger, curves = [], [], []
    for ci, cell in enumerate(summary.bounded_cells()):
        try:
            trace = trace_path(inst, cell.eps, tol, witness=cell.witness_x)
            curv = total_curvature(trace, tol.quad_tol)
            samples = gauss_curve(trace)
        except CplabError as exc:
            rec = _cell_record(cell)
            rec.update(excluded=True, reason=f"trace_failed:{type(exc).__name__}")
            ledger.append({"eps": rec["eps"], "reason": rec["reason"]})
            cells.append(rec)
            continue
        rng = make_rng(config.seed, index, _CROFTON_STREAM, ci)
        crofton = {f: crofton_length(samples, f, config.n_hyperplanes, rng) for f in config.flavors}
        rec = _cell_record(cell, trace, curv, crofton, _path_residuals(trace))
        reason = None
        if trace.max_cond > tol.cond_cap:
            reason = "ill_conditioned"
        elif trace.capped:
            reason = "+".join(sorted(f.value for f in trace.truncation_flags
                                     if f in (TailFlag.LO_CAPPED, TailFlag.HI_CAPPED)))
        if reason is not None:
            rec.update(excluded=True, reason=reason)
            ledger.append({"eps": rec["eps"], "reason": reason})
        cells.append(rec)
        curves.append((trace, samples))

    # sums cover every traced cell: a truncated trace only underestimates its curvature
    traced = [c for c in cells if c["traced"]]
    used = [c for c in traced if not c["excluded"]]
    key = {"PD": "K_pd", "P": "K_p", "D": "K_d"}
    sums, averages, margins, violations = {}, {}, {}, []
    for f in config.flavors:
        s = float(sum(c[key[f]] for c in traced))
        avg = float(np.mean([c[key[f]] for c in used])) if used else None
        sums[f] = s
        averages[f] = avg
        margins[f] = {
            "sum": bounds[f]["sum"] - s,
            "average": None if avg is None else bounds[f]["average"] - avg,
        }
        if s > bounds[f]["sum"] + BOUND_SLACK:
            violations.append({"kind": "sum", "flavor": f})
        if avg is not None and not summary.flagged and avg > bounds[f]["average"] + BOUND_SLACK:
            violations.append({"kind": "average", "flavor": f})

    crossings = {}
    for f in config.flavors:
        fl = Flavor(f)
        mats = [gauss_matrix(smp, fl) for _, smp in curves]
        dim = {"PD": n + 2 * m, "P": n + m, "D": m}[f]
        rng = make_rng(config.seed, index, _CROSSING_STREAM, FLAVORS.index(fl))
        H = random_normals(rng, config.n_hyperplanes, dim, mats)
        total = np.zeros(len(H), dtype=np.int64)
        for M in mats:
            total += sign_changes(M, H)
        worst = int(total.max()) if len(total) else 0
        hist = np.bincount(total).tolist() if len(total) else []
        refine = _refine(curves, fl, H[: config.n_refine], m, n)
        crossings[f] = {"max": worst, "bound": bounds[f]["crossings"], "histogram": hist, **refine}
        if worst > bounds[f]["crossings"]:
            violations.append({"kind": "crossings", "flavor": f})

    return {
        "index": index,
        "seed": config.seed,
        "instance": inst.to_dict(),
        "arrangement": {
            "bounded_strict_count": summary.bounded_strict_count,
            "bounded_expected": summary.bounded_expected,
            "joint_count": summary.joint_count,
            "joint_expected": summary.joint_expected,
            "degenerate_count": summary.degenerate_count,
            "flagged_cells": summary.flagged_count,
            "flagged": summary.flagged,
        },
        "cells": cells,
        "excluded": ledger,
        "denominator": len(used),
        "sums": sums,
        "averages": averages,
        "margins": margins,
        "crossings": crossings,
        "violations": violations,
    }


def _refine(curves, flavor, H, m, n) -> dict:
    """Refine every crossing of the given normals; report the worst residual and singular value."""
    worst_res, min_sv, count = 0.0, math.inf, 0
    for h in H:
        hs = HyperplaneSample.from_normal(h, flavor, m, n)
        for trace, samples in curves:
            G = gauss_matrix(samples, flavor)
            P = G @ h
            for k in np.flatnonzero(np.signbit(P[1:]) != np.signbit(P[:-1])):
                try:
                    p = refine_crossing(trace, flavor, hs, int(k))
                    res, sv = transversality_residual(trace.inst, p, hs)
                except (CplabError, ValueError):
                    res, sv = math.inf, 0.0
                worst_res = max(worst_res, res)
                min_sv = min(min_sv, sv)
                count += 1
    return {
        "refined": count,
        "max_phi_residual": worst_res if count else None,
        "min_singular_value": min_sv if count else None,
    }


def _instance_job(args):
    config, index = args
    inst = sample_instance(config.m, config.n, config.seed, index, rank_tol=config.tolerances.rank_tol)
    return analyze_instance(inst, config, index)


def worker_count() -> int:
    cap = os.environ.get("CPLAB_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


def run_survey(config: ExperimentConfig, workers: Optional[int] = None) -> SurveyReport:
    """Run the full pipeline on every instance; results are ordered by instance index."""
    workers = worker_count() if workers is None else max(1, int(workers))
    jobs = [(config, k) for k in range(config.n_instances)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            per = list(ex.map(_instance_job, jobs))
    else:
        per = [_instance_job(j) for j in jobs]
    return SurveyReport(config, per, aggregate(config, per))


def _crofton_ok(cell, f) -> Optional[float]:
    """``|pi mean - K| / (3 se + 0.02 K)``; at most 1 means agreement."""
    c = cell.get("crofton", {}).get(f)
    if c is None:
        return None
    K = cell[{"PD": "K_pd", "P": "K_p", "D": "K_d"}[f]]
    allow = 3.0 * c["std_error"] + 0.02 * K
    return abs(c["length_estimate"] - K) / allow


def aggregate(config: ExperimentConfig, per: Sequence[dict]) -> dict:
    fl = config.flavors
    avg = {f: [r["averages"][f] for r in per if r["averages"][f] is not None and not r["arrangement"]["flagged"]]
           for f in fl}
    reasons: Dict[str, int] = {}
    for r in per:
        for e in r["excluded"]:
            reasons[e["reason"]] = reasons.get(e["reason"], 0) + 1
    ratios = {f: [] for f in fl}
    for r in per:
        for c in r["cells"]:
            if c["traced"]:
                for f in fl:
                    q = _crofton_ok(c, f)
                    if q is not None:
                        ratios[f].append(q)
    traced = [c for r in per for c in r["cells"] if c["traced"]]

    def _max(key):
        return max((c[key] for c in traced), default=None)

    return {
        "n_instances": len(per),
        "flagged_instances": sum(r["arrangement"]["flagged"] for r in per),
        "bounded_count_mismatches": sum(r["arrangement"]["bounded_strict_count"] != r["arrangement"]["bounded_expected"]
                               for r in per),
        "joint_mismatches": sum(r["arrangement"]["joint_count"] != r["arrangement"]["joint_expected"] for r in per),
        "bound_violations": sum(len(r["violations"]) for r in per),
        "cells_traced": len(traced),
        "cells_excluded": sum(len(r["excluded"]) for r in per),
        "exclusion_reasons": dict(sorted(reasons.items())),
        "average_curvature": {
            f: {"mean": float(np.mean(avg[f])) if avg[f] else None,
                "max": float(np.max(avg[f])) if avg[f] else None,
                "bound": curvature_bounds(config.m, config.n)[f]["average"]}
            for f in fl
        },
        "crofton": {
            f: {"checks": len(ratios[f]), "failures": int(sum(q > 1.0 for q in ratios[f])),
                "worst_ratio": float(max(ratios[f])) if ratios[f] else None}
            for f in fl
        },
        "crossings": {
            f: {"max": max((r["crossings"][f]["max"] for r in per), default=0),
                "bound": curvature_bounds(config.m, config.n)[f]["crossings"],
                "refined": sum(r["crossings"][f]["refined"] for r in per),
                "max_phi_residual": max((r["crossings"][f]["max_phi_residual"] for r in per
                                         if r["crossings"][f]["max_phi_residual"] is not None), default=None)}
            for f in fl
        },
        "max_residuals": {
            "path": _max("max_residual_path"),
            "velocity": _max("max_residual_velocity"),
            "acceleration": _max("max_residual_acceleration"),
        },
    }


# --------------------------------------------------------------------------
# serialisation


def format_float(x: float) -> str:
    """17 significant digits; integral values keep a trailing ``.0``."""
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    if not any(ch in s for ch in ".en"):
        s += ".0"
    return s


def dumps(obj, indent: int = 1) -> str:
    """JSON text with fixed key order (insertion order) and fixed float formatting."""
    out = io.StringIO()
    _dump(obj, out, 0, indent)
    out.write("\n")
    return out.getvalue()


def _dump(obj, out, level, indent):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        out.write(json.dumps(None if obj is None else bool(obj)))
    elif isinstance(obj, (int, np.integer)):
        out.write(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.write(format_float(float(obj)))
    elif isinstance(obj, str):
        out.write(json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _dump(obj.tolist(), out, level, indent)
    elif isinstance(obj, dict):
        if not obj:
            out.write("{}")
            return
        out.write("{\n")
        items = list(obj.items())
        for i, (k, v) in enumerate(items):
            out.write(pad + json.dumps(str(k)) + ": ")
            _dump(v, out, level + 1, indent)
            out.write(",\n" if i < len(items) - 1 else "\n")
        out.write(end + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.write("[]")
            return
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            out.write("[")
            out.write(", ".join(format_float(float(v)) if isinstance(v, (float, np.floating)) else str(int(v))
                                for v in obj))
            out.write("]")
            return
        out.write("[\n")
        for i, v in enumerate(obj):
            out.write(pad)
            _dump(v, out, level + 1, indent)
            out.write(",\n" if i < len(obj) - 1 else "\n")
        out.write(end + "]")
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")


CSV_FIELDS = ("seed", "instance", "eps", "primal_status", "jointly_strict", "traced", "excluded", "reason",
              "n_points", "mu_lo", "mu_hi", "K_pd", "K_p", "K_d", "quad_error_estimate",
              "crofton_pd", "crofton_p", "crofton_d", "crofton_se_pd", "crofton_se_p", "crofton_se_d")


def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format_float(v) if math.isfinite(v) else ""
    return str(v)


def survey_csv(report: SurveyReport) -> str:
    """Tidy CSV with one row per traced or attempted cell."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in report.per_instance:
        for c in r["cells"]:
            cro = c.get("crofton", {})
            row = {
                "seed": r["seed"], "instance": r["index"], **{k: c.get(k) for k in CSV_FIELDS if k in c},
                "crofton_pd": cro.get("PD", {}).get("length_estimate"),
                "crofton_p": cro.get("P", {}).get("length_estimate"),
                "crofton_d": cro.get("D", {}).get("length_estimate"),
                "crofton_se_pd": cro.get("PD", {}).get("std_error"),
                "crofton_se_p": cro.get("P", {}).get("std_error"),
                "crofton_se_d": cro.get("D", {}).get("std_error"),
            }
            w.writerow([_csv_value(row.get(k)) for k in CSV_FIELDS])
    return buf.getvalue()


def plot_data(report_dict: dict) -> Dict[str, str]:
    """Tidy CSV series: curvature per cell and crossing histograms."""
    kbuf = io.StringIO()
    w = csv.writer(kbuf, lineterminator="\n")
    w.writerow(("instance", "cell_index", "eps", "flavor", "K", "excluded"))
    key = {"PD": "K_pd", "P": "K_p", "D": "K_d"}
    for r in report_dict["per_instance"]:
        for ci, c in enumerate(r["cells"]):
            if not c["traced"]:
                continue
            for f in report_dict["config"]["flavors"]:
                w.writerow((r["index"], ci, c["eps"], f, format_float(c[key[f]]), _csv_value(c["excluded"])))
    hbuf = io.StringIO()
    w = csv.writer(hbuf, lineterminator="\n")
    w.writerow(("instance", "flavor", "crossings", "hyperplanes"))
    for r in report_dict["per_instance"]:
        for f, cr in r["crossings"].items():
            for k, cnt in enumerate(cr["histogram"]):
                if cnt:
                    w.writerow((r["index"], f, k, cnt))
    return {"curvature_by_cell.csv": kbuf.getvalue(), "crossing_histogram.csv": hbuf.getvalue()}


def trace_series(trace) -> str:
    """Gauss-curve components against ``ln mu`` as tidy CSV."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("t", "flavor", "component", "value"))
    for smp in gauss_curve(trace):
        t = format_float(math.log(smp.mu))
        for f in FLAVORS:
            for j, v in enumerate(smp.gamma(f)):
                w.writerow((t, f.value, j, format_float(float(v))))
    return buf.getvalue()


def write_survey(report: SurveyReport, out_dir=None) -> List[Path]:
    out = Path(out_dir if out_dir is not None else report.config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    seed = report.config.seed
    if "json" in report.config.emit:
        p = out / f"survey-{seed}.json"
        p.write_text(dumps(report.to_dict()))
        written.append(p)
    if "csv" in report.config.emit:
        p = out / f"survey-{seed}.csv"
        p.write_text(survey_csv(report))
        written.append(p)
    if "plotdata" in report.config.emit:
        for name, text in plot_data(report.to_dict()).items():
            p = out / f"survey-{seed}-{name}"
            p.write_text(text)
            written.append(p)
    return written


def instance_path(out_dir, seed: int, k: int) -> Path:
    return Path(out_dir) / f"instance-{seed}-{k}.json"


def save_instance(inst: LpInstance, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(inst.to_dict()))
    return path


def load_instance(path) -> LpInstance:
    return LpInstance.from_dict(json.loads(Path(path).read_text()))
