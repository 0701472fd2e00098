"""Command-line entry point: ``cplab <subcommand> ...``.

Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 a curvature or
crossing bound was exceeded.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .arrangement import enumerate_cells
from .bezout import bezout_table
from .centralpath import trace_path
from .core import CplabError, DEFAULT_TOLERANCES, LpInstance, SignVector, Tolerances, sample_instance
from .curvature import gauss_curve, total_curvature

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_VIOLATION = 0, 1, 2, 3

_TOL_FLAGS = {
    "newton": "newton_tol",
    "rank": "rank_tol",
    "feas": "feas_margin",
    "quad": "quad_tol",
    "tail": "tail_tol",
    "cond": "cond_cap",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def _add_common(p, instance=True):
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    if instance:
        p.add_argument("--index", type=int, default=0, help="instance index within the seed stream")
        p.add_argument("--instance", type=Path, help="instance JSON file (overrides --m/--n/--seed)")
    for short, _ in _TOL_FLAGS.items():
        p.add_argument(f"--tol-{short}", type=float)
    p.add_argument("--out", type=Path)
    p.add_argument("--format", choices=("json", "csv"), default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="cplab", description="Central-path curvature laboratory.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write Gaussian instance files")
    _add_common(p, instance=False)
    p.add_argument("--instances", type=int, default=1)

    p = sub.add_parser("enumerate", help="classify all sign cells of an instance")
    _add_common(p)

    p = sub.add_parser("trace", help="trace one cell and report its curvature")
    _add_common(p)
    p.add_argument("--eps", required=True, help="sign vector such as +-+-+")

    p = sub.add_parser("curvature", help="curvature of every bounded cell of one instance")
    _add_common(p)

    p = sub.add_parser("bezout", help="Bezout numbers and crossing bounds")
    p.add_argument("--m", type=int, help="single m (default: table up to --m-max)")
    p.add_argument("--n", type=int)
    p.add_argument("--m-max", type=int, default=8)
    p.add_argument("--format", choices=("text", "json", "csv"), default="text")

    p = sub.add_parser("survey", help="seeded multi-instance survey")
    _add_common(p, instance=False)
    p.add_argument("--instances", type=int)
    p.add_argument("--hyperplanes", type=int)
    p.add_argument("--refine", type=int, help="hyperplanes per flavor whose crossings are refined")
    p.add_argument("--emit", nargs="+", choices=harness.EMIT_CHOICES)
    p.add_argument("--config", type=Path, help="JSON configuration; explicit flags take precedence")

    p = sub.add_parser("report", help="render a stored survey")
    p.add_argument("survey", type=Path)
    p.add_argument("--out", type=Path, help="directory for plot-data CSV files")
    p.add_argument("--trace-eps", help="also emit Gauss components vs ln mu for this cell")
    p.add_argument("--trace-index", type=int, default=0, help="instance index for --trace-eps")
    return ap


def _tolerances(args, base: Tolerances = DEFAULT_TOLERANCES) -> Tolerances:
    d = base.as_dict()
    for short, name in _TOL_FLAGS.items():
        v = getattr(args, f"tol_{short.replace('-', '_')}", None)
        if v is not None:
            d[name] = v
    return Tolerances(**d)


def _instance(args, tol):
    if getattr(args, "instance", None) is not None:
        return harness.load_instance(args.instance)
    if args.m is None or args.n is None:
        raise ValueError("give --instance or both --m and --n")
    return sample_instance(args.m, args.n, args.seed or 0, args.index, rank_tol=tol.rank_tol)


def _emit(args, payload: dict, csv_text=None):
    fmt = args.format or "json"
    text = csv_text if (fmt == "csv" and csv_text is not None) else harness.dumps(payload)
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)


def cmd_generate(args):
    tol = _tolerances(args)
    if args.m is None or args.n is None:
        raise ValueError("--m and --n are required")
    seed = args.seed or 0
    out = args.out or Path(".")
    for k in range(args.instances):
        inst = sample_instance(args.m, args.n, seed, k, rank_tol=tol.rank_tol)
        print(harness.save_instance(inst, harness.instance_path(out, seed, k)))
    return EXIT_OK


def cmd_enumerate(args):
    tol = _tolerances(args)
    inst = _instance(args, tol)
    s = enumerate_cells(inst, tol)
    print(f"bounded strict: {s.bounded_strict_count} of {s.n_cells} cells (expected {s.bounded_expected})")
    print(f"jointly strict: {s.joint_count} of {s.n_cells} cells (expected {s.joint_expected})")
    if s.flagged:
        print(f"flagged: {s.degenerate_count} degenerate, {s.flagged_count} cells with a condition flag")
    rows = ["eps,primal_status,dual_strict,jointly_strict,condition_flag"]
    rows += [f"{r.eps},{r.primal_status.value},{r.dual_strict},{r.jointly_strict},{r.condition_flag}"
             for r in s.per_cell]
    _emit(args, s.to_dict(), "\n".join(rows) + "\n")
    return EXIT_OK


def _trace_payload(trace, curv):
    pts = []
    for p, g in zip(trace.points, gauss_curve(trace)):
        pts.append({"mu": p.mu, "x": p.x, "s": p.s, "y": p.y, "xdot": p.xdot, "sdot": p.sdot, "ydot": p.ydot,
                    "gamma_pd": g.gamma_pd, "gamma_p": g.gamma_p, "gamma_d": g.gamma_d})
    return {
        "eps": str(trace.eps),
        "mu_lo": trace.mu_lo,
        "mu_hi": trace.mu_hi,
        "tail_flags": sorted(f.value for f in trace.truncation_flags),
        "curvature": curv.to_dict(),
        "points": pts,
    }


def cmd_trace(args):
    tol = _tolerances(args)
    inst = _instance(args, tol)
    eps = SignVector.parse(args.eps)
    trace = trace_path(inst, eps, tol)
    curv = total_curvature(trace, tol.quad_tol)
    print(f"cell {eps}: {len(trace.points)} points, mu in [{trace.mu_lo:.3e}, {trace.mu_hi:.3e}], "
          f"tails {', '.join(sorted(f.value for f in trace.truncation_flags))}")
    print(f"K_PD {curv.K_pd:.10g}, K_P {curv.K_p:.10g}, K_D {curv.K_d:.10g}")
    csv_text = harness.trace_series(trace)
    _emit(args, _trace_payload(trace, curv), csv_text)
    return EXIT_OK


def cmd_curvature(args):
    tol = _tolerances(args)
    inst = _instance(args, tol)
    cfg = harness.ExperimentConfig(inst.m, inst.n, 1, args.seed or 0, tol, n_hyperplanes=1000, n_refine=0)
    rec = harness.analyze_instance(inst, cfg, args.index)
    print(f"{'eps':<{inst.m + 2}}{'K_PD':>14}{'K_P':>14}{'K_D':>14}  note")
    for c in rec["cells"]:
        if c["traced"]:
            note = c["reason"] or ""
            print(f"{c['eps']:<{inst.m + 2}}{c['K_pd']:>14.8f}{c['K_p']:>14.8f}{c['K_d']:>14.8f}  {note}")
        else:
            print(f"{c['eps']:<{inst.m + 2}}{'':>42}  {c['reason']}")
    bounds = harness.curvature_bounds(inst.m, inst.n)
    for f in ("PD", "P", "D"):
        avg = rec["averages"][f]
        avg_s = "n/a" if avg is None else f"{avg:.8f}"
        print(f"{f:>2}: sum {rec['sums'][f]:.8f} (bound {bounds[f]['sum']:.8f}), "
              f"average {avg_s} over {rec['denominator']} cells (bound {bounds[f]['average']:.8f})")
    _emit(args, rec)
    return EXIT_VIOLATION if rec["violations"] else EXIT_OK


def cmd_bezout(args):
    if args.m is not None:
        ms = [args.m]
        ns = [args.n] if args.n is not None else list(range(1, args.m))
        if args.n is not None and not args.m > args.n >= 1:
            raise ValueError(f"need m > n >= 1, got m={args.m}, n={args.n}")
    else:
        ms = list(range(2, args.m_max + 1))
        ns = list(range(1, args.m_max))
    table = bezout_table(ms, ns)
    if args.format == "json":
        sys.stdout.write(harness.dumps(table))
    elif args.format == "csv":
        keys = list(table[0]) if table else []
        print(",".join(keys))
        for r in table:
            print(",".join(str(r[k]) for k in keys))
    else:
        for r in table:
            print(f"m={r['m']} n={r['n']}: PD raw {r['raw_pd']}, spurious {r['spurious']}, bound {r['bound_pd']}; "
                  f"P raw {r['raw_p']}, bound {r['bound_p']}; D raw {r['raw_d']}, bound {r['bound_d']}")
    return EXIT_OK


def _survey_config(args) -> harness.ExperimentConfig:
    base = {}
    if args.config is not None:
        base = json.loads(args.config.read_text())
    tol = Tolerances(**base["tolerances"]) if "tolerances" in base else DEFAULT_TOLERANCES
    base["tolerances"] = _tolerances(args, tol)
    for flag, key in (("m", "m"), ("n", "n"), ("seed", "seed"), ("instances", "n_instances"),
                      ("hyperplanes", "n_hyperplanes"), ("refine", "n_refine"), ("out", "output_dir"),
                      ("emit", "emit")):
        v = getattr(args, flag)
        if v is not None:
            base[key] = str(v) if key == "output_dir" else v
    if args.format is not None and args.emit is None:
        base["emit"] = (args.format,)
    if "m" not in base or "n" not in base:
        raise ValueError("--m and --n (or a --config providing them) are required")
    return harness.ExperimentConfig.from_dict(base)


def _print_aggregate(agg: dict):
    print(f"instances {agg['n_instances']}, flagged {agg['flagged_instances']}, "
          f"bounded count mismatches {agg['bounded_count_mismatches']}, joint mismatches {agg['joint_mismatches']}")
    print(f"cells traced {agg['cells_traced']}, excluded {agg['cells_excluded']} {agg['exclusion_reasons']}")
    for f, a in agg["average_curvature"].items():
        mean = "n/a" if a["mean"] is None else f"{a['mean']:.6f}"
        mx = "n/a" if a["max"] is None else f"{a['max']:.6f}"
        c = agg["crossings"][f]
        cr = agg["crofton"][f]
        print(f"{f:>2}: average K mean {mean}, max {mx}, bound {a['bound']:.6f}; "
              f"max crossings {c['max']} of {c['bound']}; Crofton failures {cr['failures']} of {cr['checks']}")
    print(f"bound violations: {agg['bound_violations']}")


def cmd_survey(args):
    cfg = _survey_config(args)
    report = harness.run_survey(cfg)
    for p in harness.write_survey(report):
        print(f"wrote {p}")
    _print_aggregate(report.aggregate)
    return EXIT_VIOLATION if report.bound_violations else EXIT_OK


def cmd_report(args):
    data = json.loads(args.survey.read_text())
    _print_aggregate(data["aggregate"])
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        for name, text in harness.plot_data(data).items():
            p = args.out / name
            p.write_text(text)
            print(f"wrote {p}")
        if args.trace_eps:
            rec = next(r for r in data["per_instance"] if r["index"] == args.trace_index)
            inst = LpInstance.from_dict(rec["instance"])
            tol = Tolerances(**data["config"]["tolerances"])
            trace = trace_path(inst, SignVector.parse(args.trace_eps), tol)
            p = args.out / f"gauss_components-{args.trace_index}-{args.trace_eps}.csv"
            p.write_text(harness.trace_series(trace))
            print(f"wrote {p}")
    return EXIT_VIOLATION if data["aggregate"]["bound_violations"] else EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "enumerate": cmd_enumerate,
    "trace": cmd_trace,
    "curvature": cmd_curvature,
    "bezout": cmd_bezout,
    "survey": cmd_survey,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (CplabError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"cplab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"cplab {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
