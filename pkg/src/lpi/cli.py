"""Command-line front end: ``lpi analyze FILE``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from fractions import Fraction
from typing import Sequence

from .engine import OPT_TOGGLES, AnalysisConfig, AnalysisResult, Verdict, check_inductive, refine_ladder, run
from .frontend import ParseError, compile_program
from .templates import Preset


def _rat(q: Fraction) -> str:
    return str(Fraction(q))


def report(result: AnalysisResult, wall_ms: int) -> dict:
    cfa = result.cfa
    invariants = []
    for n in result.points:
        st = result.invariants.get(n)
        item = {"node": f"n{n}", "line": cfa.lines.get(n), "reachable": st is not None, "constraints": []}
        if st is not None:
            for t, pb in sorted(st.entries.items(), key=lambda kv: kv[0].sort_key()):
                item["constraints"].append({"template": str(t), "bound": _rat(pb.bound)})
            if st.congruence is not None:
                item["congruence"] = {x: p.value for x, p in st.congruence.values}
        invariants.append(item)
    out = {
        "invariants": invariants,
        "assertions": [{"line": line, "status": v.value} for line, v in sorted(result.verdicts.items())],
        "stats": result.stats.as_dict(),
        "config": result.config.describe(),
        "wall_ms": wall_ms,
    }
    if result.ladder_step is not None:
        out["config"]["ladder_step"] = result.ladder_step
    if result.error:
        out["error"] = result.error
    return out


def format_text(rep: dict, stats: bool) -> str:
    lines = []
    for inv in rep["invariants"]:
        where = f"n{inv['node'][1:]}" + (f" (line {inv['line']})" if inv["line"] else "")
        if not inv["reachable"]:
            lines.append(f"{where}: unreachable")
            continue
        body = " && ".join(f"{c['template']} <= {c['bound']}" for c in inv["constraints"]) or "true"
        if inv.get("congruence"):
            body += "  [" + ", ".join(f"{x} {p}" for x, p in inv["congruence"].items()) + "]"
        lines.append(f"{where}: {body}")
    for a in rep["assertions"]:
        lines.append(f"assertion line {a['line']}: {a['status']}")
    if "error" in rep:
        lines.append(f"analysis stopped: {rep['error']}")
    if stats:
        for k, v in rep["stats"].items():
            lines.append(f"{k}: {v}")
        lines.append(f"wall_ms: {rep['wall_ms']}")
    return "\n".join(lines) + "\n"


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lpi", description="Numerical invariants by local policy iteration.")
    sub = p.add_subparsers(dest="cmd", required=True, metavar="analyze")
    a = sub.add_parser("analyze", help="analyze a program")
    a.add_argument("file")
    a.add_argument("--domain", choices=[x.value for x in Preset], default="intervals")
    a.add_argument("--unroll", type=int, default=0, metavar="N")
    a.add_argument("--congruence", action="store_true")
    a.add_argument("--integer-mode", choices=["exact", "relaxed"], default="exact")
    a.add_argument("--refine", action="store_true", help="try richer configurations until proved")
    a.add_argument("--format", choices=["text", "json"], default="text")
    a.add_argument("--stats", action="store_true")
    a.add_argument("--check-inductive", action="store_true")
    a.add_argument("--dump-cfa", action="store_true", help="print the CFA as DOT and exit")
    a.add_argument("--opt-toggles", default="", metavar="CSV", help=f"heuristics to disable: {','.join(OPT_TOGGLES)}")
    o = sub.add_parser("oracle")  # debugging aid, not listed in the help
    o.add_argument("file")
    o.add_argument("--lo", type=int, default=-4)
    o.add_argument("--hi", type=int, default=4)
    sub._choices_actions = [c for c in sub._choices_actions if c.dest != "oracle"]
    return p


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        cfa = compile_program(_read(args.file))
    except OSError as exc:
        print(f"lpi: {exc}", file=sys.stderr)
        return 2
    except ParseError as exc:
        print(f"lpi: {args.file}:{exc}", file=sys.stderr)
        return 2
    if args.cmd == "oracle":
        return _oracle(cfa, args)
    if args.dump_cfa:
        sys.stdout.write(cfa.to_dot())
        return 0
    try:
        cfg = AnalysisConfig(
            preset=Preset(args.domain),
            unroll=args.unroll,
            congruence=args.congruence,
            integer=args.integer_mode == "exact",
        ).without(args.opt_toggles.split(","))
        if args.unroll < 0:
            raise ValueError("--unroll must be non-negative")
        t0 = time.perf_counter()
        result = refine_ladder(cfa, cfg) if args.refine else run(cfa, cfg)
        wall = int((time.perf_counter() - t0) * 1000)
        certified = check_inductive(result) if args.check_inductive else True
    except Exception as exc:  # anything escaping the engine is an internal error
        print(f"lpi: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    rep = report(result, wall)
    if args.format == "json":
        sys.stdout.write(json.dumps(rep, indent=2) + "\n")
    else:
        sys.stdout.write(format_text(rep, args.stats))
    if not certified:
        print("lpi: invariant failed the inductiveness check", file=sys.stderr)
        return 2
    if result.error:
        return 1
    return 0 if all(v is Verdict.PROVED for v in result.verdicts.values()) else 1


def _oracle(cfa, args) -> int:
    from .oracle import Limits, interpret

    r = interpret(cfa, Limits(args.lo, args.hi))
    for n in sorted(r.reachable):
        print(f"n{n}: {len(r.reachable[n])} states")
        for st in r.states(n)[:20]:
            print("   ", " ".join(f"{k}={v}" for k, v in st.items()))
    if r.truncated:
        print("(truncated)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
