"""Time the analysis with the compiled pivot kernel and with the Python one.

Usage: python3 benchmarks/bench_kernel.py [repeats]
"""

import sys
import time

from lpi import _kernel_py, simplex
from lpi.engine import AnalysisConfig, run
from lpi.frontend import compile_program
from lpi.templates import Preset

PROGRAMS = {
    "two_loops": "int i=0; int j=0; while(i<10) i++; while(j<10) j++;",
    "nested": "int i=0; int j=0; while(i<100){ j=0; while(j<i) j++; i++; } assert(j <= 100);",
    "octagon_sum": "int x=0; int y=10; while(x<10){ x++; y--; } assert(x+y == 10);",
    "branches": (
        "int x=0; int y=0; int z=0;\n"
        "while(x<50){ if(nondet()){ x=x+1; y=y+2; } else { x=x+2; z=z+1; } }\n"
        "assert(y <= 100);"
    ),
}


def bench(pivot, repeats: int) -> dict[str, float]:
    simplex._pivot = pivot
    out = {}
    for name, text in PROGRAMS.items():
        cfa = compile_program(text)
        cfg = AnalysisConfig(preset=Preset.OCTAGONS)
        best = float("inf")
        for _ in range(repeats):
            t = time.perf_counter()
            run(cfa, cfg)
            best = min(best, time.perf_counter() - t)
        out[name] = best
    return out


def main():
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 3
    try:
        from lpi._kernel import pivot as compiled
    except ImportError:
        print("compiled kernel not built; only the Python kernel is timed")
        compiled = None
    py = bench(_kernel_py.pivot, repeats)
    cy = bench(compiled, repeats) if compiled else {}
    print(f"{'program':<14}{'python s':>10}{'compiled s':>12}{'speedup':>9}")
    for name in PROGRAMS:
        c = cy.get(name)
        extra = f"{c:>12.4f}{py[name] / c:>9.2f}" if c else ""
        print(f"{name:<14}{py[name]:>10.4f}{extra}")


if __name__ == "__main__":
    main()
