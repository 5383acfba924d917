"""Scan the shared libraries installed on this machine and tabulate slow-path rates.

Run with ``python3 demos/02_corpus_scan.py [DIR ...]``.  Defaults to the usual
x86-64 library directories; only a dozen libraries under 2 MB are scanned so
the demo stays quick.
"""
import os
import sys

from jccscan import aggregate, builtin_profile, render
from jccscan.cli import iter_binaries
from jccscan.report import analyze_paths

LIMIT = 12
MAX_BYTES = 2 << 20


def pick(roots):
    seen, paths = set(), []
    for root in roots:
        for p in iter_binaries(root):
            real = os.path.realpath(p)
            if ".so" in os.path.basename(p) and real not in seen and os.path.getsize(p) <= MAX_BYTES:
                seen.add(real)
                paths.append(p)
            if len(paths) >= LIMIT:
                return paths
    return paths


if __name__ == "__main__":
    roots = sys.argv[1:] or [d for d in ("/usr/lib/x86_64-linux-gnu", "/usr/lib64") if os.path.isdir(d)]
    paths = pick(roots)
    if not paths:
        sys.exit("no shared libraries found")

    # %% Decode everything in parallel.  Failures come back in place of reports.
    results = analyze_paths(paths, builtin_profile("skylake_family"), jobs=os.cpu_count() or 1)
    reports = [r for r in results if not isinstance(r, Exception)]
    for p, r in zip(paths, results):
        if isinstance(r, Exception):
            print(f"skipped {p}: {r}", file=sys.stderr)

    # %% Percentages are over all conditional jumps, fused or not.
    corpus = aggregate(reports)
    print(render(corpus, "text"))

    # %% Offsets are close to uniform, so noMFuse hovers near 1/64 = 1.56%.
    big = [r for r in reports if r.cond_jump_total >= 1000]
    if big:
        worst = max(big, key=lambda r: r.slow_pct)
        print(f"\nworst of the larger libraries: {worst.library} at {worst.slow_pct:.2f}% slow")
        shifts = [f.suggested_padding for f in worst.findings if f.suggested_padding]
        print(f"padding by 1..5 bytes would move {len(shifts)} of its {len(worst.findings)} "
              f"flagged pairs to the fast path")
