"""Command-line entry point.

Exit status: 0 success, 1 operational error, 2 ``--fail-threshold`` breached.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Iterator, Optional, Sequence

from . import benchgen, covert
from .fusion import BUILTIN_PROFILES, ProfileFormatError, UnknownProfileError, builtin_profile, dump_profile, load_profile
from .loader import ELF_MAGIC, MZ_MAGIC
from .placement import GeometryError, slow_offsets
from .report import aggregate, analyze_paths, render

EXIT_OK, EXIT_ERROR, EXIT_THRESHOLD = 0, 1, 2
PROFILE_ENV = "JCCSCAN_PROFILE"


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which is reserved for threshold breaches
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _looks_binary(path: str) -> bool:
    try:
        with open(path, "rb") as fh:
            head = fh.read(4)
    except OSError:
        return False
    return head == ELF_MAGIC or head[:2] == MZ_MAGIC


def iter_binaries(root: str) -> Iterator[str]:
    """Yield ELF/PE files under *root*, following directory symlinks one level deep."""
    seen = set()

    def walk(directory: str, link_depth: int):
        try:
            entries = sorted(os.scandir(directory), key=lambda e: e.name)
        except OSError:
            return
        for entry in entries:
            is_link = entry.is_symlink()
            if entry.is_dir(follow_symlinks=True):
                if is_link and link_depth >= 1:
                    continue
                real = os.path.realpath(entry.path)
                if real in seen:
                    continue
                seen.add(real)
                yield from walk(entry.path, link_depth + is_link)
            elif entry.is_file(follow_symlinks=True):
                real = os.path.realpath(entry.path)
                if real not in seen and _looks_binary(entry.path):
                    seen.add(real)
                    yield entry.path

    if os.path.isdir(root):
        seen.add(os.path.realpath(root))
        yield from walk(root, 0)
    else:
        yield root


def _profile(args):
    try:
        return load_profile(args.profile)
    except (UnknownProfileError, ProfileFormatError, OSError) as exc:
        raise CliError(str(exc)) from exc


def cmd_analyze(args) -> int:
    if args.jobs < 1:
        raise CliError("--jobs must be >= 1")
    if args.fail_threshold is not None and not 0 <= args.fail_threshold <= 100:
        raise CliError("--fail-threshold must be within 0..100")
    profile = _profile(args)
    paths = [p for root in args.paths for p in iter_binaries(root)]
    results = analyze_paths(paths, profile, args.jobs, args.per_function)
    reports = []
    for path, result in zip(paths, results):
        if isinstance(result, Exception):
            print(f"{path}: {type(result).__name__}: {result}", file=sys.stderr)
        else:
            reports.append(result)
    if not reports:
        print("no analyzable binaries", file=sys.stderr)
        return EXIT_ERROR
    corpus = aggregate(reports)
    print(render(corpus, args.format))
    if args.fail_threshold is not None and corpus.slow_pct > args.fail_threshold:
        print(f"slow-path conditional jumps {corpus.slow_pct:.2f}% exceed threshold "
              f"{args.fail_threshold:.2f}%", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


def _fmt_offsets(offsets) -> str:
    return "{" + ", ".join(str(o) for o in sorted(offsets)) + "}"


def cmd_prob(args) -> int:
    profile = _profile(args)
    try:
        res = slow_offsets(args.first_len, args.jump_len, profile)
    except GeometryError as exc:
        raise CliError(str(exc)) from exc
    line = profile.cache_line
    if args.format == "json":
        print(json.dumps({
            "first_len": res.first_len,
            "jump_len": res.jump_len,
            "no_mfuse_offsets": sorted(res.no_mfuse_offsets),
            "no_ucache_offsets": sorted(res.no_ucache_offsets),
            "fast_offsets": sorted(res.fast_offsets),
            "no_mfuse_fraction": str(res.no_mfuse_fraction),
            "no_ucache_fraction": str(res.no_ucache_fraction),
        }, indent=2))
        return EXIT_OK
    n_m, n_u = len(res.no_mfuse_offsets), len(res.no_ucache_offsets)
    print(f"pair geometry: first {res.first_len} B + jump {res.jump_len} B")
    print(f"noMFuse  {n_m}/{line} ({100 * n_m / line:.4f}%) offsets {_fmt_offsets(res.no_mfuse_offsets)}")
    print(f"noUCache {n_u}/{line} ({100 * n_u / line:.4f}%) offsets {_fmt_offsets(res.no_ucache_offsets)}")
    print(f"fast     {len(res.fast_offsets)}/{line}")
    return EXIT_OK


def cmd_genbench(args) -> int:
    try:
        spec = benchgen.BenchSpec(args.offset, args.iterations, not args.no_instrument)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    geometry = slow_offsets(*benchgen.PAIR_GEOMETRY)
    try:
        if args.mode == "asm":
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(benchgen.emit_assembly(spec))
            loop_offset = spec.offset_b
        else:
            benchgen.write_loop_bytes(spec, args.out, args.base)
            loop_offset = spec.sub_index % 64
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}") from exc
    print(f"wrote {args.out}: loop at offset {loop_offset}, expected class {geometry.bucket(loop_offset)}")
    return EXIT_OK


def cmd_covert(args) -> int:
    if not 1 <= args.bits <= 8:
        raise CliError("--bits must be within 1..8")
    if args.trials < 1 or args.sigma < 0:
        raise CliError("--trials must be >= 1 and --sigma >= 0")
    try:
        model = covert.TimingModel(args.base, args.slope, args.sigma, args.freq)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    if args.sweep:
        results = covert.sweep(model, args.trials, args.seed)
        if args.format == "csv":
            print("bits,trials,sigma,error_rate,mean_cycles,throughput_bps")
            for r in results:
                d = r.to_dict()
                print(",".join(f"{d[k]}" for k in ("bits", "trials", "sigma", "error_rate",
                                                   "mean_cycles", "throughput_bps")))
        else:
            print(json.dumps([r.to_dict() for r in results], indent=2))
        return EXIT_OK
    result = covert.run_channel(covert.ChannelConfig(args.bits), model, args.trials, args.seed)
    print(json.dumps(result.to_dict(), indent=2))
    return EXIT_OK


def cmd_profiles(args) -> int:
    if args.action == "list":
        for name in sorted(BUILTIN_PROFILES):
            print(name)
        return EXIT_OK
    try:
        text = dump_profile(builtin_profile(args.name))
    except UnknownProfileError as exc:
        raise CliError(str(exc)) from exc
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise CliError(f"cannot write {args.out}: {exc}") from exc
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    default_profile = os.environ.get(PROFILE_ENV, "skylake_family")
    parser = _Parser(prog="jccscan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="scan ELF/PE binaries for slow-path conditional jumps")
    p.add_argument("paths", nargs="+")
    p.add_argument("--profile", default=default_profile)
    p.add_argument("--format", choices=("json", "csv", "text"), default="text")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--fail-threshold", type=float, default=None,
                   help="exit 2 when noMFuse+noUCache share (%%) exceeds this")
    p.add_argument("--per-function", action="store_true", help="attribute findings to symbols")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("prob", help="slow offsets of a pair geometry")
    p.add_argument("first_len", type=int)
    p.add_argument("jump_len", type=int)
    p.add_argument("--profile", default=default_profile)
    p.add_argument("--format", choices=("json", "text"), default="text")
    p.set_defaults(func=cmd_prob)

    p = sub.add_parser("genbench", help="emit the offset-shifted loop benchmark")
    p.add_argument("offset", type=int)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--mode", choices=("asm", "bytes"), default="asm")
    p.add_argument("--no-instrument", action="store_true")
    p.add_argument("--base", type=lambda s: int(s, 0), default=0x401000,
                   help="64-aligned load address recorded in the bytes sidecar")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_genbench)

    p = sub.add_parser("covert", help="covert-channel simulation")
    csub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    s = csub.add_parser("simulate")
    s.add_argument("--bits", type=int, default=5)
    s.add_argument("--trials", type=int, default=10_000)
    s.add_argument("--sigma", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sweep", action="store_true", help="run k = 1..8")
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.add_argument("--base", type=float, default=983.0, help="cycles at Hamming weight 0")
    s.add_argument("--slope", type=float, default=1.0, help="cycles per slow iteration")
    s.add_argument("--freq", type=float, default=covert.CPU_FREQ_HZ)
    s.set_defaults(func=cmd_covert)

    p = sub.add_parser("profiles", help="list or export built-in architecture profiles")
    psub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    psub.add_parser("list").set_defaults(func=cmd_profiles)
    e = psub.add_parser("export")
    e.add_argument("name")
    e.add_argument("-o", "--out")
    e.set_defaults(func=cmd_profiles)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    try:
        return args.func(args)
    except CliError as exc:
        print(f"jccscan: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
