"""Per-binary and corpus statistics, rendering, and padding advice.

Percentages always divide by *all* decoded conditional jumps, fusible or
not, so the figures are comparable with corpus-level rates quoted over
every conditional jump in a library.
"""
from __future__ import annotations

import bisect
import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

from .fusion import ArchProfile, is_fusible_pair
from .insn import DecodeDiagnostics, count_cond_jumps, decode_stream, find_adjacent_pairs
from .loader import BinaryInput, Symbol, load_sections, load_symbols
from .placement import PlacementClass, classify, classify_geometry, terminates_on_boundary

MAX_PADDING = 5
CSV_HEADER = ("library", "cond_jumps", "no_mfuse_pct", "no_ucache_pct")
COUNT_FIELDS = ("cond_jump_total", "fusible_pair_total", "no_mfuse_count", "no_ucache_count", "bytes_skipped")


def _pct(count: int, total: int) -> float:
    return 100.0 * count / total if total else 0.0


@dataclass(frozen=True)
class PairFinding:
    first_address: int
    jump_address: int
    first_mnemonic: str
    jump_mnemonic: str
    placement_class: PlacementClass
    terminates_on_boundary: bool = False
    suggested_padding: Optional[int] = None
    function: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "first_address": self.first_address,
            "jump_address": self.jump_address,
            "first_mnemonic": self.first_mnemonic,
            "jump_mnemonic": self.jump_mnemonic,
            "class": self.placement_class.value,
            "terminates_on_boundary": self.terminates_on_boundary,
            "suggested_padding": self.suggested_padding,
            "function": self.function,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PairFinding":
        return cls(
            d["first_address"], d["jump_address"], d["first_mnemonic"], d["jump_mnemonic"],
            PlacementClass(d["class"]), d.get("terminates_on_boundary", False),
            d.get("suggested_padding"), d.get("function"),
        )


@dataclass(frozen=True)
class BinaryReport:
    path: str
    cond_jump_total: int = 0
    fusible_pair_total: int = 0
    no_mfuse_count: int = 0
    no_ucache_count: int = 0
    bytes_skipped: int = 0
    findings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if not self.no_mfuse_count + self.no_ucache_count <= self.fusible_pair_total <= self.cond_jump_total:
            raise ValueError("inconsistent counts: need no_mfuse + no_ucache <= fusible <= cond_jumps")

    @property
    def library(self) -> str:
        return os.path.basename(self.path)

    @property
    def no_mfuse_pct(self) -> float:
        return _pct(self.no_mfuse_count, self.cond_jump_total)

    @property
    def no_ucache_pct(self) -> float:
        return _pct(self.no_ucache_count, self.cond_jump_total)

    @property
    def slow_pct(self) -> float:
        return _pct(self.no_mfuse_count + self.no_ucache_count, self.cond_jump_total)

    def counts(self) -> dict:
        return {k: getattr(self, k) for k in COUNT_FIELDS}

    def to_dict(self) -> dict:
        d = {"path": self.path, **self.counts(),
             "no_mfuse_pct": self.no_mfuse_pct, "no_ucache_pct": self.no_ucache_pct}
        d["findings"] = [f.to_dict() for f in self.findings]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BinaryReport":
        return cls(d["path"], *(d[k] for k in COUNT_FIELDS),
                   findings=tuple(PairFinding.from_dict(f) for f in d.get("findings", ())))


@dataclass(frozen=True)
class CorpusReport:
    binaries: tuple
    totals: dict

    @property
    def aggregate_pcts(self) -> dict:
        t = self.totals
        return {
            "no_mfuse_pct": _pct(t["no_mfuse_count"], t["cond_jump_total"]),
            "no_ucache_pct": _pct(t["no_ucache_count"], t["cond_jump_total"]),
        }

    @property
    def slow_pct(self) -> float:
        t = self.totals
        return _pct(t["no_mfuse_count"] + t["no_ucache_count"], t["cond_jump_total"])

    def to_dict(self) -> dict:
        return {
            "binaries": [b.to_dict() for b in self.binaries],
            "totals": dict(self.totals),
            "aggregate_pcts": self.aggregate_pcts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusReport":
        return aggregate(BinaryReport.from_dict(b) for b in d["binaries"])


def suggest_padding(first_address: int, first_len: int, jump_len: int,
                    profile: ArchProfile) -> Optional[int]:
    """Smallest forward shift (1..5 bytes) that makes a slow pair fast.

    Only the pair itself moves; knock-on shifts of later code are ignored.
    Returns None when no shift within the prefix budget helps.
    """
    if classify_geometry(first_address, first_len, jump_len, profile) is PlacementClass.FAST:
        raise ValueError("pair is already fast")
    for shift in range(1, MAX_PADDING + 1):
        if classify_geometry(first_address + shift, first_len, jump_len, profile) is PlacementClass.FAST:
            return shift
    return None


def _function_for(symbols: Sequence[Symbol], starts: Sequence[int], address: int) -> Optional[str]:
    i = bisect.bisect_right(starts, address) - 1
    if i < 0:
        return None
    sym = symbols[i]
    if sym.size and address >= sym.address + sym.size:
        return None
    return sym.name


def analyze_binary(source: BinaryInput, profile: ArchProfile, per_function: bool = False,
                   path: Optional[str] = None) -> BinaryReport:
    """Decode every executable section of *source* and classify its fusible pairs.

    ``findings`` lists the slow pairs plus fast pairs whose jump ends exactly
    on an exclusion boundary.
    """
    sections = load_sections(source)
    if path is None:
        path = os.fspath(source) if not isinstance(source, (bytes, bytearray, memoryview)) else "<memory>"
    symbols = load_symbols(source) if per_function else []
    starts = [s.address for s in symbols]

    diag = DecodeDiagnostics()
    cond = fusible = mfuse = ucache = 0
    findings = []
    for section in sections:
        records = decode_stream(section, diag, pair_traits_only=True)
        cond += count_cond_jumps(records)
        for pair in find_adjacent_pairs(records):
            if not is_fusible_pair(profile, pair):
                continue
            fusible += 1
            cls = classify(profile, pair)
            ends_on = terminates_on_boundary(pair.jump.address, pair.jump.length, profile)
            if cls is PlacementClass.NO_MFUSE:
                mfuse += 1
            elif cls is PlacementClass.NO_UCACHE:
                ucache += 1
            elif not ends_on:
                continue
            padding = None
            if cls is not PlacementClass.FAST:
                padding = suggest_padding(pair.first.address, pair.first.length, pair.jump.length, profile)
            findings.append(PairFinding(
                pair.first.address, pair.jump.address, pair.first.mnemonic, pair.jump.mnemonic,
                cls, ends_on, padding,
                _function_for(symbols, starts, pair.first.address) if symbols else None,
            ))
    return BinaryReport(path, cond, fusible, mfuse, ucache, diag.bytes_skipped, tuple(findings))


def _analyze_job(args):
    path, profile, per_function = args
    return analyze_binary(path, profile, per_function)


def analyze_paths(paths: Sequence[str], profile: ArchProfile, jobs: int = 1,
                  per_function: bool = False) -> list[Union[BinaryReport, Exception]]:
    """Analyze files, in parallel when ``jobs > 1``; results keep input order.

    Per-file failures are returned in place of the report rather than raised.
    """
    def guarded(path):
        try:
            return analyze_binary(path, profile, per_function)
        except Exception as exc:  # reported per file by the caller
            return exc

    if jobs <= 1 or len(paths) <= 1:
        return [guarded(p) for p in paths]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_analyze_job, (p, profile, per_function)) for p in paths]
        out = []
        for fut in futures:
            exc = fut.exception()
            out.append(exc if exc is not None else fut.result())
        return out


def aggregate(reports: Iterable[Union[BinaryReport, CorpusReport]]) -> CorpusReport:
    """Sum counts over binaries; nested corpus reports are flattened."""
    binaries = []
    for r in reports:
        if isinstance(r, CorpusReport):
            binaries.extend(r.binaries)
        else:
            binaries.append(r)
    binaries.sort(key=lambda b: (b.path, tuple(b.counts().values())))
    totals = {k: sum(getattr(b, k) for b in binaries) for k in COUNT_FIELDS}
    return CorpusReport(tuple(binaries), totals)


def _rows(report):
    if isinstance(report, BinaryReport):
        return [report]
    return list(report.binaries)


def render(report: Union[BinaryReport, CorpusReport], fmt: str = "text") -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=False)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for b in _rows(report):
            writer.writerow([b.library, b.cond_jump_total, f"{b.no_mfuse_pct:.2f}", f"{b.no_ucache_pct:.2f}"])
        return buf.getvalue().rstrip("\n")
    if fmt == "text":
        return _render_text(report)
    raise ValueError(f"unknown format {fmt!r}")


def _render_text(report) -> str:
    rows = [(b.library, str(b.cond_jump_total), f"{b.no_mfuse_pct:.2f}%", f"{b.no_ucache_pct:.2f}%")
            for b in _rows(report)]
    if isinstance(report, CorpusReport):
        t, pcts = report.totals, report.aggregate_pcts
        rows.append(("TOTAL", str(t["cond_jump_total"]),
                     f"{pcts['no_mfuse_pct']:.2f}%", f"{pcts['no_ucache_pct']:.2f}%"))
    header = ("Library", "Conditional jumps", "noMFuse", "noUCache")
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(4)]

    def line(r):
        return "  ".join([r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])])

    out = [line(header), "  ".join("-" * w for w in widths)]
    out += [line(r) for r in rows]
    return "\n".join(out)
