"""Macro-fusion eligibility under configurable architecture profiles.

A profile is plain data: which first-instruction mnemonics fuse with which
jump conditions, whether negated conditions fuse too, which operand shapes
block fusion, and the front-end block sizes used by placement analysis.
Profiles round-trip through a small INI document (see :func:`dump_profile`).
"""
from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

from .insn import (
    IMMEDIATE_AND_MEMORY_SOURCE,
    MEMORY_DESTINATION,
    OPERAND_TRAITS,
    RIP_RELATIVE,
    AdjacentPair,
    canonical_condition,
    negate_condition,
)


class UnknownProfileError(KeyError):
    pass


class ProfileFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ArchProfile:
    name: str
    fusible_table: Mapping[str, frozenset]
    fuse_negated_jumps: bool = True
    operand_exclusions: frozenset = OPERAND_TRAITS
    fetch_window: int = 16
    exclusion_boundary: int = 32
    cache_line: int = 64
    description: str = field(default="", compare=False)

    def __post_init__(self):
        table = {}
        for mnemonic, conds in self.fusible_table.items():
            table[mnemonic.lower()] = frozenset(canonical_condition(c) for c in conds)
        object.__setattr__(self, "fusible_table", MappingProxyType(table))
        object.__setattr__(self, "operand_exclusions", frozenset(self.operand_exclusions))
        unknown = self.operand_exclusions - OPERAND_TRAITS
        if unknown:
            raise ProfileFormatError(f"unknown operand exclusions: {sorted(unknown)}")
        for size in (self.fetch_window, self.exclusion_boundary, self.cache_line):
            if size <= 0:
                raise ProfileFormatError("block sizes must be positive")
        if self.exclusion_boundary % self.fetch_window or self.cache_line % self.exclusion_boundary:
            raise ProfileFormatError("fetch_window | exclusion_boundary | cache_line must nest")

    def __reduce__(self):
        # mappingproxy does not pickle; needed for process-pool analysis
        return (ArchProfile, (
            self.name, {k: tuple(sorted(v)) for k, v in self.fusible_table.items()},
            self.fuse_negated_jumps, self.operand_exclusions, self.fetch_window,
            self.exclusion_boundary, self.cache_line, self.description,
        ))

    def accepts(self, mnemonic: str, cond: str) -> bool:
        conds = self.fusible_table.get(mnemonic.lower())
        if not conds:
            return False
        cond = canonical_condition(cond)
        return cond in conds or (self.fuse_negated_jumps and negate_condition(cond) in conds)


# First-instruction rows and their fusible jumps, negations implied.
_ARITH = ("jz", "jc", "jb", "ja", "jl", "jg", "je")
_INCDEC = ("jz", "jl", "jg", "je")
_LOGIC = ("jz", "jc", "jb", "ja", "jl", "jg", "js", "jp", "jo", "je")

SKYLAKE_TABLE = {
    "cmp": _ARITH,
    "add": _ARITH,
    "sub": _ARITH,
    "inc": _INCDEC,
    "dec": _INCDEC,
    "test": _LOGIC,
    "and": _LOGIC,
}

BUILTIN_PROFILES = {
    "skylake_family": dict(
        fusible_table=SKYLAKE_TABLE,
        description="Intel Skylake-derived cores (Skylake, Kaby/Coffee/Comet Lake).",
    ),
    "zen2": dict(
        fusible_table={k: SKYLAKE_TABLE[k] for k in ("cmp", "test")},
        description=(
            "AMD Zen 2: only test and cmp fuse with conditional jumps. "
            "The operand exclusions are copied from the Intel profile as an assumption."
        ),
    ),
}


def builtin_profile(name: str) -> ArchProfile:
    try:
        spec = BUILTIN_PROFILES[name]
    except KeyError:
        raise UnknownProfileError(f"unknown profile {name!r}; known: {sorted(BUILTIN_PROFILES)}") from None
    return ArchProfile(name=name, **spec)


def is_fusible_pair(profile: ArchProfile, pair: AdjacentPair) -> bool:
    """True when the pair's first instruction and jump condition may macro-fuse.

    Addresses are never consulted; placement is judged separately.
    """
    first = pair.first
    if first.traits & profile.operand_exclusions:
        return False
    return profile.accepts(first.mnemonic, pair.jump.cond_code)


def dump_profile(profile: ArchProfile) -> str:
    cfg = configparser.ConfigParser()
    cfg["profile"] = {
        "name": profile.name,
        "description": profile.description,
        "fuse_negated_jumps": str(profile.fuse_negated_jumps).lower(),
        "operand_exclusions": ", ".join(sorted(profile.operand_exclusions)),
        "fetch_window": str(profile.fetch_window),
        "exclusion_boundary": str(profile.exclusion_boundary),
        "cache_line": str(profile.cache_line),
    }
    cfg["fusible"] = {m: ", ".join("j" + c for c in sorted(conds)) for m, conds in profile.fusible_table.items()}
    buf = io.StringIO()
    cfg.write(buf)
    return buf.getvalue()


def parse_profile(text: str) -> ArchProfile:
    cfg = configparser.ConfigParser()
    try:
        cfg.read_string(text)
        head = cfg["profile"]
        rows = cfg["fusible"]
        exclusions = [x.strip() for x in head.get("operand_exclusions", "").split(",") if x.strip()]
        return ArchProfile(
            name=head.get("name", "custom"),
            fusible_table={m: [c.strip() for c in v.split(",") if c.strip()] for m, v in rows.items()},
            fuse_negated_jumps=head.getboolean("fuse_negated_jumps", True),
            operand_exclusions=frozenset(exclusions),
            fetch_window=head.getint("fetch_window", 16),
            exclusion_boundary=head.getint("exclusion_boundary", 32),
            cache_line=head.getint("cache_line", 64),
            description=head.get("description", ""),
        )
    except (configparser.Error, KeyError, ValueError) as exc:
        if isinstance(exc, ProfileFormatError):
            raise
        raise ProfileFormatError(f"invalid profile document: {exc}") from exc


def load_profile(name_or_path: str) -> ArchProfile:
    """Resolve a built-in profile name or read a profile file."""
    if name_or_path in BUILTIN_PROFILES:
        return builtin_profile(name_or_path)
    if os.path.isfile(name_or_path):
        with open(name_or_path, encoding="utf-8") as fh:
            return parse_profile(fh.read())
    raise UnknownProfileError(f"{name_or_path!r} is neither a built-in profile nor a file")


__all__ = [
    "ArchProfile", "BUILTIN_PROFILES", "ProfileFormatError", "UnknownProfileError",
    "builtin_profile", "dump_profile", "is_fusible_pair", "load_profile", "parse_profile",
    "RIP_RELATIVE", "MEMORY_DESTINATION", "IMMEDIATE_AND_MEMORY_SOURCE",
]
