"""Alignment classification of fusible pairs and the 64-offset model.

Offsets are the six low address bits of the pair's first instruction.  A
pair is ``no_mfuse`` when its jump starts on a cache-line boundary, else
``no_ucache`` when its first byte and the jump's last byte fall in
different exclusion blocks, else ``fast``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

from .fusion import ArchProfile, builtin_profile, is_fusible_pair
from .insn import AdjacentPair

MAX_PAIR_LENGTH = 32


class PlacementClass(str, enum.Enum):
    FAST = "fast"
    NO_MFUSE = "no_mfuse"
    NO_UCACHE = "no_ucache"

    def __str__(self):
        return self.value


class GeometryError(ValueError):
    pass


def classify_geometry(first_address: int, first_len: int, jump_len: int,
                      profile: ArchProfile) -> PlacementClass:
    """Classify a pair given only its address and instruction lengths."""
    jump_address = first_address + first_len
    if jump_address % profile.cache_line == 0:
        return PlacementClass.NO_MFUSE
    block = profile.exclusion_boundary
    if first_address // block != (jump_address + jump_len - 1) // block:
        return PlacementClass.NO_UCACHE
    return PlacementClass.FAST


def classify(profile: ArchProfile, pair: AdjacentPair) -> PlacementClass:
    if not is_fusible_pair(profile, pair):
        raise ValueError(f"pair at {pair.first.address:#x} is not macro-fusible under {profile.name}")
    return classify_geometry(pair.first.address, pair.first.length, pair.jump.length, profile)


def terminates_on_boundary(jump_address: int, jump_len: int, profile: ArchProfile) -> bool:
    """Jump's last byte is the last byte of an exclusion block."""
    return (jump_address + jump_len) % profile.exclusion_boundary == 0


@dataclass(frozen=True)
class OffsetAnalysis:
    first_len: int
    jump_len: int
    no_mfuse_offsets: frozenset
    no_ucache_offsets: frozenset
    fast_offsets: frozenset
    cache_line: int = 64

    @property
    def no_mfuse_fraction(self) -> Fraction:
        return Fraction(len(self.no_mfuse_offsets), self.cache_line)

    @property
    def no_ucache_fraction(self) -> Fraction:
        return Fraction(len(self.no_ucache_offsets), self.cache_line)

    def bucket(self, offset: int) -> PlacementClass:
        offset %= self.cache_line
        if offset in self.no_mfuse_offsets:
            return PlacementClass.NO_MFUSE
        if offset in self.no_ucache_offsets:
            return PlacementClass.NO_UCACHE
        return PlacementClass.FAST


def _check_geometry(first_len: int, jump_len: int):
    if first_len < 1 or jump_len < 1:
        raise GeometryError("instruction lengths must be at least 1")
    if first_len + jump_len > MAX_PAIR_LENGTH:
        raise GeometryError(f"pair length {first_len + jump_len} exceeds {MAX_PAIR_LENGTH}")


def slow_offsets(first_len: int, jump_len: int, profile: ArchProfile | None = None,
                 base: int = 0) -> OffsetAnalysis:
    """Brute-force classification of the pair at every offset of a cache line.

    *base* must be cache-line aligned; the result does not depend on it.
    """
    _check_geometry(first_len, jump_len)
    profile = profile or builtin_profile("skylake_family")
    line = profile.cache_line
    if base % line:
        raise ValueError("base must be cache-line aligned")
    buckets = {c: set() for c in PlacementClass}
    for offset in range(line):
        buckets[classify_geometry(base + offset, first_len, jump_len, profile)].add(offset)
    return OffsetAnalysis(
        first_len,
        jump_len,
        frozenset(buckets[PlacementClass.NO_MFUSE]),
        frozenset(buckets[PlacementClass.NO_UCACHE]),
        frozenset(buckets[PlacementClass.FAST]),
        line,
    )


def probability_bounds(pair_len_min: int, pair_len_max: int) -> tuple[Fraction, Fraction]:
    """Share of 64 offsets that land a pair in ``no_ucache``, over a length range.

    A pair of total length p straddles a 32-byte line at p - 1 offsets per
    block, twice per cache line, and one of those is claimed by ``no_mfuse``.
    """
    if not 2 <= pair_len_min <= pair_len_max <= MAX_PAIR_LENGTH:
        raise GeometryError("need 2 <= pair_len_min <= pair_len_max <= 32")
    return Fraction(2 * pair_len_min - 3, 64), Fraction(2 * pair_len_max - 3, 64)


NO_MFUSE_PROBABILITY = Fraction(1, 64)
