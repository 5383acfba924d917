"""Linear-sweep decoding of code sections into instruction records.

Capstone supplies lengths, mnemonics and operand details.  Undecodable
bytes are skipped one at a time (Capstone's x86 SKIPDATA step is one byte)
and tallied in :class:`DecodeDiagnostics`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import capstone
from capstone import x86 as cs_x86

from .loader import CodeSection

RIP_RELATIVE = "rip_relative_operand"
MEMORY_DESTINATION = "memory_destination"
IMMEDIATE_AND_MEMORY_SOURCE = "immediate_and_memory_source"
OPERAND_TRAITS = frozenset({RIP_RELATIVE, MEMORY_DESTINATION, IMMEDIATE_AND_MEMORY_SOURCE})

MAX_INSN_LENGTH = 15

# alias -> canonical condition tag; canonical tags come in (x, "n" + x) pairs
CONDITION_ALIASES = {
    "o": "o", "no": "no",
    "b": "b", "c": "b", "nae": "b",
    "nb": "nb", "nc": "nb", "ae": "nb",
    "z": "z", "e": "z",
    "nz": "nz", "ne": "nz",
    "na": "na", "be": "na",
    "a": "a", "nbe": "a",
    "s": "s", "ns": "ns",
    "p": "p", "pe": "p",
    "np": "np", "po": "np",
    "l": "l", "nge": "l",
    "nl": "nl", "ge": "nl",
    "ng": "ng", "le": "ng",
    "g": "g", "nle": "g",
}
CANONICAL_CONDITIONS = ("o", "no", "b", "nb", "z", "nz", "na", "a", "s", "ns", "p", "np", "l", "nl", "ng", "g")
NEGATION = {
    "o": "no", "b": "nb", "z": "nz", "na": "a", "s": "ns", "p": "np", "l": "nl", "ng": "g",
}
NEGATION.update({v: k for k, v in list(NEGATION.items())})

_BYTE_PSEUDO = ".byte"


def canonical_condition(tag: str) -> str:
    """Normalize a condition suffix (``"e"``, ``"jae"``...) to its canonical tag."""
    tag = tag.lower()
    if tag.startswith("j") and tag[1:] in CONDITION_ALIASES:
        tag = tag[1:]
    try:
        return CONDITION_ALIASES[tag]
    except KeyError:
        raise ValueError(f"unknown condition code {tag!r}") from None


def negate_condition(tag: str) -> str:
    return NEGATION[canonical_condition(tag)]


@dataclass(frozen=True, slots=True)
class InstructionRecord:
    address: int
    length: int
    mnemonic: str
    is_cond_jump: bool = False
    cond_code: Optional[str] = None
    traits: frozenset = frozenset()

    def __post_init__(self):
        if not 1 <= self.length <= MAX_INSN_LENGTH:
            raise ValueError(f"instruction length {self.length} outside 1..15")
        if self.is_cond_jump != (self.cond_code is not None):
            raise ValueError("cond_code must be set exactly for conditional jumps")
        if self.is_cond_jump and self.traits:
            raise ValueError("conditional jumps carry no operand traits")

    @property
    def end(self) -> int:
        return self.address + self.length


@dataclass(frozen=True, slots=True)
class AdjacentPair:
    first: InstructionRecord
    jump: InstructionRecord

    def __post_init__(self):
        if not self.jump.is_cond_jump:
            raise ValueError("second element of a pair must be a conditional jump")
        if self.jump.address != self.first.end:
            raise ValueError("pair instructions are not byte-adjacent")

    @property
    def length(self) -> int:
        return self.first.length + self.jump.length


@dataclass
class DecodeDiagnostics:
    bytes_skipped: int = 0


def _new_disassembler(detail: bool = False) -> capstone.Cs:
    md = capstone.Cs(capstone.CS_ARCH_X86, capstone.CS_MODE_64)
    md.skipdata = not detail
    md.detail = detail
    return md


def _operand_traits(md_detail: capstone.Cs, raw: bytes, address: int) -> frozenset:
    insn = next(md_detail.disasm(raw, address, 1), None)
    if insn is None:
        return frozenset()
    traits = set()
    has_imm = has_mem_read = False
    for op in insn.operands:
        if op.type == cs_x86.X86_OP_MEM:
            if op.mem.base == cs_x86.X86_REG_RIP:
                traits.add(RIP_RELATIVE)
            if op.access & capstone.CS_AC_WRITE:
                traits.add(MEMORY_DESTINATION)
            if op.access & capstone.CS_AC_READ:
                has_mem_read = True
        elif op.type == cs_x86.X86_OP_IMM:
            has_imm = True
    if has_imm and has_mem_read:
        traits.add(IMMEDIATE_AND_MEMORY_SOURCE)
    return frozenset(traits)


def _make_record(address: int, size: int, mnemonic: str, op_str: str,
                 raw: Optional[bytes], md_detail: capstone.Cs) -> InstructionRecord:
    # strip prefixes such as "bnd", "lock", "notrack"
    mnemonic = mnemonic.rsplit(" ", 1)[-1].lower()
    if mnemonic.startswith("j") and mnemonic[1:] in CONDITION_ALIASES:
        cond = CONDITION_ALIASES[mnemonic[1:]]
        return InstructionRecord(address, size, "j" + cond, True, cond)
    traits = frozenset()
    if raw is not None and "[" in op_str and not mnemonic.startswith("j"):
        traits = _operand_traits(md_detail, raw, address)
    return InstructionRecord(address, size, mnemonic, traits=traits)


def _is_cond_jump_mnemonic(mnemonic: str) -> bool:
    mnemonic = mnemonic.rsplit(" ", 1)[-1]
    return mnemonic.startswith("j") and mnemonic[1:] in CONDITION_ALIASES


def decode_bytes(code: bytes, address: int = 0,
                 diagnostics: Optional[DecodeDiagnostics] = None,
                 pair_traits_only: bool = False) -> list[InstructionRecord]:
    """Linear sweep over *code* assumed to start at *address*.

    Operand traits need a second, detailed decode.  With
    *pair_traits_only* they are computed only for instructions directly
    followed by a conditional jump, the only place they are consulted.
    """
    md = _new_disassembler()
    md_detail = _new_disassembler(detail=True)
    raw_insns = []
    skipped = 0
    for insn in md.disasm_lite(code, address):
        if insn[2] == _BYTE_PSEUDO:
            skipped += insn[1]
        else:
            raw_insns.append(insn)
    if diagnostics is not None:
        diagnostics.bytes_skipped += skipped

    view = memoryview(code)
    records = []
    last = len(raw_insns) - 1
    for i, (addr, size, mnemonic, op_str) in enumerate(raw_insns):
        want_traits = not pair_traits_only or (
            i < last and raw_insns[i + 1][0] == addr + size and _is_cond_jump_mnemonic(raw_insns[i + 1][2]))
        off = addr - address
        raw = bytes(view[off:off + size]) if want_traits else None
        records.append(_make_record(addr, size, mnemonic, op_str, raw, md_detail))
    return records


def decode_stream(section: CodeSection,
                  diagnostics: Optional[DecodeDiagnostics] = None,
                  pair_traits_only: bool = False) -> list[InstructionRecord]:
    """Decode every byte of *section*; skipped bytes are added to *diagnostics*."""
    if not section.bytes:
        raise ValueError("cannot decode an empty section")
    return decode_bytes(section.bytes, section.virtual_address, diagnostics, pair_traits_only)


def find_adjacent_pairs(records: Iterable[InstructionRecord]) -> list[AdjacentPair]:
    """Pair every conditional jump with its byte-adjacent predecessor.

    Jumps at the start of the stream or right after a gap get no pair.
    Whether the predecessor can fuse is decided elsewhere.
    """
    pairs = []
    prev = None
    for rec in records:
        if rec.is_cond_jump and prev is not None and prev.end == rec.address:
            pairs.append(AdjacentPair(prev, rec))
        prev = rec
    return pairs


def count_cond_jumps(records: Iterable[InstructionRecord]) -> int:
    return sum(1 for r in records if r.is_cond_jump)
