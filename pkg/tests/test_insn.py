import re
import shutil
import subprocess

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jccscan.insn import (
    IMMEDIATE_AND_MEMORY_SOURCE,
    MEMORY_DESTINATION,
    RIP_RELATIVE,
    AdjacentPair,
    DecodeDiagnostics,
    InstructionRecord,
    canonical_condition,
    count_cond_jumps,
    decode_bytes,
    decode_stream,
    find_adjacent_pairs,
    negate_condition,
)
from jccscan.loader import CodeSection, load_sections

HAVE_GCC = all(shutil.which(t) for t in ("gcc", "objdump"))


def test_sub_jnz_loop():
    recs = decode_bytes(bytes([0x48, 0x83, 0xE9, 0x01, 0x75, 0xFA]), 0)
    assert recs == [
        InstructionRecord(0, 4, "sub"),
        InstructionRecord(4, 2, "jnz", True, "nz"),
    ]


def test_single_nop():
    sec = CodeSection(".text", 0x1000, b"\x90")
    assert decode_stream(sec) == [InstructionRecord(0x1000, 1, "nop")]


def test_empty_section_precondition():
    with pytest.raises(ValueError):
        CodeSection(".text", 0, b"")


@pytest.mark.parametrize("alias,canon", [
    ("jz", "z"), ("je", "z"), ("jnz", "nz"), ("jne", "nz"), ("jc", "b"), ("jb", "b"),
    ("jnae", "b"), ("jnc", "nb"), ("jae", "nb"), ("jnb", "nb"), ("jna", "na"), ("jbe", "na"),
    ("ja", "a"), ("jnbe", "a"), ("jnl", "nl"), ("jge", "nl"), ("jng", "ng"), ("jle", "ng"),
    ("jnle", "g"), ("jg", "g"), ("jl", "l"), ("jnge", "l"), ("jpe", "p"), ("jp", "p"),
    ("jpo", "np"), ("jnp", "np"), ("js", "s"), ("jns", "ns"), ("jo", "o"), ("jno", "no"),
])
def test_condition_aliases(alias, canon):
    assert canonical_condition(alias) == canon


def test_negation_is_involution():
    for tag in ("z", "b", "na", "s", "p", "l", "ng", "o"):
        assert negate_condition(negate_condition(tag)) == tag
        assert negate_condition(tag) != tag
    assert negate_condition("je") == "nz"
    assert negate_condition("jbe") == "a"


def test_all_jcc_opcodes_decode_as_conditional():
    # short forms 0x70..0x7f and near forms 0f 80..8f
    short = b"".join(bytes([0x70 + i, 0]) for i in range(16))
    near = b"".join(bytes([0x0F, 0x80 + i, 0, 0, 0, 0]) for i in range(16))
    recs = decode_bytes(short + near)
    assert len(recs) == 32 and all(r.is_cond_jump for r in recs)
    assert [r.cond_code for r in recs[:16]] == [r.cond_code for r in recs[16:]]
    assert len({r.cond_code for r in recs}) == 16


def test_jrcxz_and_loop_are_not_condition_code_jumps():
    recs = decode_bytes(bytes.fromhex("e300e200"))
    assert [r.is_cond_jump for r in recs] == [False, False]


def test_bnd_prefix_stripped():
    (rec,) = decode_bytes(bytes.fromhex("f27500"))
    assert rec.mnemonic == "jnz" and rec.length == 3


@pytest.mark.parametrize("hexcode,traits", [
    ("48833d0000000005", {RIP_RELATIVE, IMMEDIATE_AND_MEMORY_SOURCE}),  # cmp qword [rip], 5
    ("483b050000000000", {RIP_RELATIVE}),                               # cmp rax, [rip]
    ("0100", {MEMORY_DESTINATION}),                                     # add [rax], eax
    ("833805", {IMMEDIATE_AND_MEMORY_SOURCE}),                          # cmp dword [rax], 5
    ("830005", {MEMORY_DESTINATION, IMMEDIATE_AND_MEMORY_SOURCE}),      # add dword [rax], 5
    ("3b00", set()),                                                    # cmp eax, [rax]
    ("3900", set()),                                                    # cmp [rax], eax
    ("fe00", {MEMORY_DESTINATION}),                                     # inc byte [rax]
    ("4883e901", set()),                                                # sub rcx, 1
])
def test_operand_traits(hexcode, traits):
    (rec,) = decode_bytes(bytes.fromhex(hexcode))
    assert set(rec.traits) == traits


def test_resync_skips_one_byte_at_a_time():
    diag = DecodeDiagnostics()
    # 0x06 (push es) is invalid in 64-bit mode
    recs = decode_bytes(bytes.fromhex("900606904883e901"), 0x10, diag)
    assert diag.bytes_skipped == 2
    assert [(r.address, r.mnemonic) for r in recs] == [(0x10, "nop"), (0x13, "nop"), (0x14, "sub")]


def test_pairs_direct_adjacency():
    recs = [InstructionRecord(0, 4, "sub"), InstructionRecord(4, 2, "jnz", True, "nz")]
    assert find_adjacent_pairs(recs) == [AdjacentPair(recs[0], recs[1])]


def test_lone_jump_counted_not_paired():
    recs = [InstructionRecord(0, 2, "jnz", True, "nz")]
    assert find_adjacent_pairs(recs) == []
    assert count_cond_jumps(recs) == 1


def test_pairing_is_syntactic():
    recs = [InstructionRecord(0, 1, "nop"), InstructionRecord(1, 2, "jmp"), InstructionRecord(3, 2, "jz", True, "z")]
    pairs = find_adjacent_pairs(recs)
    assert len(pairs) == 1 and pairs[0].first.mnemonic == "jmp"


def test_no_pair_across_gap():
    recs = decode_bytes(bytes.fromhex("4883e901067500"))
    assert count_cond_jumps(recs) == 1
    assert find_adjacent_pairs(recs) == []


def test_record_invariants():
    with pytest.raises(ValueError):
        InstructionRecord(0, 16, "nop")
    with pytest.raises(ValueError):
        InstructionRecord(0, 2, "jz", True, None)
    with pytest.raises(ValueError):
        InstructionRecord(0, 2, "jz", True, "z", frozenset({RIP_RELATIVE}))
    with pytest.raises(ValueError):
        AdjacentPair(InstructionRecord(0, 4, "sub"), InstructionRecord(5, 2, "jz", True, "z"))


def _runs(records):
    run = [records[0]]
    for r in records[1:]:
        if r.address == run[-1].end:
            run.append(r)
        else:
            yield run
            run = [r]
    yield run


@settings(max_examples=200, deadline=None)
@given(st.binary(min_size=1, max_size=300), st.integers(0, 2**40))
def test_decode_properties(code, base):
    diag = DecodeDiagnostics()
    recs = decode_bytes(code, base, diag)
    addrs = [r.address for r in recs]
    assert addrs == sorted(set(addrs))
    assert all(base <= r.address and r.end <= base + len(code) for r in recs)
    assert sum(r.length for r in recs) + diag.bytes_skipped == len(code)
    assert len(find_adjacent_pairs(recs)) <= count_cond_jumps(recs)
    # idempotence: re-decoding the bytes of each contiguous run gives the same records
    for run in _runs(recs) if recs else ():
        start = run[0].address - base
        blob = code[start:run[-1].end - base]
        assert decode_bytes(blob, run[0].address) == run


@settings(max_examples=30, deadline=None)
@given(st.binary(min_size=1, max_size=200))
def test_pair_traits_mode_only_drops_unused_traits(code):
    full = decode_bytes(code, 0)
    lean = decode_bytes(code, 0, pair_traits_only=True)
    assert [(r.address, r.length, r.mnemonic, r.cond_code) for r in full] == \
        [(r.address, r.length, r.mnemonic, r.cond_code) for r in lean]
    assert find_adjacent_pairs(full) == find_adjacent_pairs(lean)


C_SOURCE = r"""
int collatz(unsigned long n) { int s = 0; while (n != 1) { n = (n & 1) ? 3*n+1 : n/2; s++; } return s; }
long sum(const long *a, int n) { long t = 0; for (int i = 0; i < n; i++) if (a[i] > 0) t += a[i]; return t; }
int find(const char *s, char c) { for (int i = 0; s[i]; i++) if (s[i] == c) return i; return -1; }
static volatile int g;
void spin(int k) { while (g < k) g++; if (g & 4) g = 0; }
"""


@pytest.mark.skipif(not HAVE_GCC, reason="gcc/objdump not installed")
def test_matches_objdump_linear_sweep(tmp_path):
    src = tmp_path / "k.c"
    src.write_text(C_SOURCE)
    obj = tmp_path / "k.o"
    subprocess.run(["gcc", "-O2", "-c", str(src), "-o", str(obj)], check=True)
    (text,) = [s for s in load_sections(obj) if s.name == ".text"]
    dump = subprocess.run(["objdump", "-d", "--insn-width=16", "-M", "intel", "-j", ".text", str(obj)],
                          check=True, capture_output=True, text=True).stdout
    expected = []
    for line in dump.splitlines():
        m = re.match(r"^\s+([0-9a-f]+):\t([0-9a-f ]+?)\s*\t(\S+)", line)
        if m:
            expected.append((int(m.group(1), 16), len(m.group(2).split()), m.group(3)))
    recs = decode_stream(text)
    assert [(r.address, r.length) for r in recs] == [(a, n) for a, n, _ in expected]
    for rec, (_, _, mnem) in zip(recs, expected):
        if re.fullmatch(r"j(?!mp|rcxz|ecxz)\w+", mnem):
            assert rec.is_cond_jump and rec.cond_code == canonical_condition(mnem)
