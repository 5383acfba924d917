"""Offset-shifted ``sub``/``jnz`` loop benchmark, as assembly or raw bytes.

The assembly path puts the loop label at ``offset_b`` within a 64-byte
line.  The raw-byte path has no alignment directives, so the loop lands at
``offset_b + 7`` (after the counter setup) relative to a 64-aligned origin.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

NOP = b"\x90"
MOV_RCX_IMM32 = b"\x48\xc7\xc1"
SUB_RCX_1 = b"\x48\x83\xe9\x01"
JNZ_REL8 = b"\x75"
COUNTER_SETUP_LEN = 7
PAIR_GEOMETRY = (len(SUB_RCX_1), 2)


@dataclass(frozen=True)
class BenchSpec:
    offset_b: int
    iterations: int = 200
    instrument: bool = True

    def __post_init__(self):
        if not 0 <= self.offset_b <= 63:
            raise ValueError("offset_b must be in 0..63")
        if not 1 <= self.iterations < 1 << 31:
            raise ValueError("iterations must be in 1..2**31-1")

    @property
    def sub_index(self) -> int:
        """Index of the ``sub`` in :func:`emit_loop_bytes` output."""
        return self.offset_b + COUNTER_SETUP_LEN


_TIMESTAMP = """\
    lfence
    # call PAPI_read
    lfence
    rdtsc
    lfence
"""

_TIMESTAMP_END = """\
    lfence
    rdtsc
    lfence
    # call PAPI_read
"""


def emit_assembly(spec: BenchSpec, symbol: str = "bench") -> str:
    """GNU as source (Intel syntax) for the benchmark loop.

    The counter setup sits before the 64-byte alignment so that the
    ``loop`` label ends up exactly ``offset_b`` bytes into a line.
    """
    parts = [
        "    .intel_syntax noprefix\n",
        "    .text\n",
        f"    .globl {symbol}\n",
        f"    .type {symbol}, @function\n",
        "    .p2align 6\n",
        f"{symbol}:\n",
    ]
    if spec.instrument:
        parts.append(_TIMESTAMP)
    parts += [
        f"    mov rcx,{spec.iterations:#x}\n",
        "    # pad with one-byte nops so the loop starts offset_b bytes into a line\n",
        "    .p2align 6, 0x90\n",
        f"    .rept {spec.offset_b}\n",
        "    nop\n",
        "    .endr\n",
        "loop:\n",
        "    sub rcx, 1\n",
        "    jnz loop\n",
    ]
    if spec.instrument:
        parts.append(_TIMESTAMP_END)
    parts += ["    ret\n", f"    .size {symbol}, .-{symbol}\n"]
    return "".join(parts)


def emit_loop_bytes(spec: BenchSpec) -> bytes:
    """Raw machine code: nops, ``mov rcx, imm32``, ``sub rcx, 1``, ``jnz`` back."""
    jnz = JNZ_REL8 + (-(len(SUB_RCX_1) + 2) & 0xFF).to_bytes(1, "little")
    return (NOP * spec.offset_b
            + MOV_RCX_IMM32 + spec.iterations.to_bytes(4, "little")
            + SUB_RCX_1 + jnz)


def write_loop_bytes(spec: BenchSpec, path: str, base: int = 0x401000) -> str:
    """Write the raw loop to *path* and a ``<path>.base`` sidecar; return the sidecar path."""
    if base % 64:
        raise ValueError("base must be 64-byte aligned")
    with open(path, "wb") as fh:
        fh.write(emit_loop_bytes(spec))
    sidecar = os.fspath(path) + ".base"
    with open(sidecar, "w", encoding="utf-8") as fh:
        fh.write(f"base={base:#x}\n"
                 f"offset_b={spec.offset_b}\n"
                 f"sub_offset={spec.sub_index % 64}\n")
    return sidecar
