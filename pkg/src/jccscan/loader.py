"""Extraction of executable code sections from 64-bit ELF and PE32+ binaries.

Only the container metadata is interpreted; no relocation or dynamic
linking is performed.  Addresses are virtual addresses as stated by the
headers, so ``address % 64`` matches the runtime placement of page-aligned
mappings.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Literal, Union

import pefile
from elftools.common.exceptions import ELFError
from elftools.elf.constants import P_FLAGS, SH_FLAGS
from elftools.elf.elffile import ELFFile

BinaryInput = Union[str, "os.PathLike[str]", bytes, bytearray, memoryview]
FormatHint = Literal["elf", "pe", "auto"]

ADDRESS_LIMIT = 1 << 64

ELF_MAGIC = b"\x7fELF"
MZ_MAGIC = b"MZ"

IMAGE_SCN_MEM_EXECUTE = 0x20000000
PE32_PLUS_MAGIC = 0x20B


class LoaderError(Exception):
    """Base class for container loading failures."""


class UnsupportedFormatError(LoaderError):
    pass


class MalformedContainerError(LoaderError):
    pass


@dataclass(frozen=True)
class CodeSection:
    name: str
    virtual_address: int
    bytes: bytes = field(repr=False)
    source_path: str = "<memory>"
    file_offset: int = 0

    def __post_init__(self):
        if not self.bytes:
            raise ValueError("code section must be non-empty")
        if self.virtual_address < 0 or self.virtual_address + len(self.bytes) > ADDRESS_LIMIT:
            raise ValueError("section does not fit the 64-bit address space")

    @property
    def end_address(self) -> int:
        return self.virtual_address + len(self.bytes)


@dataclass(frozen=True)
class Symbol:
    name: str
    address: int
    size: int


def _read_input(source: BinaryInput) -> tuple[bytes, str]:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source), "<memory>"
    path = os.fspath(source)
    with open(path, "rb") as fh:
        return fh.read(), path


def detect_format(data: bytes) -> str:
    """Return ``"elf"`` or ``"pe"`` from the magic bytes, else raise."""
    if data[:4] == ELF_MAGIC:
        return "elf"
    if data[:2] == MZ_MAGIC and len(data) >= 0x40:
        pe_offset = int.from_bytes(data[0x3C:0x40], "little")
        if data[pe_offset:pe_offset + 4] == b"PE\0\0":
            return "pe"
    raise UnsupportedFormatError("magic bytes match neither ELF nor PE")


def load_sections(source: BinaryInput, format_hint: FormatHint = "auto") -> list[CodeSection]:
    """Return the executable sections of *source*, ordered by virtual address.

    *source* is a filesystem path or an in-memory buffer.  A binary with no
    executable sections yields an empty list.
    """
    data, path = _read_input(source)
    fmt = detect_format(data)
    if format_hint not in ("auto", fmt):
        raise UnsupportedFormatError(f"format hint {format_hint!r} does not match {fmt} magic")
    if fmt == "elf":
        sections = _elf_sections(data, path)
    else:
        sections = _pe_sections(data, path)
    return sorted(sections, key=lambda s: (s.virtual_address, s.name))


def _open_elf(data: bytes) -> ELFFile:
    if len(data) < 5:
        raise MalformedContainerError("truncated ELF identification")
    if data[4] != 2:
        raise UnsupportedFormatError("only 64-bit ELF is supported")
    try:
        elf = ELFFile(io.BytesIO(data))
    except ELFError as exc:
        raise MalformedContainerError(str(exc)) from exc
    except Exception as exc:  # construct raises a zoo of stream errors on truncation
        raise MalformedContainerError(f"unreadable ELF header: {exc}") from exc
    if elf["e_shoff"] + elf["e_shnum"] * elf["e_shentsize"] > len(data):
        raise MalformedContainerError("section header table extends past end of file")
    if elf["e_phoff"] + elf["e_phnum"] * elf["e_phentsize"] > len(data):
        raise MalformedContainerError("program header table extends past end of file")
    return elf


def _elf_sections(data: bytes, path: str) -> list[CodeSection]:
    elf = _open_elf(data)
    out = []
    try:
        if elf.num_sections() == 0:
            # section table stripped: fall back to executable PT_LOAD segments
            for i, seg in enumerate(elf.iter_segments()):
                if seg["p_type"] != "PT_LOAD" or not seg["p_flags"] & P_FLAGS.PF_X:
                    continue
                off, size = seg["p_offset"], seg["p_filesz"]
                if off + size > len(data):
                    raise MalformedContainerError(f"segment {i} extends past end of file")
                if size:
                    out.append(CodeSection(f"segment{i}", seg["p_vaddr"], data[off:off + size], path, off))
            return out
        for sec in elf.iter_sections():
            if not sec["sh_flags"] & SH_FLAGS.SHF_EXECINSTR:
                continue
            if sec["sh_type"] == "SHT_NOBITS" or sec["sh_size"] == 0:
                continue
            off, size = sec["sh_offset"], sec["sh_size"]
            if off + size > len(data):
                raise MalformedContainerError(f"section {sec.name!r} extends past end of file")
            out.append(CodeSection(sec.name, sec["sh_addr"], data[off:off + size], path, off))
    except ELFError as exc:
        raise MalformedContainerError(str(exc)) from exc
    except ValueError as exc:
        raise MalformedContainerError(str(exc)) from exc
    return out


def _open_pe(data: bytes) -> pefile.PE:
    try:
        pe = pefile.PE(data=data, fast_load=True)
    except pefile.PEFormatError as exc:
        raise MalformedContainerError(str(exc)) from exc
    if pe.OPTIONAL_HEADER is None or pe.OPTIONAL_HEADER.Magic != PE32_PLUS_MAGIC:
        raise UnsupportedFormatError("only PE32+ (64-bit) images are supported")
    return pe


def _pe_sections(data: bytes, path: str) -> list[CodeSection]:
    pe = _open_pe(data)
    base = pe.OPTIONAL_HEADER.ImageBase
    out = []
    for sec in pe.sections:
        if not sec.Characteristics & IMAGE_SCN_MEM_EXECUTE:
            continue
        off, size = sec.PointerToRawData, sec.SizeOfRawData
        if off + size > len(data):
            raise MalformedContainerError("section raw data extends past end of file")
        if sec.Misc_VirtualSize:
            size = min(size, sec.Misc_VirtualSize)  # drop file-alignment padding
        if size == 0:
            continue
        name = sec.Name.rstrip(b"\0").decode("latin-1")
        try:
            out.append(CodeSection(name, base + sec.VirtualAddress, data[off:off + size], path, off))
        except ValueError as exc:
            raise MalformedContainerError(str(exc)) from exc
    return out


def load_symbols(source: BinaryInput) -> list[Symbol]:
    """Function symbols (ELF symtab/dynsym, PE exports) sorted by address.

    Stripped binaries give an empty list.
    """
    data, _ = _read_input(source)
    fmt = detect_format(data)
    symbols: dict[tuple[int, str], Symbol] = {}
    if fmt == "elf":
        elf = _open_elf(data)
        for name in (".symtab", ".dynsym"):
            table = elf.get_section_by_name(name)
            if table is None or not hasattr(table, "iter_symbols"):
                continue
            for sym in table.iter_symbols():
                if sym["st_info"]["type"] != "STT_FUNC" or not sym["st_value"] or not sym.name:
                    continue
                symbols.setdefault((sym["st_value"], sym.name), Symbol(sym.name, sym["st_value"], sym["st_size"]))
    else:
        pe = _open_pe(data)
        pe.parse_data_directories(directories=[pefile.DIRECTORY_ENTRY["IMAGE_DIRECTORY_ENTRY_EXPORT"]])
        exports = getattr(pe, "DIRECTORY_ENTRY_EXPORT", None)
        base = pe.OPTIONAL_HEADER.ImageBase
        for exp in exports.symbols if exports else ():
            if exp.name and exp.address:
                name = exp.name.decode("latin-1")
                symbols.setdefault((base + exp.address, name), Symbol(name, base + exp.address, 0))
    return sorted(symbols.values(), key=lambda s: (s.address, s.name))
