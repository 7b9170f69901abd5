"""Lossless split of a PE/COFF executable into the regions the injector moves.

Layout handled here::

    [DOS header 64 B][DOS stub (e_lfanew - 64 B)][PE sig + COFF 24 B][optional header, sections, data...]

Nothing is ever executed; 32- and 64-bit images are treated identically.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import (
    BadMzMagic,
    BadPeSignature,
    ELfanewOutOfRange,
    MalformedSectionTable,
    NegativeOffset,
    OffsetOverflow,
    TooShort,
)

DOS_HEADER_LEN = 64
PE_HEADER_LEN = 24  # "PE\0\0" + 20-byte COFF file header
SECTION_ENTRY_LEN = 40
E_LFANEW_OFFSET = 60
MZ = b"MZ"
PE_SIGNATURE = b"PE\x00\x00"

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")

# offsets relative to the PE signature
_NUM_SECTIONS = 6
_SIZE_OF_OPTIONAL_HEADER = 20
_FILE_ALIGNMENT = PE_HEADER_LEN + 36
# offsets inside a section table entry
_SIZE_OF_RAW_DATA = 16
_POINTER_TO_RAW_DATA = 20


@dataclass(frozen=True)
class DosHeader:
    bytes: bytes

    @property
    def e_magic(self) -> bytes:
        return self.bytes[:2]

    @property
    def e_lfanew(self) -> int:
        return _U32.unpack_from(self.bytes, E_LFANEW_OFFSET)[0]

    def with_e_lfanew(self, value: int) -> "DosHeader":
        if not 0 <= value <= 0xFFFFFFFF:
            raise OffsetOverflow(f"e_lfanew {value} does not fit in 32 bits")
        b = bytearray(self.bytes)
        _U32.pack_into(b, E_LFANEW_OFFSET, value)
        return DosHeader(bytes(b))


@dataclass(frozen=True)
class SectionEntry:
    name: bytes
    raw_size: int
    raw_pointer: int
    header_offset: int

    @property
    def display_name(self) -> str:
        return self.name.rstrip(b"\x00").decode("latin-1")


@dataclass(frozen=True)
class PeView:
    dos_header: DosHeader
    dos_stub: bytes
    pe_header: bytes
    section_table: tuple[SectionEntry, ...]
    remainder: bytes

    def to_bytes(self) -> bytes:
        return self.dos_header.bytes + self.dos_stub + self.pe_header + self.remainder

    @property
    def e_lfanew(self) -> int:
        return self.dos_header.e_lfanew

    @property
    def number_of_sections(self) -> int:
        return _U16.unpack_from(self.pe_header, _NUM_SECTIONS)[0]

    @property
    def size_of_optional_header(self) -> int:
        return _U16.unpack_from(self.pe_header, _SIZE_OF_OPTIONAL_HEADER)[0]


def _section_table(region: bytes, base: int) -> tuple[SectionEntry, ...]:
    """Read the section table of a region starting at the PE signature.

    ``base`` is the file offset of ``region[0]``; entries report file offsets.
    """
    if len(region) < PE_HEADER_LEN or region[:4] != PE_SIGNATURE:
        raise MalformedSectionTable("region does not start with a PE header")
    count = _U16.unpack_from(region, _NUM_SECTIONS)[0]
    start = PE_HEADER_LEN + _U16.unpack_from(region, _SIZE_OF_OPTIONAL_HEADER)[0]
    stop = start + count * SECTION_ENTRY_LEN
    if stop > len(region):
        raise MalformedSectionTable(
            f"{count} section entries at +{start} need {stop} bytes, region has {len(region)}"
        )
    entries = []
    for i in range(count):
        off = start + i * SECTION_ENTRY_LEN
        entries.append(
            SectionEntry(
                name=region[off : off + 8],
                raw_size=_U32.unpack_from(region, off + _SIZE_OF_RAW_DATA)[0],
                raw_pointer=_U32.unpack_from(region, off + _POINTER_TO_RAW_DATA)[0],
                header_offset=base + off,
            )
        )
    return tuple(entries)


def parse_pe(data: bytes) -> PeView:
    buf = bytes(data)
    if len(buf) < DOS_HEADER_LEN + PE_HEADER_LEN:
        raise TooShort(f"need at least {DOS_HEADER_LEN + PE_HEADER_LEN} bytes, got {len(buf)}")
    if buf[:2] != MZ:
        raise BadMzMagic(f"file starts with {buf[:2]!r}, not {MZ!r}")
    dos = DosHeader(buf[:DOS_HEADER_LEN])
    lfanew = dos.e_lfanew
    if lfanew < DOS_HEADER_LEN or lfanew + PE_HEADER_LEN > len(buf):
        raise ELfanewOutOfRange(f"e_lfanew={lfanew} outside [{DOS_HEADER_LEN}, {len(buf) - PE_HEADER_LEN}]")
    if buf[lfanew : lfanew + 4] != PE_SIGNATURE:
        raise BadPeSignature(f"no PE signature at e_lfanew={lfanew}")

    sections = _section_table(buf[lfanew:], lfanew)
    for s in sections:
        if s.raw_size and s.raw_pointer + s.raw_size > len(buf):
            raise MalformedSectionTable(
                f"section {s.display_name!r} raw data [{s.raw_pointer}, +{s.raw_size}) exceeds file size {len(buf)}"
            )
    return PeView(
        dos_header=dos,
        dos_stub=buf[DOS_HEADER_LEN:lfanew],
        pe_header=buf[lfanew : lfanew + PE_HEADER_LEN],
        section_table=sections,
        remainder=buf[lfanew + PE_HEADER_LEN :],
    )


def snip_dos_from_pe(p: PeView) -> tuple[bytes, bytes]:
    """Split into (DOS header + stub, everything from the PE signature on)."""
    return p.dos_header.bytes + p.dos_stub, snip_remaining_from_pe(p)


def snip_remaining_from_pe(p: PeView) -> bytes:
    return p.pe_header + p.remainder


def file_alignment(pe_region: bytes) -> int | None:
    """FileAlignment from the optional header, or None when absent/implausible."""
    if len(pe_region) < PE_HEADER_LEN or pe_region[:4] != PE_SIGNATURE:
        return None
    if _U16.unpack_from(pe_region, _SIZE_OF_OPTIONAL_HEADER)[0] < 40:
        return None
    if len(pe_region) < _FILE_ALIGNMENT + 4:
        return None
    value = _U32.unpack_from(pe_region, _FILE_ALIGNMENT)[0]
    if value == 0 or value & (value - 1) or value > 0x10000:
        return None
    return value


def rebase_sections(pe_region: bytes, delta: int) -> bytes:
    """Shift every nonzero PointerToRawData in the section table by ``delta``.

    Only file offsets move; RVAs and every other byte are left alone.
    """
    sections = _section_table(pe_region, 0)
    if delta == 0:
        return bytes(pe_region)
    out = bytearray(pe_region)
    for s in sections:
        if s.raw_pointer == 0:
            continue
        moved = s.raw_pointer + delta
        if moved <= 0:
            raise NegativeOffset(f"section {s.display_name!r}: {s.raw_pointer} {delta:+d} is not a positive offset")
        if moved > 0xFFFFFFFF:
            raise OffsetOverflow(f"section {s.display_name!r}: {moved} does not fit in 32 bits")
        _U32.pack_into(out, s.header_offset + _POINTER_TO_RAW_DATA, moved)
    return bytes(out)
