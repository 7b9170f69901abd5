"""Byte-exact DICOM Part-10 reader/writer.

Only what is needed to host a payload and to round-trip real files is
modelled: the 128-byte preamble, the ``DICM`` magic, the group-0002 file
meta elements and a flat list of top-level body elements.  Sequences and
encapsulated pixel data with undefined length are kept as opaque byte runs.
"""

from __future__ import annotations

import bisect
import enum
import struct
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Sequence

from .errors import (
    BadMagic,
    InvariantViolation,
    MalformedSequence,
    TooShort,
    TruncatedElement,
    UnsupportedTransferSyntax,
)

PREAMBLE_LEN = 128
MAGIC = b"DICM"
HEADER_LEN = PREAMBLE_LEN + len(MAGIC)
UNDEFINED_LENGTH = 0xFFFFFFFF

VALID_VRS = frozenset(
    "AE AS AT CS DA DS DT FL FD IS LO LT OB OD OF OL OV OW PN SH SL SQ SS ST "
    "SV TM UC UI UL UN UR US UT UV".split()
)
# VRs with 2 reserved bytes and a 32-bit length in explicit VR encoding
LONG_VRS = frozenset("OB OD OF OL OV OW SQ SV UC UN UR UT UV".split())

IMPLICIT_VR_LE_UID = "1.2.840.10008.1.2"
EXPLICIT_VR_LE_UID = "1.2.840.10008.1.2.1"
_UNSUPPORTED_UIDS = {
    "1.2.840.10008.1.2.2": "Explicit VR Big Endian",
    "1.2.840.10008.1.2.1.99": "Deflated Explicit VR Little Endian",
}

_ITEM = (0xFFFE, 0xE000)
_ITEM_DELIM = (0xFFFE, 0xE00D)
_SEQ_DELIM = (0xFFFE, 0xE0DD)
_MAX_NESTING = 32

_TAG = struct.Struct("<HH")
_IMPLICIT_HEADER = struct.Struct("<HHI")
_SHORT_HEADER = struct.Struct("<HH2sH")
_LONG_HEADER = struct.Struct("<HH2s2xI")


class TransferSyntax(enum.Enum):
    EXPLICIT_VR_LITTLE_ENDIAN = "explicit"
    IMPLICIT_VR_LITTLE_ENDIAN = "implicit"

    @property
    def explicit(self) -> bool:
        return self is TransferSyntax.EXPLICIT_VR_LITTLE_ENDIAN


@dataclass(frozen=True, order=True)
class Tag:
    group: int
    element: int

    def __post_init__(self):
        if not (0 <= self.group <= 0xFFFF and 0 <= self.element <= 0xFFFF):
            raise InvariantViolation(f"tag component out of range: {self.group:#x},{self.element:#x}")

    @property
    def is_private(self) -> bool:
        return self.group % 2 == 1

    @property
    def is_public(self) -> bool:
        return not self.is_private

    @classmethod
    def parse(cls, text: str) -> "Tag":
        """Parse ``"GGGG,EEEE"`` (hex, optional parentheses)."""
        body = text.strip().strip("()")
        try:
            g, e = body.split(",")
            return cls(int(g, 16), int(e, 16))
        except ValueError as exc:
            raise ValueError(f"expected GGGG,EEEE, got {text!r}") from exc

    def __str__(self) -> str:
        return f"({self.group:04X},{self.element:04X})"


@dataclass(frozen=True)
class DataElement:
    """One top-level data element.

    ``original_length`` is a shadow field: it remembers the unpadded byte
    count when :meth:`create` had to pad an odd value.  It is never written
    to disk.
    """

    tag: Tag
    vr: Optional[str]
    length: int
    value: bytes
    original_length: Optional[int] = field(default=None, compare=False)

    @classmethod
    def create(cls, tag: Tag, vr: Optional[str], value: bytes) -> "DataElement":
        raw_len = len(value)
        if raw_len % 2:
            return cls(tag, vr, raw_len + 1, bytes(value) + b"\x00", original_length=raw_len)
        return cls(tag, vr, raw_len, bytes(value))

    @property
    def undefined_length(self) -> bool:
        return self.length == UNDEFINED_LENGTH

    @property
    def payload(self) -> bytes:
        """Value with any padding added by :meth:`create` removed."""
        if self.original_length is None:
            return self.value
        return self.value[: self.original_length]

    def check(self) -> None:
        if self.undefined_length:
            return
        if self.length != len(self.value):
            raise InvariantViolation(f"{self.tag}: length {self.length} != value size {len(self.value)}")
        if self.length % 2:
            raise InvariantViolation(f"{self.tag}: odd value length {self.length}")


@dataclass(frozen=True)
class DicomFile:
    preamble: bytes
    magic: bytes
    meta_elements: tuple[DataElement, ...]
    body_elements: tuple[DataElement, ...]
    transfer_syntax: TransferSyntax = TransferSyntax.EXPLICIT_VR_LITTLE_ENDIAN

    @property
    def elements(self) -> tuple[DataElement, ...]:
        return self.meta_elements + self.body_elements

    def validate(self) -> None:
        if len(self.preamble) != PREAMBLE_LEN:
            raise InvariantViolation(f"preamble must be {PREAMBLE_LEN} bytes, got {len(self.preamble)}")
        if self.magic != MAGIC:
            raise InvariantViolation(f"magic must be {MAGIC!r}, got {self.magic!r}")
        for e in self.meta_elements:
            if e.tag.group != 0x0002:
                raise InvariantViolation(f"meta element {e.tag} is not in group 0002")
        for seq in (self.meta_elements, self.body_elements):
            for a, b in zip(seq, seq[1:]):
                if b.tag < a.tag:
                    raise InvariantViolation(f"tags out of order: {a.tag} then {b.tag}")


def empty_dicom(preamble: bytes = bytes(PREAMBLE_LEN)) -> DicomFile:
    return DicomFile(preamble, MAGIC, (), ())


# --- reading --------------------------------------------------------------

def _read_header(buf: bytes, pos: int, explicit: bool) -> tuple[Tag, Optional[str], int, int]:
    """Return (tag, vr, length, header_size) for the element at ``pos``."""
    end = len(buf)
    if pos + 8 > end:
        raise TruncatedElement(f"element header at {pos} runs past end of input ({end})")
    group, elem = _TAG.unpack_from(buf, pos)
    # item and delimiter tags never carry a VR
    if not explicit or group == 0xFFFE:
        _, _, length = _IMPLICIT_HEADER.unpack_from(buf, pos)
        return Tag(group, elem), None, length, 8
    vr = buf[pos + 4 : pos + 6].decode("latin-1")
    if vr in LONG_VRS:
        if pos + 12 > end:
            raise TruncatedElement(f"long-form header at {pos} runs past end of input")
        _, _, _, length = _LONG_HEADER.unpack_from(buf, pos)
        return Tag(group, elem), vr, length, 12
    _, _, _, length = _SHORT_HEADER.unpack_from(buf, pos)
    return Tag(group, elem), vr, length, 8


def _skip_undefined(buf: bytes, pos: int, explicit: bool, depth: int) -> int:
    """Walk items of an undefined-length element; return offset past its delimiter."""
    if depth > _MAX_NESTING:
        raise MalformedSequence("sequence nesting too deep")
    end = len(buf)
    while True:
        if pos + 8 > end:
            raise TruncatedElement("undefined-length element missing its sequence delimiter")
        group, elem, length = _IMPLICIT_HEADER.unpack_from(buf, pos)
        pos += 8
        if (group, elem) == _SEQ_DELIM:
            return pos
        if (group, elem) != _ITEM:
            raise MalformedSequence(f"unexpected tag ({group:04X},{elem:04X}) inside sequence")
        if length != UNDEFINED_LENGTH:
            if pos + length > end:
                raise TruncatedElement("sequence item runs past end of input")
            pos += length
            continue
        # undefined-length item: nested dataset until item delimiter
        while True:
            if pos + 8 > end:
                raise TruncatedElement("undefined-length item missing its delimiter")
            if _TAG.unpack_from(buf, pos) == _ITEM_DELIM:
                pos += 8
                break
            _, _, length, hdr = _read_header(buf, pos, explicit)
            pos += hdr
            if length == UNDEFINED_LENGTH:
                pos = _skip_undefined(buf, pos, explicit, depth + 1)
            elif pos + length > end:
                raise TruncatedElement("nested element runs past end of input")
            else:
                pos += length


def _read_element(buf: bytes, pos: int, explicit: bool) -> tuple[DataElement, int]:
    tag, vr, length, hdr = _read_header(buf, pos, explicit)
    start = pos + hdr
    if length == UNDEFINED_LENGTH:
        stop = _skip_undefined(buf, start, explicit, 0)
    else:
        stop = start + length
        if stop > len(buf):
            raise TruncatedElement(
                f"{tag} declares {length} bytes at offset {start}, only {len(buf) - start} remain"
            )
    return DataElement(tag, vr, length, bytes(buf[start:stop])), stop


def _transfer_syntax_uid(meta: Sequence[DataElement]) -> Optional[str]:
    for e in meta:
        if e.tag == Tag(0x0002, 0x0010):
            return e.value.rstrip(b"\x00 ").decode("ascii", "replace")
    return None


def _looks_explicit(buf: bytes, pos: int) -> bool:
    if pos + 6 > len(buf):
        return True
    return buf[pos + 4 : pos + 6].decode("latin-1") in VALID_VRS


def parse_dicom(data: bytes) -> DicomFile:
    """Parse a Part-10 file.  ``serialize_dicom`` restores the exact input."""
    buf = bytes(data)
    if len(buf) < HEADER_LEN:
        raise TooShort(f"need at least {HEADER_LEN} bytes, got {len(buf)}")
    if buf[PREAMBLE_LEN:HEADER_LEN] != MAGIC:
        raise BadMagic(f"bytes 128..132 are {buf[PREAMBLE_LEN:HEADER_LEN]!r}, not {MAGIC!r}")

    pos = HEADER_LEN
    meta = []
    while pos + 4 <= len(buf) and _TAG.unpack_from(buf, pos)[0] == 0x0002:
        elem, pos = _read_element(buf, pos, explicit=True)
        meta.append(elem)

    uid = _transfer_syntax_uid(meta)
    if uid in _UNSUPPORTED_UIDS:
        raise UnsupportedTransferSyntax(f"{_UNSUPPORTED_UIDS[uid]} ({uid}) is not supported")
    if uid == IMPLICIT_VR_LE_UID or not _looks_explicit(buf, pos):
        ts = TransferSyntax.IMPLICIT_VR_LITTLE_ENDIAN
    else:
        ts = TransferSyntax.EXPLICIT_VR_LITTLE_ENDIAN

    body = []
    while pos < len(buf):
        elem, pos = _read_element(buf, pos, ts.explicit)
        body.append(elem)

    return DicomFile(buf[:PREAMBLE_LEN], MAGIC, tuple(meta), tuple(body), ts)


def iter_elements(data: bytes) -> Iterator[tuple[int, DataElement]]:
    """Yield ``(value_offset, element)`` pairs in file order."""
    f = parse_dicom(data)
    pos = HEADER_LEN
    for explicit, seq in ((True, f.meta_elements), (f.transfer_syntax.explicit, f.body_elements)):
        for e in seq:
            hdr = header_size(e, explicit)
            yield pos + hdr, e
            pos += hdr + len(e.value)


# --- writing --------------------------------------------------------------

def header_size(e: DataElement, explicit: bool) -> int:
    if not explicit or e.tag.group == 0xFFFE:
        return 8
    return 12 if e.vr in LONG_VRS else 8


def encode_element(e: DataElement, explicit: bool) -> bytes:
    if not explicit or e.tag.group == 0xFFFE:
        return _IMPLICIT_HEADER.pack(e.tag.group, e.tag.element, e.length) + e.value
    if e.vr is None or len(e.vr) != 2:
        raise InvariantViolation(f"{e.tag}: explicit VR encoding needs a 2-character VR")
    vr = e.vr.encode("latin-1")
    if e.vr in LONG_VRS:
        return _LONG_HEADER.pack(e.tag.group, e.tag.element, vr, e.length) + e.value
    if e.length > 0xFFFF:
        raise InvariantViolation(f"{e.tag}: {e.length} bytes does not fit VR {e.vr}'s 16-bit length")
    return _SHORT_HEADER.pack(e.tag.group, e.tag.element, vr, e.length) + e.value


def _with_group_length(meta: Sequence[DataElement]) -> list[DataElement]:
    meta = list(meta)
    for i, e in enumerate(meta):
        if e.tag == Tag(0x0002, 0x0000):
            rest = sum(len(encode_element(m, True)) for m in meta[i + 1 :])
            meta[i] = replace(e, length=4, value=struct.pack("<I", rest), original_length=None)
            break
    return meta


def serialize_dicom(f: DicomFile) -> bytes:
    f.validate()
    out = [f.preamble, f.magic]
    out.extend(encode_element(e, True) for e in _with_group_length(f.meta_elements))
    out.extend(encode_element(e, f.transfer_syntax.explicit) for e in f.body_elements)
    return b"".join(out)


def meta_info_size(f: DicomFile) -> int:
    """Serialized length of the group-0002 elements (bytes between DICM and the body)."""
    return sum(len(encode_element(e, True)) for e in f.meta_elements)


# --- element access ---------------------------------------------------------

def get_element(f: DicomFile, tag: Tag) -> Optional[DataElement]:
    for e in f.elements:
        if e.tag == tag:
            return e
    return None


def upsert_element(f: DicomFile, e: DataElement) -> DicomFile:
    """Return a copy of ``f`` with ``e`` inserted in tag order (replacing any same-tag element)."""
    e.check()
    if e.vr is None and (f.transfer_syntax.explicit or e.tag.group == 0x0002):
        raise InvariantViolation(f"{e.tag}: explicit VR encoding needs a VR")
    seq = list(f.meta_elements if e.tag.group == 0x0002 else f.body_elements)
    tags = [x.tag for x in seq]
    i = bisect.bisect_left(tags, e.tag)
    if i < len(seq) and seq[i].tag == e.tag:
        seq[i] = e
    else:
        seq.insert(i, e)
    if e.tag.group == 0x0002:
        return replace(f, meta_elements=tuple(seq))
    return replace(f, body_elements=tuple(seq))


def replace_preamble(f: DicomFile, preamble: bytes) -> DicomFile:
    if len(preamble) != PREAMBLE_LEN:
        raise InvariantViolation(f"preamble must be {PREAMBLE_LEN} bytes, got {len(preamble)}")
    return replace(f, preamble=bytes(preamble))


def body_offset_before(f: DicomFile, tag: Tag) -> int:
    """File offset at which an element with ``tag`` would start in the body."""
    explicit = f.transfer_syntax.explicit
    pos = HEADER_LEN + meta_info_size(f)
    for e in f.body_elements:
        if not e.tag < tag:
            break
        pos += header_size(e, explicit) + len(e.value)
    return pos
