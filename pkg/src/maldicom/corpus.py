"""Synthetic PE and DICOM builders for tests and corpus generation.

The PEs are structurally valid images (DOS header, stub, COFF, PE32
optional header, section table, aligned raw data) filled with random bytes;
they are not runnable programs.
"""

from __future__ import annotations

import struct

import numpy as np

from . import dicom
from .dicom import DataElement, DicomFile, Tag, TransferSyntax

# the classic 64-byte real-mode stub ("This program cannot be run in DOS mode.")
CLASSIC_STUB = (
    bytes.fromhex("0e1fba0e00b409cd21b8014ccd21")
    + b"This program cannot be run in DOS mode.\r\r\n$"
    + bytes(7)
)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def dos_header(e_lfanew: int) -> bytes:
    h = bytearray(64)
    struct.pack_into("<2sHHHHHHHHHH", h, 0, b"MZ", 0x90, 3, 0, 4, 0, 0xFFFF, 0, 0xB8, 0, 0)
    struct.pack_into("<H", h, 24, 0x40)
    struct.pack_into("<I", h, 60, e_lfanew)
    return bytes(h)


def minimal_pe(e_lfanew: int = 64, stub: bytes | None = None) -> bytes:
    """DOS header + stub + ``PE\\0\\0`` + 20 zero COFF bytes (no sections)."""
    if stub is None:
        stub = bytes(e_lfanew - 64)
    assert len(stub) == e_lfanew - 64
    return dos_header(e_lfanew) + stub + b"PE\x00\x00" + bytes(20)


def make_pe(
    stub_len: int = 64,
    n_sections: int = 1,
    seed=0,
    file_alignment: int = 0x200,
    section_sizes: list[int] | None = None,
) -> bytes:
    rng = _rng(seed)
    if stub_len <= len(CLASSIC_STUB):
        stub = CLASSIC_STUB[:stub_len]
    else:
        stub = CLASSIC_STUB + rng.integers(0, 256, stub_len - len(CLASSIC_STUB), dtype=np.uint8).tobytes()
    e_lfanew = 64 + stub_len
    opt_len = 224
    table_off = e_lfanew + 24 + opt_len
    headers_end = table_off + 40 * n_sections

    def align(x: int) -> int:
        return -(-x // file_alignment) * file_alignment

    size_of_headers = align(headers_end)
    if section_sizes is None:
        section_sizes = [int(rng.integers(1, 4)) * file_alignment for _ in range(n_sections)]
    pointers = []
    pos = size_of_headers
    for s in section_sizes:
        pointers.append(pos)
        pos += align(s)
    total = pos

    coff = struct.pack("<4sHHIIIHH", b"PE\x00\x00", 0x14C, n_sections, 0x5F5E100, 0, 0, opt_len, 0x0102)
    opt = bytearray(opt_len)
    struct.pack_into("<HBBIII", opt, 0, 0x10B, 14, 0, sum(section_sizes), 0, 0)
    struct.pack_into("<II", opt, 16, 0x1000, 0x1000)  # entry point, base of code
    struct.pack_into("<III", opt, 28, 0x400000, 0x1000, file_alignment)
    struct.pack_into("<HHHHHH", opt, 40, 6, 0, 0, 0, 6, 0)
    struct.pack_into("<III", opt, 56, 0x1000 * (n_sections + 1), size_of_headers, 0)
    struct.pack_into("<HH", opt, 68, 2, 0x8140)
    struct.pack_into("<IIIIII", opt, 72, 0x100000, 0x1000, 0x100000, 0x1000, 0, 16)

    table = bytearray()
    names = [b".text", b".rdata", b".data", b".rsrc", b".reloc"]
    for i, (size, ptr) in enumerate(zip(section_sizes, pointers)):
        name = names[i % len(names)].ljust(8, b"\x00")
        table += struct.pack(
            "<8sIIIIIIHHI", name, size, 0x1000 * (i + 1), align(size), ptr, 0, 0, 0, 0, 0x60000020
        )

    out = bytearray(total)
    head = dos_header(e_lfanew) + stub + coff + bytes(opt) + bytes(table)
    out[: len(head)] = head
    for size, ptr in zip(section_sizes, pointers):
        out[ptr : ptr + size] = rng.integers(0, 256, size, dtype=np.uint8).tobytes()
    return bytes(out)


# --- DICOM -----------------------------------------------------------------

_META_POOL = [
    (Tag(0x0002, 0x0001), "OB", b"\x00\x01"),
    (Tag(0x0002, 0x0002), "UI", b"1.2.840.10008.5.1.4.1.1.2\x00"),
    (Tag(0x0002, 0x0003), "UI", b"1.2.826.0.1.3680043.8.498.1\x00"),
    (Tag(0x0002, 0x0012), "UI", b"1.2.826.0.1.3680043.8.498\x00"),
    (Tag(0x0002, 0x0013), "SH", b"MALDICOM_TEST "),
]
_TEXT_VRS = ["CS", "LO", "SH", "DA", "TM", "DS", "IS", "UI", "PN"]


def _meta_elements(n_meta: int, ts: TransferSyntax, rng: np.random.Generator) -> list[DataElement]:
    if n_meta == 0:
        return []
    uid = dicom.EXPLICIT_VR_LE_UID if ts.explicit else dicom.IMPLICIT_VR_LE_UID
    ts_elem = DataElement.create(Tag(0x0002, 0x0010), "UI", uid.encode() + b"\x00")
    pool = [DataElement.create(t, vr, v) for t, vr, v in _META_POOL]
    chosen = [ts_elem]
    if n_meta >= 2:
        chosen.append(DataElement(Tag(0x0002, 0x0000), "UL", 4, bytes(4)))
    extra = rng.choice(len(pool), size=min(n_meta - len(chosen), len(pool)), replace=False)
    chosen += [pool[i] for i in extra]
    return sorted(chosen, key=lambda e: e.tag)


def _body_elements(n_body: int, rng: np.random.Generator, patient_name: bytes) -> list[DataElement]:
    if n_body == 0:
        return []
    with_pixels = n_body >= 2 and rng.random() < 0.5
    elems = {Tag(0x0010, 0x0010): DataElement.create(Tag(0x0010, 0x0010), "PN", patient_name)}
    while len(elems) < n_body - with_pixels:
        group = int(rng.choice([0x0008, 0x0010, 0x0018, 0x0020, 0x0028, 0x0011, 0x0029]))
        tag = Tag(group, int(rng.integers(0x0001, 0xFFFF)))
        if tag in elems:
            continue
        if tag.is_private or rng.random() < 0.15:
            vr = "OB" if rng.random() < 0.5 else "UN"
            value = rng.integers(0, 256, int(rng.integers(0, 200)), dtype=np.uint8).tobytes()
        else:
            vr = str(rng.choice(_TEXT_VRS))
            value = rng.integers(0x30, 0x5B, int(rng.integers(1, 40)), dtype=np.uint8).tobytes()
        elems[tag] = DataElement.create(tag, vr, value)
    if with_pixels:
        tag = Tag(0x7FE0, 0x0010)
        elems[tag] = DataElement.create(tag, "OW", rng.integers(0, 256, 512, dtype=np.uint8).tobytes())
    return sorted(elems.values(), key=lambda e: e.tag)


def make_dicom(
    n_meta: int = 3,
    n_body: int = 10,
    seed=0,
    implicit: bool = False,
    preamble: bytes | None = None,
    patient_name: bytes = b"DOE^JANE",
) -> bytes:
    rng = _rng(seed)
    ts = TransferSyntax.IMPLICIT_VR_LITTLE_ENDIAN if implicit else TransferSyntax.EXPLICIT_VR_LITTLE_ENDIAN
    meta = _meta_elements(n_meta, ts, rng)
    body = _body_elements(n_body, rng, patient_name)
    if implicit:
        body = [DataElement(e.tag, None, e.length, e.value, e.original_length) for e in body]
    f = DicomFile(preamble if preamble is not None else bytes(128), dicom.MAGIC, tuple(meta), tuple(body), ts)
    return dicom.serialize_dicom(f)


def sequence_element(tag: Tag = Tag(0x0008, 0x1140), explicit: bool = True) -> bytes:
    """Encoded undefined-length SQ holding one undefined-length item and one defined item."""
    inner = DataElement.create(Tag(0x0008, 0x1150), "UI", b"1.2.3.4")
    inner_bytes = dicom.encode_element(inner, explicit)
    item_undef = struct.pack("<HHI", 0xFFFE, 0xE000, 0xFFFFFFFF) + inner_bytes + struct.pack("<HHI", 0xFFFE, 0xE00D, 0)
    item_def = struct.pack("<HHI", 0xFFFE, 0xE000, len(inner_bytes)) + inner_bytes
    content = item_undef + item_def + struct.pack("<HHI", 0xFFFE, 0xE0DD, 0)
    if explicit:
        header = struct.pack("<HH2s2xI", tag.group, tag.element, b"SQ", 0xFFFFFFFF)
    else:
        header = struct.pack("<HHI", tag.group, tag.element, 0xFFFFFFFF)
    return header + content


def large_dicom(path, size: int, chunk: int = 1 << 24) -> None:
    """Write a clean DICOM of at least ``size`` bytes (one big OB element) without holding it in memory."""
    meta = make_dicom(n_meta=3, n_body=0, seed=1)
    value_len = max(0, size - len(meta) - 12)
    value_len += value_len % 2
    header = struct.pack("<HH2s2xI", 0x7FE0, 0x0010, b"OB", value_len)
    with open(path, "wb") as fh:
        fh.write(meta + header)
        block = bytes(min(chunk, value_len))
        left = value_len
        while left:
            n = min(left, len(block))
            fh.write(block[:n])
            left -= n
