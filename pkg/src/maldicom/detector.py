"""Payload scanner for DICOM files.

Two modes:

* ``fast`` reads a fixed head of the file plus a 4-byte probe at the
  ``e_lfanew`` target.  Cost does not depend on file size.
* ``full`` reads everything, parses the elements and carves private tags
  for PE signatures.  Cost is linear in file size.
"""

from __future__ import annotations

import enum
import io
import json
import math
import os
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import BinaryIO, Optional, Union

from . import dicom, pe
from .dicom import DicomFile
from .errors import EmptyWindow, MalDicomError

DEFAULT_ENTROPY_THRESHOLD = 3.0
FAST_PATH_HEAD = 2048
TIFF_MAGICS = (b"II*\x00", b"MM\x00*")


class EvidenceKind(str, enum.Enum):
    MZ_MAGIC_IN_PREAMBLE = "MzMagicInPreamble"
    E_LFANEW_TARGETS_PE_SIG = "ELfanewTargetsPeSig"
    PE_SIG_IN_PRIVATE_TAG = "PeSigInPrivateTag"
    HIGH_PREAMBLE_ENTROPY = "HighPreambleEntropy"
    NON_ZERO_NON_WHITELISTED_PREAMBLE = "NonZeroNonWhitelistedPreamble"
    PARSE_FAILURE = "ParseFailure"


class Verdict(str, enum.Enum):
    CLEAN = "Clean"
    SUSPICIOUS = "Suspicious"
    POLYGLOT = "Polyglot"


EXIT_CODES = {Verdict.CLEAN: 0, Verdict.SUSPICIOUS: 2, Verdict.POLYGLOT: 3}


@dataclass(frozen=True)
class Evidence:
    kind: EvidenceKind
    offset: int
    detail: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "offset": self.offset, "detail": self.detail}


@dataclass(frozen=True)
class DetectorConfig:
    entropy_threshold: float = DEFAULT_ENTROPY_THRESHOLD
    mode: str = "full"

    def __post_init__(self):
        if self.mode not in ("fast", "full"):
            raise ValueError(f"mode must be 'fast' or 'full', got {self.mode!r}")


@dataclass
class ScanReport:
    path: str
    verdict: Verdict
    entropy_bits: float
    evidence: list[Evidence] = field(default_factory=list)
    bytes_read: int = 0

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "verdict": self.verdict.value,
            "entropy_bits": self.entropy_bits,
            "evidence": [e.to_dict() for e in self.evidence],
            "bytes_read": self.bytes_read,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def shannon_entropy(window: bytes) -> float:
    """Byte entropy in bits per byte, in [0, 8]."""
    n = len(window)
    if n == 0:
        raise EmptyWindow("entropy of an empty window is undefined")
    h = 0.0
    for count in Counter(window).values():
        p = count / n
        h -= p * math.log2(p)
    # -0.0 for constant input
    return h + 0.0


def _is_whitelisted(preamble: bytes) -> bool:
    return not any(preamble) or preamble[:4] in TIFF_MAGICS


def _preamble_evidence(preamble: bytes, probe, file_len: int, threshold: float) -> list[Evidence]:
    """``probe(offset, n)`` returns file bytes; used for the e_lfanew target check."""
    found = []
    if preamble[:2] == pe.MZ:
        found.append(Evidence(EvidenceKind.MZ_MAGIC_IN_PREAMBLE, 0, "preamble starts with MZ"))
    if len(preamble) >= pe.E_LFANEW_OFFSET + 4:
        target = struct.unpack_from("<I", preamble, pe.E_LFANEW_OFFSET)[0]
        if target + 4 <= file_len and probe(target, 4) == pe.PE_SIGNATURE:
            found.append(
                Evidence(EvidenceKind.E_LFANEW_TARGETS_PE_SIG, target, f"e_lfanew={target} points at PE\\0\\0")
            )
    if preamble:
        h = shannon_entropy(preamble)
        if h > threshold:
            found.append(
                Evidence(EvidenceKind.HIGH_PREAMBLE_ENTROPY, 0, f"entropy {h:.3f} > {threshold:g} bits/byte")
            )
        if not _is_whitelisted(preamble):
            first = next(i for i, b in enumerate(preamble) if b)
            found.append(
                Evidence(
                    EvidenceKind.NON_ZERO_NON_WHITELISTED_PREAMBLE,
                    first,
                    f"first non-zero preamble byte at {first}",
                )
            )
    return found


def scan_preamble(
    f: DicomFile, config: DetectorConfig = DetectorConfig(), data: Optional[bytes] = None
) -> list[Evidence]:
    """Preamble checks.  ``data`` is the file's bytes; rebuilt from ``f`` if omitted."""
    if data is None:
        data = dicom.serialize_dicom(f)
    return _preamble_evidence(
        f.preamble, lambda off, n: data[off : off + n], len(data), config.entropy_threshold
    )


def scan_private_tags(f: DicomFile, data: Optional[bytes] = None) -> list[Evidence]:
    if data is None:
        data = dicom.serialize_dicom(f)
    found = []
    for value_offset, e in dicom.iter_elements(data):
        if not e.tag.is_private or e.tag.group == 0xFFFE:
            continue
        if e.value[:2] == pe.MZ:
            hit, what = 0, "MZ"
        else:
            hit, what = e.value.find(pe.PE_SIGNATURE), "PE\\0\\0"
            if hit < 0:
                continue
        found.append(
            Evidence(
                EvidenceKind.PE_SIG_IN_PRIVATE_TAG,
                value_offset + hit,
                f"{what} in private tag {e.tag} at value offset {hit}",
            )
        )
    return found


class CountingReader:
    """Wrap a binary stream and count the bytes actually read."""

    def __init__(self, raw: BinaryIO):
        self.raw = raw
        self.bytes_read = 0

    def read(self, n: int = -1) -> bytes:
        chunk = self.raw.read(n)
        self.bytes_read += len(chunk)
        return chunk

    def seek(self, offset: int, whence: int = io.SEEK_SET) -> int:
        return self.raw.seek(offset, whence)

    def size(self) -> int:
        here = self.raw.tell()
        end = self.raw.seek(0, io.SEEK_END)
        self.raw.seek(here)
        return end


Source = Union[bytes, bytearray, str, os.PathLike, BinaryIO]


def _verdict(evidence: list[Evidence]) -> Verdict:
    kinds = {e.kind for e in evidence}
    if {EvidenceKind.MZ_MAGIC_IN_PREAMBLE, EvidenceKind.E_LFANEW_TARGETS_PE_SIG} <= kinds:
        return Verdict.POLYGLOT
    return Verdict.SUSPICIOUS if evidence else Verdict.CLEAN


def _classify_stream(reader: CountingReader, path: str, config: DetectorConfig) -> ScanReport:
    size = reader.size()
    if config.mode == "fast":
        head = reader.read(min(FAST_PATH_HEAD, size))
    else:
        head = reader.read()
    preamble = head[: dicom.PREAMBLE_LEN]
    entropy = shannon_entropy(preamble) if preamble else 0.0

    def probe(offset: int, n: int) -> bytes:
        if offset + n <= len(head):
            return head[offset : offset + n]
        reader.seek(offset)
        return reader.read(n)

    evidence = _preamble_evidence(preamble, probe, size, config.entropy_threshold)
    if head[dicom.PREAMBLE_LEN : dicom.HEADER_LEN] != dicom.MAGIC:
        evidence.append(Evidence(EvidenceKind.PARSE_FAILURE, 0, "no DICM magic at offset 128"))
    elif config.mode == "full":
        try:
            f = dicom.parse_dicom(head)
            evidence.extend(scan_private_tags(f, head))
        except MalDicomError as exc:
            evidence.append(Evidence(EvidenceKind.PARSE_FAILURE, 0, f"{type(exc).__name__}: {exc}"))
    return ScanReport(path, _verdict(evidence), entropy, evidence, reader.bytes_read)


def classify_file(source: Source, config: DetectorConfig = DetectorConfig(), path: Optional[str] = None) -> ScanReport:
    """Scan one file (bytes, path or binary stream).  Never raises on bad content."""
    if isinstance(source, (bytes, bytearray, memoryview)):
        return _classify_stream(CountingReader(io.BytesIO(bytes(source))), path or "<bytes>", config)
    if isinstance(source, (str, os.PathLike)):
        name = path or os.fspath(source)
        try:
            with open(source, "rb") as fh:
                return _classify_stream(CountingReader(fh), name, config)
        except OSError as exc:
            return ScanReport(
                name, Verdict.SUSPICIOUS, 0.0, [Evidence(EvidenceKind.PARSE_FAILURE, 0, f"unreadable: {exc}")], 0
            )
    reader = source if isinstance(source, CountingReader) else CountingReader(source)
    return _classify_stream(reader, path or getattr(source, "name", "<stream>"), config)
