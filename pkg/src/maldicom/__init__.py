"""Build, detect and extract DICOM/PE polyglots; triage memory-dump features."""

from .detector import DetectorConfig, ScanReport, Verdict, classify_file, shannon_entropy
from .dicom import DataElement, DicomFile, Tag, parse_dicom, serialize_dicom
from .errors import MalDicomError
from .pe import PeView, parse_pe
from .polyglot import InjectionRecord, create_pe_dicom, extract_pe, verify_polyglot

__version__ = "0.1.0"

__all__ = [
    "DetectorConfig", "ScanReport", "Verdict", "classify_file", "shannon_entropy",
    "DataElement", "DicomFile", "Tag", "parse_dicom", "serialize_dicom",
    "MalDicomError", "PeView", "parse_pe",
    "InjectionRecord", "create_pe_dicom", "extract_pe", "verify_polyglot",
]
