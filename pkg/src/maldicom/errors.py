"""Exception hierarchy shared by the parsers, the injector and the triage stage."""


class MalDicomError(ValueError):
    """Base class for every typed error raised by this package."""


# --- byte-level parsing -------------------------------------------------

class TooShort(MalDicomError):
    pass


class BadMagic(MalDicomError):
    pass


class TruncatedElement(MalDicomError):
    pass


class MalformedSequence(MalDicomError):
    pass


class UnsupportedTransferSyntax(MalDicomError):
    pass


class InvariantViolation(MalDicomError):
    pass


class BadMzMagic(MalDicomError):
    pass


class BadPeSignature(MalDicomError):
    pass


class ELfanewOutOfRange(MalDicomError):
    pass


class MalformedSectionTable(MalDicomError):
    pass


class NegativeOffset(MalDicomError):
    pass


# --- injection ----------------------------------------------------------

class PreambleOverflow(MalDicomError):
    pass


class EvenGroupTag(MalDicomError):
    pass


class PayloadTagCollision(MalDicomError):
    pass


class OffsetOverflow(MalDicomError):
    pass


class RecordMismatch(MalDicomError):
    pass


# --- detector -----------------------------------------------------------

class EmptyWindow(MalDicomError):
    pass


# --- triage -------------------------------------------------------------

class SchemaMismatch(MalDicomError):
    pass


class NonNumericFeature(MalDicomError):
    pass


class UnknownCategoryToken(MalDicomError):
    pass


class ClassTooSmall(MalDicomError):
    pass


class DegenerateData(MalDicomError):
    pass


class WidthMismatch(MalDicomError):
    pass


class EmptyBackground(MalDicomError):
    pass


class TooManyFeaturesForExact(MalDicomError):
    pass
