"""Exception types raised across the pipeline."""


class FedsynthError(Exception):
    """Base class for all package errors."""


# --- timeline / tokenization ---

class UnknownEventName(FedsynthError):
    pass


class EmptyVariable(FedsynthError):
    pass


class UnknownVariable(FedsynthError):
    pass


class NonFiniteValue(FedsynthError):
    pass


class NegativeGap(FedsynthError):
    pass


class MalformedCode(FedsynthError):
    pass


class TokenNotInVocabulary(FedsynthError):
    pass


class MalformedSequence(FedsynthError):
    pass


# --- cohort simulation ---

class NonConvergentWalk(FedsynthError):
    pass


class UnknownState(FedsynthError):
    pass


class OverlappingClasses(FedsynthError):
    pass


class InvalidProcess(FedsynthError):
    pass


# --- sequence models ---

class EmptyCorpus(FedsynthError):
    pass


class VocabularyMismatch(FedsynthError):
    pass


class NonPositiveTemperature(FedsynthError):
    pass


class BadMagic(FedsynthError):
    pass


class VersionUnsupported(FedsynthError):
    pass


class ShapeMismatch(FedsynthError):
    pass


class FingerprintMismatch(FedsynthError):
    pass


# --- federation ---

class TooManyRejections(FedsynthError):
    pass


# --- zero-shot inference ---

class KindMismatch(FedsynthError):
    pass


class AllCensored(FedsynthError):
    pass


class NoInstances(FedsynthError):
    pass


# --- metrics ---

class SingleClass(FedsynthError):
    pass


class ConstantTruth(FedsynthError):
    pass


class DegenerateReal(FedsynthError):
    pass


# --- cli ---

class BadConfig(FedsynthError):
    pass


class IoFailure(FedsynthError):
    pass
