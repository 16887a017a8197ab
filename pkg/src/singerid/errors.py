"""Exception taxonomy shared across the pipeline.

Everything that indicates bad *data* (unreadable files, inconsistent
corpora, shape mismatches) derives from DataError so the CLI can map it
to a single exit code. UsageError is reserved for bad invocations.
"""


class SingerIdError(Exception):
    pass


class UsageError(SingerIdError):
    pass


class DataError(SingerIdError):
    pass


# --- audio ---

class MalformedWav(DataError):
    pass


class UnsupportedEncoding(DataError):
    pass


# --- melody contours ---

class MissingHeader(DataError):
    pass


class NonMonotonicTime(DataError):
    pass


class ValueOutOfRange(DataError):
    pass


class NonPositiveFrequency(DataError):
    pass


# --- corpus / manifests ---

class EmptyCorpus(DataError):
    pass


class MissingStem(DataError):
    pass


class InsufficientAlbums(DataError):
    pass


class MissingRemixPlan(DataError):
    pass


class SingleArtistCorpus(DataError):
    pass


# --- tensors / model ---

class ShapeMismatch(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class UnknownVariant(DataError):
    pass


class MissingMelodyPlane(DataError):
    pass


# --- features / training ---

class EmptyView(DataError):
    pass


class MissingFeatureCache(DataError):
    pass


class CacheFormatError(DataError):
    pass


class CheckpointFormatError(DataError):
    pass


# --- evaluation ---

class EmptyPredictionSet(DataError):
    pass


class LengthMismatch(DataError):
    pass


class SegmentOutOfRange(DataError):
    pass


class DegenerateVariance(DataError):
    pass


# --- embedding / t-SNE ---

class TooFewPoints(DataError):
    pass


class DegenerateDistances(DataError):
    pass
