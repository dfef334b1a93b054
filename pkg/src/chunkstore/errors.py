"""Exception hierarchy. Every library error derives from ChunkstoreError."""


class ChunkstoreError(Exception):
    pass


class DimensionMismatch(ChunkstoreError, ValueError):
    pass


class EmptyNeighborSet(ChunkstoreError, ValueError):
    pass


class NonPositiveTemperature(ChunkstoreError, ValueError):
    pass


class LambdaOutOfRange(ChunkstoreError, ValueError):
    pass


class InvalidVocab(ChunkstoreError, ValueError):
    pass


class EmptyCorpus(ChunkstoreError, ValueError):
    pass


class PrefixMissingBOS(ChunkstoreError, ValueError):
    pass


class ChunkSizeZero(ChunkstoreError, ValueError):
    pass


class ReducedDimExceedsFull(ChunkstoreError, ValueError):
    pass


class TooFewSamples(ChunkstoreError, ValueError):
    pass


class EmptyAppend(ChunkstoreError, ValueError):
    pass


class BadMagic(ChunkstoreError, IOError):
    pass


class VersionMismatch(ChunkstoreError, IOError):
    pass


class TruncatedFile(ChunkstoreError, IOError):
    pass


class EmptyIndex(ChunkstoreError, ValueError):
    pass


class TooFewEntries(ChunkstoreError, ValueError):
    pass


class SentinelDereference(ChunkstoreError, RuntimeError):
    """A non-PAD chunk position points at the PAD state sentinel."""


class EmptyCache(ChunkstoreError, LookupError):
    pass


class VaryExceedsStored(ChunkstoreError, ValueError):
    pass


class SourceTooLong(ChunkstoreError, ValueError):
    pass


class LengthMismatch(ChunkstoreError, ValueError):
    pass


class ConfigInvalid(ChunkstoreError, ValueError):
    """Raised with a dotted field path, e.g. ``paths.datastore: file not found``."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
