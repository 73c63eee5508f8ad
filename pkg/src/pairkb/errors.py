"""Typed exception hierarchy.

Every failure the engine can produce deliberately is a subclass of
:class:`PairKBError`, so callers (CLI, service) can map engine errors to
exit codes / HTTP statuses without fishing for strings.
"""

from __future__ import annotations


class PairKBError(Exception):
    """Base class for all engine errors."""


# --- vectors & math ---------------------------------------------------------


class NonFiniteError(PairKBError):
    """A vector contains NaN or Inf."""


class ZeroVectorError(PairKBError):
    """L2 normalization requested for an all-zero vector."""


class DimMismatchError(PairKBError):
    """Vector dimensions do not agree with the expected dimension."""


# --- knowledge base ---------------------------------------------------------


class ValidationError(PairKBError):
    """An entry or knowledge base violates its invariants."""


class SchemaMismatchError(PairKBError):
    """Two knowledge bases that must share a schema do not."""


class EmptyKBError(PairKBError):
    """Operation requires a non-empty knowledge base."""


class EmptyTrainsetError(PairKBError):
    """Refinement requires a non-empty trainset."""


class UnknownEntryIdError(PairKBError):
    """Entry id not present in the knowledge base."""


# --- file formats -----------------------------------------------------------


class FormatError(PairKBError):
    """Structurally invalid file content."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionUnsupportedError(FormatError):
    """File version not understood by this build."""


class TruncatedFileError(FormatError):
    """File is shorter than its header claims."""


class MetadataMismatchError(FormatError):
    """Sidecar metadata does not line up with the binary record ids."""


# --- index ------------------------------------------------------------------


class BadClusterCountError(PairKBError):
    """Cluster count outside 1..N."""


# --- providers --------------------------------------------------------------


class ProviderError(PairKBError):
    """Base class for embedding/caption provider failures."""


class UnknownCaptionError(ProviderError):
    """Stub text encoder has no vector for this caption."""


class UnknownAudioRefError(ProviderError):
    """Stub captioner has no caption for this audio ref."""


class TransportError(ProviderError):
    """Remote provider unreachable or returned an unusable response."""


class EncodeTimeoutError(TransportError):
    """Remote provider did not answer within the configured timeout."""


class NonFiniteResponseError(ProviderError):
    """Remote provider returned NaN/Inf embedding values."""


class CaptionFailedError(ProviderError):
    """Generative retrieval could not obtain a caption for the query."""


class EncodeFailedError(ProviderError):
    """Generative retrieval could not encode the generated caption."""


# --- retrieval --------------------------------------------------------------


class SharedSpaceRequiredError(PairKBError):
    """Cross-modal scoring needs audio and text embeddings in one space."""


class MissingTextQueryError(PairKBError):
    """Pair strategy invoked without a text-side query embedding."""


# --- fusion & evaluation ----------------------------------------------------


class EmptyCandidatesError(PairKBError):
    """Ranking/classification over an empty candidate list."""


class MissingRankingError(PairKBError):
    """Ground truth references a query that has no ranking."""


class InvalidKError(PairKBError):
    """k must be a positive integer."""


class KeyMismatchError(PairKBError):
    """Prediction and truth key sets differ."""


class UnsortedAxisError(PairKBError):
    """Sweep axis values must be strictly increasing."""


class EmptyRetrievalError(PairKBError):
    """Statistics requested over an empty hit set."""


# --- config -----------------------------------------------------------------


class ConfigError(PairKBError):
    """Invalid engine configuration."""
