"""Exception types shared across the toolchain."""


class GroundforgeError(Exception):
    """Base class for all toolchain errors."""


class DimensionMismatchError(GroundforgeError, ValueError):
    """Two grids/masks that must share dimensions do not."""


class SumMismatchError(GroundforgeError, ValueError):
    """RLE run lengths do not sum to width*height."""


class EmptyMaskError(GroundforgeError, ValueError):
    """Operation requires at least one foreground pixel."""


class EmptyInputError(GroundforgeError, ValueError):
    """Operation requires a non-empty collection."""


class UnknownCategoryError(GroundforgeError, ValueError):
    """Category label outside {stuff, part, multi, single}."""


class MissingCategoryError(GroundforgeError, ValueError):
    """Per-category reporting requested but a pair carries no category."""


# -- model gateway -----------------------------------------------------------

class GatewayError(GroundforgeError):
    """Base class for backend call failures."""


class BackendUnavailableError(GatewayError):
    """Backend unreachable or persistently failing after retries."""


class BackendTimeoutError(GatewayError):
    """Backend did not answer within the configured timeout."""


class MalformedResponseError(GatewayError):
    """Backend reply violates the wire schema."""


class InvalidPromptError(GatewayError):
    """Request rejected by the backend as unusable (e.g. degenerate box)."""


class UnparseableVerdictError(GatewayError):
    """Classifier reply matches no known category."""


# -- curation / review -------------------------------------------------------

class VersionConflictError(GroundforgeError):
    """Optimistic-concurrency check failed: stale expected_version."""

    def __init__(self, sample_id: str, expected: int, current: int):
        super().__init__(
            f"version conflict on {sample_id}: expected {expected}, current {current}"
        )
        self.sample_id = sample_id
        self.expected = expected
        self.current = current


class UnknownSampleError(GroundforgeError, KeyError):
    """Decision references a sample not in the manifest."""


class InvalidTransitionError(GroundforgeError):
    """Review decision on an item that is not pending."""


class QuotaUnmetError(GroundforgeError):
    """Not enough candidates to fill a category quota."""


# -- datastore ----------------------------------------------------------------

class OutOfOrderError(GroundforgeError, ValueError):
    """Records presented to the shard writer out of id order."""


class ChecksumError(GroundforgeError):
    """Shard contents do not match the recorded checksum."""

    def __init__(self, shard_name: str):
        super().__init__(f"checksum mismatch in shard {shard_name}")
        self.shard_name = shard_name


class BinMismatchError(GroundforgeError, ValueError):
    """Stats objects with incompatible histogram bin configurations."""


class ConfigError(GroundforgeError, ValueError):
    """Invalid or missing configuration key."""

    def __init__(self, key: str, message: str = ""):
        super().__init__(f"config key {key!r}: {message}" if message else f"config key {key!r}")
        self.key = key
