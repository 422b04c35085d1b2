"""Exception taxonomy shared by the whole package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError (and
subclasses) -> 3, NumericError -> 4. Anything else is a bug and is allowed
to surface as a traceback.
"""


class UasdError(Exception):
    """Base class for all package errors."""


class ConfigError(UasdError):
    """Invalid or inconsistent configuration (bad keys, hash mismatch,
    label-requirement violations)."""


class DataError(UasdError):
    """Problems with input data or on-disk artifacts."""


class WavFormatError(DataError):
    """Malformed or unsupported RIFF/WAVE content."""


class DegenerateInputError(DataError):
    """Input is structurally valid but unusable (zero-power noise, clip
    shorter than a frame, fewer frames than the window length...)."""


class ContractError(UasdError):
    """A caller violated an API precondition (shape mismatch, missing
    labels, backward without a cached forward)."""


class NumericError(UasdError):
    """Non-finite values or a numerically impossible request."""


class ClipScoringError(UasdError):
    """A single clip could not be scored; carries the clip id so batch
    scorers can report and continue."""

    def __init__(self, clip_id: str, reason: str):
        super().__init__(f"clip {clip_id!r}: {reason}")
        self.clip_id = clip_id
        self.reason = reason
