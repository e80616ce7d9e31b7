"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration/input/format problems
exit 2, runtime failures exit 1.
"""


class AsmNavError(Exception):
    """Base class for all package errors."""


class InputError(AsmNavError):
    """Caller supplied inconsistent data (shape mismatch, bad ranges)."""


class ConfigError(AsmNavError):
    """Invalid configuration value or missing referenced file."""


class FormatError(AsmNavError):
    """A serialized artifact (snapshot, world file, manifest) failed to parse."""


class EpisodeAbort(AsmNavError):
    """The episode cannot continue (agent left the fixed map bounds)."""


class ProtocolError(AsmNavError):
    """An operation was invoked out of sequence (e.g. step after done)."""


class PlanningError(AsmNavError):
    """No path exists between the requested endpoints."""


class NoMatchError(AsmNavError):
    """Free-form text contained no recognizable action phrase."""

    def __init__(self, text: str):
        super().__init__(f"no action pattern matched: {text!r}")
        self.text = text


class EndpointError(AsmNavError):
    """The remote model endpoint failed after all retries."""
