"""Exception types raised across the package.

Conditions that the pipelines recover from (skipped sections, degenerate
tuning updates, histogram fallbacks) are reported as string flags on the
result objects instead of being raised.
"""


class UnbendError(Exception):
    """Base class; carries the name of the module that raised it."""

    module = "unbend"


class EmptyMask(UnbendError):
    module = "core-geometry"


class MultipleComponents(UnbendError):
    module = "core-geometry"


class Unrepairable(UnbendError):
    module = "core-geometry"


class IllConditioned(UnbendError):
    module = "core-geometry"


class SingularSpeed(UnbendError):
    module = "core-geometry"


class TooFewSections(UnbendError):
    module = "neutral-line"


class DisconnectedReference(UnbendError):
    module = "morph-solver"


class InvalidProfile(UnbendError):
    module = "synth"


class SelfOverlap(UnbendError):
    module = "synth"


class RefTooShort(UnbendError):
    module = "classify"


class TooFewInstances(UnbendError):
    module = "classify"


class ConfigError(UnbendError):
    module = "cli-io"
