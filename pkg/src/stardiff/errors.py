"""Exception types shared across the package."""


class StarDiffError(Exception):
    """Base class for package-specific failures."""


class MissingPairError(StarDiffError):
    """An HE patch has no same-named IHC mate (or vice versa)."""


class LabelParseError(StarDiffError):
    """A label manifest contains an unknown token."""


class CheckpointFormatError(StarDiffError):
    """A checkpoint archive is missing, incompatible, or the wrong kind."""


class TrainingDivergedError(StarDiffError):
    """Training loss went non-finite; the last good checkpoint is retained."""

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
