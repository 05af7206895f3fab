"""Exception types shared across the package."""


class FormatError(ValueError):
    """A structured text file does not match its grammar."""


class VersionError(FormatError):
    """A file declares a format version this build does not support."""


class NotFoundError(LookupError):
    """A lookup key (view, instance, path) is absent from a dataset."""


class EmptyHullError(RuntimeError):
    """A carving step or reconstruction left no occupied cells."""


class PeerError(RuntimeError):
    """An external predictor peer failed: died, timed out, or sent ERR."""


class ProtocolError(PeerError):
    """An external predictor peer sent a line outside the wire protocol."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"{message}: {line!r}"
        super().__init__(message)
        self.line = line
