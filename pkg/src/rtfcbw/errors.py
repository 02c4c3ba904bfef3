"""Exception hierarchy shared by all modules."""

import numpy as np


class RtfError(Exception):
    """Base class. ``index`` holds the offending batch position (e.g. bin) if known."""

    def __init__(self, message="", index=None):
        self.index = index
        if index is not None:
            message = f"{message} (at index {index})"
        super().__init__(message)


class NotHermitian(RtfError):
    pass


class NotPositiveSemiDefinite(RtfError):
    pass


class DegenerateSpectrum(RtfError):
    pass


class ZeroMatrix(RtfError):
    pass


class ZeroVector(RtfError):
    pass


class CollinearVectors(RtfError):
    pass


class SignalTooShort(RtfError):
    pass


class DimensionMismatch(RtfError):
    pass


class EmptyRange(RtfError):
    pass


class SourceOnMicrophone(RtfError):
    pass


class InvalidSchedule(RtfError):
    pass


class SingularNoiseCovariance(RtfError):
    pass


class ZeroReferenceEntry(RtfError):
    pass


class CollinearWithInterferer(RtfError):
    pass


class InsufficientChannels(RtfError):
    pass


class RankDeficientBlocking(RtfError):
    pass


class CollinearConstraints(RtfError):
    pass


class ZeroPower(RtfError):
    pass


class ConfigError(RtfError):
    pass


class NotConverged(UserWarning):
    """Issued when an iterative solver stops before reaching its tolerance."""


def first_index(mask):
    """Return the first True position of a boolean array as a tuple (or None)."""
    mask = np.asarray(mask)
    if not mask.any():
        return None
    idx = np.unravel_index(np.argmax(mask), mask.shape)
    return tuple(int(i) for i in idx) if len(idx) > 1 else int(idx[0]) if idx else None
