"""Exception taxonomy shared by all modules."""


class ContactAnalogyError(Exception):
    """Base class for all package errors."""


class EmptyMask(ContactAnalogyError):
    """A mask has no foreground cells."""


class FormatError(ContactAnalogyError):
    """A file has a bad magic number, version, or structure."""


class DimensionError(ContactAnalogyError):
    """A payload size does not match its declared dimensions."""


class DegenerateData(ContactAnalogyError):
    """Too few samples to fit the requested basis."""


class DegenerateFit(ContactAnalogyError):
    """The parabola fit has no support along the tangent axis."""


class InsufficientSupport(ContactAnalogyError):
    """Fewer than the minimum number of edge points inside the scale."""


class EmptySelection(ContactAnalogyError):
    """Ray-cast filtering kept no edge point."""


class NoMatchingConvexity(ContactAnalogyError):
    """No in-region edge point has the required curvature sign."""


class NoForeground(ContactAnalogyError):
    """A target mask has no foreground to match against."""


class NoCandidates(ContactAnalogyError):
    """Candidate generation produced an empty set."""


class NoVerifiedCandidate(ContactAnalogyError):
    """Every candidate failed trajectory verification and fallback is off."""


class SceneError(ContactAnalogyError):
    """A scene file is missing, malformed, or references bad paths."""
