"""Exception hierarchy shared by the whole package.

The CLI maps these onto distinct exit codes, so keep the split stable:
configuration problems, bad input data, and numerical failures.
"""


class SpectralignError(Exception):
    """Base class for all package errors."""


class ConfigError(SpectralignError):
    """Invalid or inconsistent configuration (unknown keys, bad values)."""


class InputError(SpectralignError):
    """Unreadable or malformed input data (mesh files, rigs, poses)."""


class MeshError(InputError):
    """Mesh fails structural validation (bad indices, non-manifold, degenerate)."""


class NumericalError(SpectralignError):
    """A solver failed to converge or produced non-finite values."""
