"""Exception taxonomy shared across the package.

Every error carries a short machine-readable ``code`` so the CLI can emit
a single parseable line before exiting nonzero.
"""


class TrackGptError(Exception):
    code = "error"


class InputError(TrackGptError):
    """Caller passed out-of-contract arguments (bad ranges, mismatched depths)."""

    code = "input"


class ConfigError(TrackGptError):
    """Invalid or inconsistent configuration."""

    code = "config"


class CoverageError(TrackGptError):
    """A point falls outside the codec's fixed-prefix area of interest."""

    code = "coverage"


class DataError(TrackGptError):
    """Dataset unusable: empty corpus, all tracks too short, >50% malformed rows."""

    code = "data"


class ParseError(TrackGptError):
    """Malformed file content (CSV, corpus, checkpoint, GeoJSON)."""

    code = "parse"


class TrainingDivergence(TrackGptError):
    """Training aborted on a non-finite loss."""

    code = "train"


class EmptyEnsembleError(TrackGptError):
    """All forecast samples were discarded by the regulator."""

    code = "ensemble"
