"""Exception types shared across the pipeline.

The CLI maps these onto its exit-code contract: DataError -> 2,
NumericalError -> 3, anything argparse-level -> 1.
"""


class DataError(ValueError):
    """Malformed or inconsistent input data (parsing, grids, schemas)."""


class NumericalError(RuntimeError):
    """A numerical routine failed (non-PD system, diverging IRLS, ...)."""
