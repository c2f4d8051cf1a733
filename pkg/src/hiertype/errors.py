"""Shared exception base so callers (and the CLI) can classify failures uniformly."""


class HiertypeError(Exception):
    """Base class for data and configuration errors raised by this package."""
