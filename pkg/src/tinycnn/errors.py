"""Exception hierarchy shared by every module of the engine."""


class TinyCnnError(Exception):
    """Base class for all engine errors."""


class ConfigError(TinyCnnError):
    """Invalid configuration value or an underivable layer dimension."""


class DatasetError(TinyCnnError):
    """Dataset layout, image decoding, or split problems."""


class NumericFault(TinyCnnError):
    """NaN/Inf detected in a computation that must stay finite."""


class StoreError(TinyCnnError):
    """Weight file whose contents do not match the expected format or size."""
