"""tinycnn: a transparent two-conv-layer CNN training and inference engine.

The core package is plain numpy in float32; :mod:`tinycnn.service` wraps it
in a FastAPI application and :mod:`tinycnn.cli` provides the command-line
client.
"""

__version__ = "1.0.0"

from .config import (ClassMap, DerivedDims, EngineConfig, NetConfig,
                     NumericPolicy, TrainConfig, derive_dims)
from .errors import (ConfigError, DatasetError, NumericFault, StoreError,
                     TinyCnnError)
from .weightstore import (OriginKind, WeightOrigin, WeightSet, he_init,
                          load_binary, load_header, resolve_weights,
                          save_binary, export_header)

__all__ = [
    "__version__",
    "ClassMap", "DerivedDims", "EngineConfig", "NetConfig", "NumericPolicy",
    "TrainConfig", "derive_dims",
    "ConfigError", "DatasetError", "NumericFault", "StoreError", "TinyCnnError",
    "OriginKind", "WeightOrigin", "WeightSet", "he_init", "load_binary",
    "load_header", "resolve_weights", "save_binary", "export_header",
]
