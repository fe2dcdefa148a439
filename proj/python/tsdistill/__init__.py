"""Self-distilled time-series representation engine (C++ core bindings)."""

from ._core import (
    __version__,
    config_hash,
    default_config,
    embed,
    generate_corpus,
    linear_probe,
    load_corpus,
    parse_ts,
    pretrain,
    save_corpus,
    sinkhorn_knopp,
)

__all__ = [
    "__version__",
    "config_hash",
    "default_config",
    "embed",
    "generate_corpus",
    "linear_probe",
    "load_corpus",
    "parse_ts",
    "pretrain",
    "save_corpus",
    "sinkhorn_knopp",
]
