"""MOSFET compact-model parameter extraction with reverse-mode AD.

The heavy lifting lives in the compiled extension; this package re-exports
its operations: build/eval computational graphs, AD and ND gradients,
synthetic data, extraction drivers, and measurement-driven initialization.
"""

from ._core import (
    Graph,
    MosfitError,
    ad_gradient,
    bench_gradient,
    build,
    estimate_all,
    eval,
    extract,
    load_csv,
    model_info,
    model_names,
    nd_gradient,
    outputs,
    save_csv,
    synth,
)

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "MosfitError",
    "ad_gradient",
    "bench_gradient",
    "build",
    "estimate_all",
    "eval",
    "extract",
    "load_csv",
    "model_info",
    "model_names",
    "nd_gradient",
    "outputs",
    "save_csv",
    "synth",
    "__version__",
]
