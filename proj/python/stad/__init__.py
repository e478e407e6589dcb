"""Python bindings for the stad C++ core."""

from ._core import (
    GaussModel,
    StadError,
    VmfModel,
    bessel_ratio,
    estimate_kappa,
    log_bessel_i,
    log_vmf_norm_const,
    read_stream,
    run_experiment,
    synth_drift,
    write_stream,
)

__all__ = [
    "GaussModel",
    "StadError",
    "VmfModel",
    "bessel_ratio",
    "estimate_kappa",
    "log_bessel_i",
    "log_vmf_norm_const",
    "read_stream",
    "run_experiment",
    "synth_drift",
    "write_stream",
]
