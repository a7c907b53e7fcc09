"""Discrete time-crystal dynamics of N qubits coupled to a lossy bosonic mode.

Two dynamical regimes share one parameter set and one drive schedule:

* :mod:`floquet_dtc.meanfield` - thermodynamic-limit semiclassical flow.
* :mod:`floquet_dtc.quantum` - exact Lindblad dynamics for a few spins.

Period-doubling diagnostics live in :mod:`floquet_dtc.diagnostics`.
"""

from floquet_dtc.model import (
    DriveProtocol,
    ParameterError,
    ScaledObservables,
    SystemParams,
    critical_coupling,
    lambda_at,
    make_params,
)

__all__ = [
    "DriveProtocol",
    "ParameterError",
    "ScaledObservables",
    "SystemParams",
    "critical_coupling",
    "lambda_at",
    "make_params",
]

__version__ = "0.1.0"
