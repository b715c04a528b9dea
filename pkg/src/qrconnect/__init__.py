"""Simulation and analysis toolkit for memory-enhanced quantum repeater connection.

Modules
-------
states
    Small exact density-matrix algebra for photon and spin-wave qubits.
analytic
    Closed-form timing, rate and scaling formulas.
sim
    Seeded Monte Carlo of the asynchronous two-segment protocol.
tomography
    Polarization tomography forward model and maximum-likelihood reconstruction.
config, cli
    JSON run configuration and the ``qrconnect`` command line.
"""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .analytic import ProtocolParams, ScalingMode
from .sim import MemoryDecayModel, SimConfig, SimStats, simulate
from .states import DensityMatrix, NoiseChannel, PureState
from .tomography import CountsRecord, MeasurementBasis, mle_reconstruct

__all__ = [
    "CountsRecord",
    "DensityMatrix",
    "MeasurementBasis",
    "MemoryDecayModel",
    "NoiseChannel",
    "ProtocolParams",
    "PureState",
    "ScalingMode",
    "SimConfig",
    "SimStats",
    "mle_reconstruct",
    "simulate",
]
