"""Hardware-free simulation of a secure in-orbit FPGA reconfiguration platform."""

from ._kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
