"""Desk-scale simulator and algorithm library for multi-beam analog beamforming.

Modules
-------
ula         array geometry, steering, beam weights, patterns, EIRP
channel     sparse geometric channel, CIR synthesis, SNR, path-set I/O
synthesis   multi-beam weight synthesis, oracle beamformer, power rebalancing
training    exhaustive beam scans, peak extraction, ToF estimation, association
combining   two-probe per-beam CSI recovery and constructive combining
superres    sinc-dictionary super-resolution of per-beam amplitudes
tracking    per-beam power tracking, event classification, proactive response
linksim     analytic link models and slot-level Monte Carlo scenarios
cli         command-line entry points
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
