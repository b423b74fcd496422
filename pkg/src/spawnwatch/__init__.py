"""spawnwatch: desk-scale coral spawn culture monitoring.

A synthetic larval-tank simulator, pluggable spawn detectors, detection
evaluation, culture analytics, and a multi-unit telemetry fleet with an
HTTP operator API.
"""

from spawnwatch._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
