"""DataX: a runtime for composing multi-sensor stream-processing applications.

Users register drivers, analytics units, and actuators once, then wire them
into pipelines by declaring sensors, streams, and gadgets.  The runtime owns
data communication (an in-process broker with token-scoped subjects), process
execution (a sidecar runner speaking a framed IPC protocol), placement and
auto-scaling (a reconciliation loop), and platform-managed key-value state.
"""

from datax.platform import Platform

__all__ = ["Platform"]
__version__ = "0.1.0"
