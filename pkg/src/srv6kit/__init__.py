"""srv6kit: desk-scale SRv6 SDN toolkit.

A node agent with four southbound API transports (binary RPC, REST,
NETCONF, SSH/CLI), a controller client library with topology extraction,
a simulated SRv6 data plane, and benchmark/experiment harnesses.
"""

__version__ = "0.1.0"
