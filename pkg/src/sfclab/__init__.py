"""Desk-scale O-RAN SFC provisioning lab.

Joint per-flow routing and dynamic CU selection with a GCN actor-critic
trained by masked clipped-surrogate policy optimization, compared against a
fixed-mapping routing-only agent and a constrained-shortest-path baseline.
"""

__version__ = "0.1.0"

from .config import Config, load_config
from .scenario import builtin_catalog, generate_topology, generate_traffic
from .topology import NetworkGraph, load_topology

__all__ = [
    "Config",
    "NetworkGraph",
    "builtin_catalog",
    "generate_topology",
    "generate_traffic",
    "load_config",
    "load_topology",
]
