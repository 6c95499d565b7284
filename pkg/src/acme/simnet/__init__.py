"""Deterministic discrete-event simulator: topology, links, nodes, experiments."""

from .events import SimClock
from .topology import SimTopology, TopologyParams, generate_topology
from .network import SimNetwork, SimParams

__all__ = ["SimClock", "SimTopology", "TopologyParams", "generate_topology",
           "SimNetwork", "SimParams"]
