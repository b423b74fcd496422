"""Fleet layer: camera units, coordinator, wire protocol, HTTP API."""

from spawnwatch.fleet.clock import Clock, SimClock, WallClock
from spawnwatch.fleet.coordinator import AlertRecord, Coordinator, rebuild_series
from spawnwatch.fleet.protocol import (
    Ack,
    Command,
    CommandVerb,
    Hello,
    ProtocolError,
    Telemetry,
    WireError,
    decode_message,
    encode_message,
)
from spawnwatch.fleet.sim import FaultInjection, FleetSimulation
from spawnwatch.fleet.topology import FleetTopology, TankSpec, load_topology, topology_from_dict
from spawnwatch.fleet.unit import CameraUnit, PowerState, UnitConfig

__all__ = [
    "Ack",
    "AlertRecord",
    "CameraUnit",
    "Clock",
    "Command",
    "CommandVerb",
    "Coordinator",
    "FaultInjection",
    "FleetSimulation",
    "FleetTopology",
    "Hello",
    "PowerState",
    "ProtocolError",
    "SimClock",
    "TankSpec",
    "Telemetry",
    "UnitConfig",
    "WallClock",
    "WireError",
    "decode_message",
    "encode_message",
    "load_topology",
    "rebuild_series",
    "topology_from_dict",
]
