"""Wire protocol between camera units and the coordinator.

Framing: one UTF-8 JSON object per line, newline-terminated, no embedded
newlines. Every message carries ``proto`` (version) and ``kind``; the
kinds are hello, telemetry, command, ack, and error. See docs/protocol.md
for the bit-exact field schemas.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from spawnwatch.model import OperationalMode, StageCounts

PROTOCOL_VERSION = 1

# Telemetry may carry full detections only when a debug flag is set, and
# never more than this many (decentralized counting keeps the wire thin).
MAX_WIRE_DETECTIONS = 256


class ProtocolError(Exception):
    """Malformed or version-incompatible message."""


class CommandVerb(str, Enum):
    SET_MODE = "set_mode"
    SET_INTERVAL = "set_interval"
    POWER_CYCLE = "power_cycle"
    PING = "ping"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Hello:
    """Unit registration handshake."""

    unit_id: str
    tank_id: str
    proto_version: int = PROTOCOL_VERSION


@dataclass(frozen=True)
class Telemetry:
    """Per-frame unit report: counts always, detections only for debug."""

    unit_id: str
    frame_id: int
    timestamp: float
    mode: OperationalMode
    counts: StageCounts | None = None
    in_focus: int | None = None
    inference_time: float = 0.0
    error: str | None = None
    detections: tuple[dict[str, Any], ...] | None = None


@dataclass(frozen=True)
class Command:
    """Operator command addressed to one unit or fanned out to a tank."""

    command_id: str
    verb: CommandVerb
    target_unit: str | None = None
    target_tank: str | None = None
    args: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if (self.target_unit is None) == (self.target_tank is None):
            raise ProtocolError("command must target exactly one of unit or tank")


@dataclass(frozen=True)
class Ack:
    command_id: str
    unit_id: str
    ok: bool
    state: dict[str, Any] = field(default_factory=dict)
    reason: str | None = None


@dataclass(frozen=True)
class WireError:
    message: str


Message = Hello | Telemetry | Command | Ack | WireError


def encode_message(msg: Message) -> str:
    """Encode a message to one newline-free JSON line."""
    body: dict[str, Any] = {"proto": PROTOCOL_VERSION}
    if isinstance(msg, Hello):
        body.update(kind="hello", unit_id=msg.unit_id, tank_id=msg.tank_id)
        body["proto"] = msg.proto_version
    elif isinstance(msg, Telemetry):
        if msg.detections is not None and len(msg.detections) > MAX_WIRE_DETECTIONS:
            raise ProtocolError(
                f"telemetry carries {len(msg.detections)} detections "
                f"(wire limit {MAX_WIRE_DETECTIONS})"
            )
        body.update(
            kind="telemetry",
            unit_id=msg.unit_id,
            frame_id=msg.frame_id,
            ts=msg.timestamp,
            mode=msg.mode.value,
            inference_time=msg.inference_time,
        )
        if msg.counts is not None:
            body["counts"] = msg.counts.as_dict()
        if msg.in_focus is not None:
            body["in_focus"] = msg.in_focus
        if msg.error is not None:
            body["error"] = msg.error
        if msg.detections is not None:
            body["detections"] = list(msg.detections)
    elif isinstance(msg, Command):
        body.update(kind="command", command_id=msg.command_id, verb=msg.verb.value, args=msg.args)
        if msg.target_unit is not None:
            body["unit_id"] = msg.target_unit
        if msg.target_tank is not None:
            body["tank_id"] = msg.target_tank
    elif isinstance(msg, Ack):
        body.update(
            kind="ack", command_id=msg.command_id, unit_id=msg.unit_id, ok=msg.ok, state=msg.state
        )
        if msg.reason is not None:
            body["reason"] = msg.reason
    elif isinstance(msg, WireError):
        body.update(kind="error", message=msg.message)
    else:
        raise ProtocolError(f"cannot encode {type(msg).__name__}")
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


def decode_message(line: str) -> Message:
    """Decode one protocol line; raises ProtocolError on malformed input."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ProtocolError("message must be an object with a 'kind'")
    proto = obj.get("proto")
    if proto != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {proto!r}")
    kind = obj["kind"]
    try:
        if kind == "hello":
            return Hello(unit_id=obj["unit_id"], tank_id=obj["tank_id"], proto_version=proto)
        if kind == "telemetry":
            return Telemetry(
                unit_id=obj["unit_id"],
                frame_id=int(obj["frame_id"]),
                timestamp=float(obj["ts"]),
                mode=OperationalMode(obj["mode"]),
                counts=StageCounts.from_dict(obj["counts"]) if "counts" in obj else None,
                in_focus=int(obj["in_focus"]) if "in_focus" in obj else None,
                inference_time=float(obj.get("inference_time", 0.0)),
                error=obj.get("error"),
                detections=tuple(obj["detections"]) if "detections" in obj else None,
            )
        if kind == "command":
            return Command(
                command_id=obj["command_id"],
                verb=CommandVerb(obj["verb"]),
                target_unit=obj.get("unit_id"),
                target_tank=obj.get("tank_id"),
                args=obj.get("args", {}),
            )
        if kind == "ack":
            return Ack(
                command_id=obj["command_id"],
                unit_id=obj["unit_id"],
                ok=bool(obj["ok"]),
                state=obj.get("state", {}),
                reason=obj.get("reason"),
            )
        if kind == "error":
            return WireError(message=obj.get("message", ""))
    except (KeyError, ValueError, TypeError) as exc:
        raise ProtocolError(f"malformed {kind} message: {exc}") from exc
    raise ProtocolError(f"unknown message kind {kind!r}")
