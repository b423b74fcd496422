"""Central coordinator: aggregates unit telemetry into per-tank series.

Ingest path: dedup on (unit_id, frame_id), durable append to the unit's
log, then a bounded reordering buffer releases messages to the tank's
series in timestamp order. Messages arriving after their slot was
already released are stragglers: stored, but excluded from rolling
statistics. Counts from a tank's units at the same capture timestamp are
pooled (summed) before analytics; per-unit history stays in the logs.

All mutation for one tank funnels through its ordering point here;
queries hand out snapshots.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from spawnwatch.analytics import (
    AnalyticsConfig,
    CultureHealth,
    HealthTracker,
    ManualCount,
    TankSeries,
)
from spawnwatch.fleet.clock import Clock
from spawnwatch.fleet.protocol import (
    Ack,
    Command,
    CommandVerb,
    Hello,
    Message,
    ProtocolError,
    Telemetry,
    WireError,
    decode_message,
    encode_message,
)
from spawnwatch.model import OperationalMode, StageCounts
from spawnwatch.store import RecordEnvelope, RecordLog

log = logging.getLogger(__name__)

Transport = Callable[[Command], Ack]


@dataclass
class UnitInfo:
    unit_id: str
    tank_id: str
    last_mode: OperationalMode | None = None
    last_frame_time: float | None = None
    frames_stored: int = 0
    errors: int = 0


@dataclass(frozen=True)
class AlertRecord:
    alert_id: int
    tank_id: str
    time: float
    status: str
    message: str
    acknowledged: bool = False

    def as_dict(self) -> dict[str, Any]:
        return {
            "alert_id": self.alert_id,
            "tank_id": self.tank_id,
            "time": self.time,
            "status": self.status,
            "message": self.message,
            "acknowledged": self.acknowledged,
        }


@dataclass
class _Bucket:
    key: int
    time: float
    mode: OperationalMode
    counts: StageCounts = field(default_factory=StageCounts)
    in_focus: int = 0
    units: int = 0


class Coordinator:
    """Single aggregation point for a fleet of camera units."""

    def __init__(
        self,
        clock: Clock,
        store_dir: str | Path | None = None,
        analytics_config: AnalyticsConfig | None = None,
        reorder_window_s: float = 60.0,
        pool_bucket_s: float = 1.0,
    ):
        self.clock = clock
        self.store_dir = Path(store_dir) if store_dir is not None else None
        self.analytics_config = analytics_config or AnalyticsConfig()
        self.reorder_window_s = reorder_window_s
        self.pool_bucket_s = pool_bucket_s

        self.units: dict[str, UnitInfo] = {}
        self.series: dict[str, TankSeries] = {}
        self.transports: dict[str, Transport] = {}
        self.alerts: list[AlertRecord] = []
        self.stored_records = 0
        self.duplicates_dropped = 0
        self.stragglers = 0

        self._seen: dict[str, set[int]] = {}
        self._pending: dict[str, list[tuple[float, str, int, Telemetry]]] = {}
        self._max_ts: dict[str, float] = {}
        self._watermark: dict[str, float] = {}
        self._bucket: dict[str, _Bucket | None] = {}
        self._trackers: dict[str, HealthTracker] = {}
        self._logs: dict[str, RecordLog] = {}
        self._alert_seq = 0

    # -- registration -------------------------------------------------

    def register_unit(self, hello: Hello, transport: Transport | None = None) -> None:
        if hello.unit_id not in self.units:
            self.units[hello.unit_id] = UnitInfo(unit_id=hello.unit_id, tank_id=hello.tank_id)
            self._seen[hello.unit_id] = set()
        if transport is not None:
            self.transports[hello.unit_id] = transport
        self._ensure_tank(hello.tank_id)

    def _ensure_tank(self, tank_id: str) -> TankSeries:
        if tank_id not in self.series:
            self.series[tank_id] = TankSeries(tank_id, self.analytics_config)
            self._pending[tank_id] = []
            self._max_ts[tank_id] = float("-inf")
            self._watermark[tank_id] = float("-inf")
            self._bucket[tank_id] = None
            self._trackers[tank_id] = HealthTracker(self.analytics_config.health)
        return self.series[tank_id]

    def tank_units(self, tank_id: str) -> list[UnitInfo]:
        return [u for u in self.units.values() if u.tank_id == tank_id]

    # -- ingest path ----------------------------------------------------

    def handle_line(self, line: str) -> str | None:
        """Process one wire line; returns an encoded reply line or None.

        Malformed lines are logged and answered with an error message;
        the connection-level caller decides whether to keep reading.
        """
        try:
            msg = decode_message(line)
        except ProtocolError as exc:
            log.warning("malformed message dropped: %s", exc)
            return encode_message(WireError(message=str(exc)))
        return self.handle_message(msg)

    def handle_message(self, msg: Message) -> str | None:
        if isinstance(msg, Hello):
            self.register_unit(msg)
            return None
        if isinstance(msg, Telemetry):
            try:
                self.ingest(msg)
            except ProtocolError as exc:
                return encode_message(WireError(message=str(exc)))
            return None
        if isinstance(msg, Command):
            acks = self.dispatch(msg)
            return "\n".join(encode_message(a) for a in acks)
        raise ProtocolError(f"coordinator cannot handle {type(msg).__name__}")

    def ingest(self, msg: Telemetry) -> bool:
        """Store one telemetry message; returns False for duplicates."""
        info = self.units.get(msg.unit_id)
        if info is None:
            raise ProtocolError(f"unknown unit {msg.unit_id!r}: hello handshake required")
        if msg.frame_id in self._seen[msg.unit_id]:
            self.duplicates_dropped += 1
            return False
        self._seen[msg.unit_id].add(msg.frame_id)
        self._persist_telemetry(info, msg)
        self.stored_records += 1
        info.frames_stored += 1
        info.last_mode = msg.mode
        if info.last_frame_time is None or msg.timestamp > info.last_frame_time:
            info.last_frame_time = msg.timestamp
        if msg.error is not None:
            info.errors += 1
        else:
            heapq.heappush(
                self._pending[info.tank_id], (msg.timestamp, msg.unit_id, msg.frame_id, msg)
            )
        self._max_ts[info.tank_id] = max(self._max_ts[info.tank_id], msg.timestamp)
        self._release(info.tank_id)
        return True

    def _persist_telemetry(self, info: UnitInfo, msg: Telemetry) -> None:
        if self.store_dir is None:
            return
        payload: dict[str, Any] = {
            "frame_id": msg.frame_id,
            "mode": msg.mode.value,
            "inference_time": msg.inference_time,
        }
        if msg.counts is not None:
            payload["counts"] = msg.counts.as_dict()
        if msg.in_focus is not None:
            payload["in_focus"] = msg.in_focus
        if msg.error is not None:
            payload["error"] = msg.error
        self._unit_log(info.unit_id).append(
            RecordEnvelope(
                record_type="telemetry",
                timestamp=msg.timestamp,
                payload=payload,
                source={"unit_id": info.unit_id, "tank_id": info.tank_id},
            )
        )

    def _unit_log(self, unit_id: str) -> RecordLog:
        if unit_id not in self._logs:
            assert self.store_dir is not None
            self._logs[unit_id] = RecordLog(self.store_dir / "telemetry" / f"{unit_id}.ndjson")
        return self._logs[unit_id]

    def _release(self, tank_id: str, force: bool = False) -> None:
        # Event-time watermark: with delivery delay bounded by the window,
        # nothing older than (max seen - window) can still be in flight,
        # so releasing up to that horizon preserves timestamp order.
        pending = self._pending[tank_id]
        horizon = self._max_ts[tank_id] - self.reorder_window_s
        while pending and (force or pending[0][0] <= horizon):
            ts, unit_id, _fid, msg = heapq.heappop(pending)
            if ts < self._watermark[tank_id]:
                self.stragglers += 1
                log.warning(
                    "straggler from %s at t=%.1f (watermark %.1f): stored but "
                    "excluded from rolling statistics",
                    unit_id,
                    ts,
                    self._watermark[tank_id],
                )
                continue
            self._watermark[tank_id] = ts
            self._pool(tank_id, msg)

    def _pool(self, tank_id: str, msg: Telemetry) -> None:
        key = int(msg.timestamp // self.pool_bucket_s)
        bucket = self._bucket[tank_id]
        if bucket is not None and (bucket.key != key or bucket.mode != msg.mode):
            self._finalize_bucket(tank_id)
            bucket = None
        if bucket is None:
            bucket = _Bucket(key=key, time=key * self.pool_bucket_s, mode=msg.mode)
            self._bucket[tank_id] = bucket
        if msg.counts is not None:
            bucket.counts = bucket.counts + msg.counts
        if msg.in_focus is not None:
            bucket.in_focus += msg.in_focus
        bucket.units += 1

    def _finalize_bucket(self, tank_id: str) -> None:
        bucket = self._bucket[tank_id]
        if bucket is None:
            return
        self._bucket[tank_id] = None
        series = self.series[tank_id]
        calibrated_before = series.scaling_factor is not None
        if bucket.mode == OperationalMode.SURFACE:
            series.add_surface_counts(bucket.time, bucket.counts)
            self._check_health(tank_id, bucket.time)
        else:
            series.add_subsurface_count(bucket.time, bucket.in_focus)
            if not calibrated_before and series.scaling_factor is not None:
                self._record_calibration(tank_id)

    def _check_health(self, tank_id: str, time: float) -> None:
        series = self.series[tank_id]
        status, alert = self._trackers[tank_id].update(series.fertilization_curve().rolling)
        if alert:
            self._raise_alert(
                tank_id,
                time,
                status.value,
                f"tank {tank_id}: culture classified as {status.value}",
            )

    def _raise_alert(self, tank_id: str, time: float, status: str, message: str) -> None:
        self._alert_seq += 1
        record = AlertRecord(
            alert_id=self._alert_seq, tank_id=tank_id, time=time, status=status, message=message
        )
        self.alerts.append(record)
        if self.store_dir is not None:
            RecordLog(self.store_dir / "alerts.ndjson").append(
                RecordEnvelope(
                    record_type="alert",
                    timestamp=time,
                    payload=record.as_dict(),
                    source={"tank_id": tank_id},
                )
            )

    def acknowledge_alert(self, alert_id: int) -> bool:
        for i, alert in enumerate(self.alerts):
            if alert.alert_id == alert_id and not alert.acknowledged:
                self.alerts[i] = AlertRecord(
                    alert_id=alert.alert_id,
                    tank_id=alert.tank_id,
                    time=alert.time,
                    status=alert.status,
                    message=alert.message,
                    acknowledged=True,
                )
                return True
        return False

    def flush(self) -> None:
        """Release all buffered telemetry (end of run / shutdown)."""
        for tank_id in self.series:
            self._release(tank_id, force=True)
            self._finalize_bucket(tank_id)
            if self.series[tank_id].finalize():
                self._record_calibration(tank_id)

    # -- manual counts ---------------------------------------------------

    def add_manual_count(self, tank_id: str, manual: ManualCount) -> bool:
        """Ingest an operator manual count; returns True if it calibrated."""
        series = self._ensure_tank(tank_id)
        calibrated = series.add_manual_count(manual)
        if self.store_dir is not None:
            RecordLog(self.store_dir / "manual_counts.ndjson").append(
                RecordEnvelope(
                    record_type="manual_count",
                    timestamp=manual.time,
                    payload=manual.to_payload(),
                    source={"tank_id": tank_id},
                )
            )
        if calibrated:
            self._record_calibration(tank_id)
        return calibrated

    def _record_calibration(self, tank_id: str) -> None:
        series = self.series[tank_id]
        if self.store_dir is None or series.scaling_factor is None:
            return
        RecordLog(self.store_dir / "calibrations.ndjson").append(
            RecordEnvelope(
                record_type="calibration",
                timestamp=series.calibration_time or 0.0,
                payload={
                    "scaling_factor": series.scaling_factor,
                    "calibration_time": series.calibration_time,
                },
                source={"tank_id": tank_id},
            )
        )

    # -- command path ------------------------------------------------------

    def dispatch(self, cmd: Command) -> list[Ack]:
        """Deliver a command to its targets; one ack (or timeout) per unit."""
        if cmd.target_unit is not None:
            if cmd.target_unit not in self.units:
                raise ProtocolError(f"unknown unit {cmd.target_unit!r}")
            targets = [cmd.target_unit]
        else:
            targets = sorted(u.unit_id for u in self.tank_units(cmd.target_tank or ""))
            if not targets:
                raise ProtocolError(f"unknown tank {cmd.target_tank!r}")
        acks = []
        for unit_id in targets:
            transport = self.transports.get(unit_id)
            unit_cmd = Command(
                command_id=cmd.command_id,
                verb=cmd.verb,
                target_unit=unit_id,
                args=cmd.args,
            )
            if transport is None:
                acks.append(
                    Ack(cmd.command_id, unit_id, ok=False, reason="unreachable: timeout")
                )
                continue
            try:
                acks.append(transport(unit_cmd))
            except Exception as exc:  # transport fault, not unit rejection
                log.warning("command transport to %s failed: %s", unit_id, exc)
                acks.append(
                    Ack(cmd.command_id, unit_id, ok=False, reason=f"unreachable: {exc}")
                )
        return acks

    # -- queries -------------------------------------------------------------

    def tank_ids(self) -> list[str]:
        return sorted(self.series)

    def tank_summary(self, tank_id: str) -> dict[str, Any]:
        series = self.series[tank_id]
        fert = series.fertilization_curve()
        counts = series.tank_count_curve()
        latest_f = next((v for v in reversed(fert.rolling) if v is not None), None)
        latest_estimate = next((v for v in reversed(counts.rolling) if v is not None), None)
        mode = OperationalMode.SURFACE
        if series.mode_segments:
            mode = series.mode_segments[-1][1]
        active_alerts = [a for a in self.alerts if a.tank_id == tank_id and not a.acknowledged]
        return {
            "tank_id": tank_id,
            "mode": mode.value,
            "health": self.health(tank_id).value,
            "latest_fertilization": latest_f,
            "latest_tank_estimate": latest_estimate,
            "scaling_factor": series.scaling_factor,
            "n_units": len(self.tank_units(tank_id)),
            "active_alerts": len(active_alerts),
            "fert_points": len(series.fert_points),
            "count_points": len(series.count_points),
        }

    def health(self, tank_id: str) -> CultureHealth:
        return self._trackers[tank_id].status

    def stats(self) -> dict[str, int]:
        return {
            "stored_records": self.stored_records,
            "duplicates_dropped": self.duplicates_dropped,
            "stragglers": self.stragglers,
            "units": len(self.units),
            "tanks": len(self.series),
        }

    def close(self) -> None:
        for rlog in self._logs.values():
            rlog.close()
        self._logs.clear()


def rebuild_series(
    store_dir: str | Path, analytics_config: AnalyticsConfig | None = None
) -> dict[str, TankSeries]:
    """Reconstruct per-tank series from stored logs.

    Telemetry is replayed per tank in (timestamp, unit_id, frame_id)
    order through the same pooling path as live ingestion, then manual
    counts are applied in time order. When the live run had no
    out-of-window stragglers the rebuilt series reproduce the live
    analytics byte for byte.
    """
    from spawnwatch.fleet.clock import SimClock
    from spawnwatch.store import scan_envelopes

    store_dir = Path(store_dir)
    clock = SimClock(float("inf"))
    coord = Coordinator(clock, store_dir=None, analytics_config=analytics_config)

    messages: list[tuple[float, str, int, Telemetry]] = []
    telemetry_dir = store_dir / "telemetry"
    if telemetry_dir.is_dir():
        for path in sorted(telemetry_dir.glob("*.ndjson")):
            for env in scan_envelopes(path, record_type="telemetry"):
                unit_id = env.source.get("unit_id", path.stem)
                tank_id = env.source.get("tank_id", "unknown")
                payload = env.payload
                msg = Telemetry(
                    unit_id=unit_id,
                    frame_id=int(payload["frame_id"]),
                    timestamp=env.timestamp,
                    mode=OperationalMode(payload["mode"]),
                    counts=StageCounts.from_dict(payload["counts"])
                    if "counts" in payload
                    else None,
                    in_focus=payload.get("in_focus"),
                    inference_time=float(payload.get("inference_time", 0.0)),
                    error=payload.get("error"),
                )
                coord.register_unit(Hello(unit_id=unit_id, tank_id=tank_id))
                messages.append((msg.timestamp, unit_id, msg.frame_id, msg))

    manuals: list[tuple[float, str, ManualCount]] = []
    manual_log = store_dir / "manual_counts.ndjson"
    if manual_log.exists():
        for env in scan_envelopes(manual_log, record_type="manual_count"):
            manuals.append(
                (env.timestamp, env.source.get("tank_id", "unknown"), ManualCount.from_payload(env.payload))
            )

    events: list[tuple[float, int, Any]] = [(t, 0, m) for t, _u, _f, m in sorted(messages)]
    events += [(t, 1, (tank_id, m)) for t, tank_id, m in sorted(manuals, key=lambda x: x[0])]
    events.sort(key=lambda e: (e[0], e[1]))
    for _t, kind, item in events:
        if kind == 0:
            coord.ingest(item)
        else:
            tank_id, manual = item
            coord.add_manual_count(tank_id, manual)
    coord.flush()
    return coord.series
