"""Deterministic fleet simulation: units + coordinator on a shared clock.

Telemetry crosses the real wire encoding both ways, with optional fault
injection (duplication and bounded delivery delay) to soak-test the
coordinator's exactly-once and reordering guarantees.
"""

from __future__ import annotations

import heapq
import uuid
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from spawnwatch.analytics import AnalyticsConfig, ManualCount
from spawnwatch.fleet.clock import SimClock
from spawnwatch.fleet.coordinator import Coordinator
from spawnwatch.fleet.protocol import Ack, Command, CommandVerb, Hello, encode_message
from spawnwatch.fleet.topology import FleetTopology
from spawnwatch.fleet.unit import CameraUnit, UnitConfig
from spawnwatch.model import OperationalMode
from spawnwatch.simtank import Tank


@dataclass(frozen=True)
class FaultInjection:
    """Delivery faults: duplicate each message with some probability and
    delay each copy uniformly up to max_delay_s."""

    duplicate_prob: float = 0.0
    max_delay_s: float = 0.0
    seed: int = 0


class FleetSimulation:
    """Drives tanks, units, and the coordinator on one simulated clock."""

    def __init__(
        self,
        topology: FleetTopology,
        store_dir: str | Path | None = None,
        fault: FaultInjection | None = None,
        analytics_config: AnalyticsConfig | None = None,
    ):
        self.topology = topology
        self.clock = SimClock()
        self.coordinator = Coordinator(
            self.clock,
            store_dir=store_dir,
            analytics_config=analytics_config,
            reorder_window_s=topology.reorder_window_s,
        )
        self.fault = fault or FaultInjection()
        self._fault_rng = np.random.default_rng(self.fault.seed)
        self.tanks: dict[str, Tank] = {}
        self.units: list[CameraUnit] = []
        self._switched: set[str] = set()
        self._wire: list[tuple[float, int, str]] = []
        self._wire_seq = 0
        self.emitted = 0
        self.delivered_lines = 0

        for spec in topology.tanks:
            tank = Tank(spec.config)
            self.tanks[spec.tank_id] = tank
            for k in range(topology.units_per_tank):
                unit_id = f"{spec.tank_id}-u{k + 1}"
                cfg = UnitConfig(
                    unit_id=unit_id,
                    tank_id=spec.tank_id,
                    capture_interval_s=topology.capture_interval_s,
                    detector=topology.detector,
                    noise=topology.noise,
                    seed=topology.seed * 1009 + len(self.units),
                )
                unit = CameraUnit(cfg, tank, start_time=self.clock.now())
                self.units.append(unit)
                self.coordinator.register_unit(
                    Hello(unit_id=unit_id, tank_id=spec.tank_id),
                    transport=unit.handle_command,
                )

    def command(self, verb: CommandVerb, tank_id: str | None = None, unit_id: str | None = None,
                **args) -> list[Ack]:
        cmd = Command(
            command_id=uuid.uuid4().hex[:12],
            verb=verb,
            target_unit=unit_id,
            target_tank=tank_id,
            args=args,
        )
        return self.coordinator.dispatch(cmd)

    def add_manual_count(self, tank_id: str, manual: ManualCount) -> bool:
        return self.coordinator.add_manual_count(tank_id, manual)

    def _send(self, line: str) -> None:
        """Schedule a line for delivery, applying the fault model."""
        copies = 1
        if self.fault.duplicate_prob > 0 and self._fault_rng.random() < self.fault.duplicate_prob:
            copies = 2
        for _ in range(copies):
            delay = (
                float(self._fault_rng.uniform(0.0, self.fault.max_delay_s))
                if self.fault.max_delay_s > 0
                else 0.0
            )
            heapq.heappush(self._wire, (self.clock.now() + delay, self._wire_seq, line))
            self._wire_seq += 1

    def _deliver_due(self) -> None:
        now = self.clock.now()
        while self._wire and self._wire[0][0] <= now:
            _, _, line = heapq.heappop(self._wire)
            self.delivered_lines += 1
            self.coordinator.handle_line(line)

    def _auto_switch(self) -> None:
        for tank_id, tank in self.tanks.items():
            if tank_id in self._switched:
                continue
            if tank.time >= tank.timeline.t1:
                self._switched.add(tank_id)
                if self.topology.auto_switch_mode:
                    self.command(CommandVerb.SET_MODE, tank_id=tank_id, mode="subsurface")

    def run(self, duration_s: float, step_s: float | None = None) -> None:
        """Advance the whole fleet by duration_s of simulated time."""
        if step_s is None:
            step_s = min(u.capture_interval for u in self.units)
        end = self.clock.now() + duration_s
        while self.clock.now() < end:
            dt = min(step_s, end - self.clock.now())
            for tank in self.tanks.values():
                tank.step(dt)
            self.clock.advance(dt)
            self._auto_switch()
            now = self.clock.now()
            for unit in self.units:
                for msg in unit.poll(now):
                    self.emitted += 1
                    self._send(encode_message(msg))
            self._deliver_due()

    def finish(self) -> None:
        """Drain the wire and flush the coordinator's buffers."""
        if self._wire:
            last = max(t for t, _, _ in self._wire)
            self.clock.advance(max(0.0, last - self.clock.now()) + 1e-9)
            self._deliver_due()
        self.coordinator.flush()
        self.coordinator.close()
