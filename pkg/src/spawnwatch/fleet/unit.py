"""Simulated camera unit: the capture/detect loop plus command handling.

A unit samples its tank every capture interval, runs its bound detector,
and emits telemetry. Operator commands switch mode (monotone surface ->
sub-surface only), change the interval, power-cycle, or ping. Detector
failures are reported as error telemetry; the loop keeps running.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from spawnwatch.detect import DetectorError, DetectorNoise, oracle_detect, reference_detect
from spawnwatch.fleet.protocol import Ack, Command, CommandVerb, Telemetry
from spawnwatch.model import OperationalMode, StageLabel, counts_from_labels
from spawnwatch.simtank import Tank, render_frame


class PowerState(str, Enum):
    ON = "on"
    OFF = "off"
    REBOOTING = "rebooting"

    def __str__(self) -> str:
        return self.value


@dataclass
class UnitConfig:
    unit_id: str
    tank_id: str
    capture_interval_s: float = 10.0
    detector: str = "oracle"  # oracle | reference
    noise: DetectorNoise = field(default_factory=DetectorNoise)
    seed: int = 0
    count_confidence: float = 0.5
    debug_detections: bool = False
    reboot_s: float = 30.0
    render_px: int = 640

    def __post_init__(self) -> None:
        if self.capture_interval_s < 1.0:
            raise ValueError("capture_interval_s must be >= 1")
        if self.detector not in ("oracle", "reference"):
            raise ValueError(f"unknown detector {self.detector!r}")


class CameraUnit:
    """One camera on one tank; three of these usually share a tank."""

    def __init__(self, config: UnitConfig, tank: Tank, start_time: float = 0.0):
        self.config = config
        self.tank = tank
        self.mode = OperationalMode.SURFACE
        self.power = PowerState.ON
        self.capture_interval = config.capture_interval_s
        self.last_frame_time: float | None = None
        self.frames_emitted = 0
        self._next_capture = start_time + self.capture_interval
        self._reboot_until: float | None = None

    @property
    def unit_id(self) -> str:
        return self.config.unit_id

    def state(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "tank_id": self.config.tank_id,
            "mode": self.mode.value,
            "power": self.power.value,
            "capture_interval_s": self.capture_interval,
            "last_frame_time": self.last_frame_time,
            "frames_emitted": self.frames_emitted,
        }

    def handle_command(self, cmd: Command) -> Ack:
        if cmd.verb == CommandVerb.PING:
            return Ack(cmd.command_id, self.unit_id, ok=True, state=self.state())
        if cmd.verb == CommandVerb.SET_MODE:
            try:
                target = OperationalMode(cmd.args.get("mode"))
            except ValueError:
                return Ack(
                    cmd.command_id,
                    self.unit_id,
                    ok=False,
                    state=self.state(),
                    reason=f"unknown mode {cmd.args.get('mode')!r}",
                )
            if self.mode == OperationalMode.SUBSURFACE and target == OperationalMode.SURFACE:
                return Ack(
                    cmd.command_id,
                    self.unit_id,
                    ok=False,
                    state=self.state(),
                    reason="mode is monotone: cannot return to surface operation",
                )
            self.mode = target
            return Ack(cmd.command_id, self.unit_id, ok=True, state=self.state())
        if cmd.verb == CommandVerb.SET_INTERVAL:
            try:
                interval = float(cmd.args.get("interval_s"))
            except (TypeError, ValueError):
                return Ack(
                    cmd.command_id, self.unit_id, ok=False, state=self.state(),
                    reason="interval_s must be a number",
                )
            if interval < 1.0:
                return Ack(
                    cmd.command_id, self.unit_id, ok=False, state=self.state(),
                    reason=f"interval must be >= 1 s, got {interval}",
                )
            # Next capture keeps its schedule origin; only the cadence changes.
            self._next_capture += interval - self.capture_interval
            self.capture_interval = interval
            return Ack(cmd.command_id, self.unit_id, ok=True, state=self.state())
        if cmd.verb == CommandVerb.POWER_CYCLE:
            self.power = PowerState.REBOOTING
            self._reboot_until = None  # fixed at next poll, relative to sim time
            return Ack(cmd.command_id, self.unit_id, ok=True, state=self.state())
        return Ack(
            cmd.command_id, self.unit_id, ok=False, state=self.state(),
            reason=f"unsupported verb {cmd.verb}",
        )

    def _detect_counts(self) -> Telemetry:
        truth = self.tank.capture_frame()
        try:
            if self.config.detector == "reference":
                image = render_frame(
                    truth, self.config.render_px, self.config.render_px, seed=self.config.seed
                )
                result = reference_detect(image, self.mode)
                result = type(result)(
                    frame_id=truth.frame_id,
                    detections=result.detections,
                    inference_time=result.inference_time,
                )
            else:
                result = oracle_detect(truth, self.config.noise, seed=self.config.seed)
        except DetectorError as exc:
            return Telemetry(
                unit_id=self.unit_id,
                frame_id=truth.frame_id,
                timestamp=self.tank.time,
                mode=self.mode,
                error=str(exc),
            )
        confident = [d for d in result.detections if d.confidence >= self.config.count_confidence]
        counts = None
        in_focus = None
        if self.mode == OperationalMode.SURFACE:
            counts = counts_from_labels(d.label for d in confident)
        else:
            in_focus = sum(1 for d in confident if d.label == StageLabel.CORAL)
        detections = None
        if self.config.debug_detections:
            detections = tuple(
                {"label": d.label.value, "box": list(d.box.as_tuple()), "confidence": d.confidence}
                for d in result.detections
            )
        return Telemetry(
            unit_id=self.unit_id,
            frame_id=truth.frame_id,
            timestamp=self.tank.time,
            mode=self.mode,
            counts=counts,
            in_focus=in_focus,
            inference_time=result.inference_time,
            detections=detections,
        )

    def poll(self, now: float) -> list[Telemetry]:
        """Emit telemetry for every capture due by ``now``."""
        if self.power == PowerState.REBOOTING:
            if self._reboot_until is None:
                self._reboot_until = now + self.config.reboot_s
            if now >= self._reboot_until:
                self.power = PowerState.ON
                self._reboot_until = None
                self._next_capture = now + self.capture_interval
        out: list[Telemetry] = []
        while self.power == PowerState.ON and self._next_capture <= now:
            due = self._next_capture
            self._next_capture += self.capture_interval
            msg = self._detect_counts()
            self.last_frame_time = due
            self.frames_emitted += 1
            out.append(msg)
        return out
