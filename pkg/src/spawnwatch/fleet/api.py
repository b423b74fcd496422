"""HTTP query/command API over a running coordinator.

Read endpoints expose tank/unit listings, fertilization and tank-count
series (raw plus rolling statistics), health, alerts, and reports; write
endpoints carry operator commands and manual counts. Every response body
carries ``schema_version``. Authentication is a single static token
(``Authorization: Bearer <token>`` or ``X-Api-Token``) when configured.
"""

from __future__ import annotations

import asyncio
import json
import uuid
from pathlib import Path
from typing import Any

from fastapi import Depends, FastAPI, HTTPException, Query, Request
from fastapi.responses import StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from spawnwatch.analytics import ManualCount, harvest_plan, labor_report
from spawnwatch.fleet.coordinator import Coordinator
from spawnwatch.fleet.protocol import Command, CommandVerb, ProtocolError

SCHEMA_VERSION = 1


class CommandIn(BaseModel):
    verb: CommandVerb
    tank_id: str | None = None
    unit_id: str | None = None
    args: dict[str, Any] = Field(default_factory=dict)


class ManualCountIn(BaseModel):
    time: float
    tank_total: int = Field(ge=0)
    method: str = ""


def _versioned(payload: dict[str, Any]) -> dict[str, Any]:
    return {"schema_version": SCHEMA_VERSION, **payload}


def create_app(
    coordinator: Coordinator,
    token: str | None = None,
    static_dir: str | Path | None = None,
    events_poll_s: float = 0.5,
) -> FastAPI:
    app = FastAPI(title="spawnwatch coordinator", version="0.1.0")

    def require_token(request: Request) -> None:
        if token is None:
            return
        header = request.headers.get("authorization", "")
        if header == f"Bearer {token}" or request.headers.get("x-api-token") == token:
            return
        raise HTTPException(status_code=401, detail="missing or invalid API token")

    def get_series(tank_id: str):
        if tank_id not in coordinator.series:
            raise HTTPException(status_code=404, detail=f"unknown tank {tank_id!r}")
        return coordinator.series[tank_id]

    auth = Depends(require_token)

    @app.get("/api/tanks", dependencies=[auth])
    def list_tanks():
        return _versioned(
            {"tanks": [coordinator.tank_summary(t) for t in coordinator.tank_ids()]}
        )

    @app.get("/api/tanks/{tank_id}", dependencies=[auth])
    def tank_detail(tank_id: str):
        get_series(tank_id)
        units = [
            {
                "unit_id": u.unit_id,
                "tank_id": u.tank_id,
                "mode": u.last_mode.value if u.last_mode else None,
                "last_frame_time": u.last_frame_time,
                "frames_stored": u.frames_stored,
                "errors": u.errors,
            }
            for u in coordinator.tank_units(tank_id)
        ]
        return _versioned({"tank": coordinator.tank_summary(tank_id), "units": units})

    @app.get("/api/tanks/{tank_id}/series/fertilization", dependencies=[auth])
    def fertilization_series(tank_id: str):
        series = get_series(tank_id)
        curve = series.fertilization_curve()
        return _versioned(
            {
                "tank_id": tank_id,
                "times": list(curve.times),
                "values": list(curve.values),
                "rolling": list(curve.rolling),
                "sigma": list(curve.sigma),
                "window": series.config.surface_window,
            }
        )

    @app.get("/api/tanks/{tank_id}/series/counts", dependencies=[auth])
    def count_series(tank_id: str):
        series = get_series(tank_id)
        curve = series.tank_count_curve()
        return _versioned(
            {
                "tank_id": tank_id,
                "times": list(curve.times),
                "image_counts": [p.image_count for p in series.count_points],
                "estimates": list(curve.values),
                "rolling": list(curve.rolling),
                "sigma": list(curve.sigma),
                "scaling_factor": series.scaling_factor,
                "calibration_time": series.calibration_time,
                "window": series.config.subsurface_window,
                "manual_counts": [m.to_payload() for m in series.manual_counts],
            }
        )

    @app.get("/api/tanks/{tank_id}/health", dependencies=[auth])
    def tank_health(tank_id: str):
        get_series(tank_id)
        return _versioned({"tank_id": tank_id, "health": coordinator.health(tank_id).value})

    @app.get("/api/units", dependencies=[auth])
    def list_units():
        return _versioned(
            {
                "units": [
                    {
                        "unit_id": u.unit_id,
                        "tank_id": u.tank_id,
                        "mode": u.last_mode.value if u.last_mode else None,
                        "last_frame_time": u.last_frame_time,
                        "frames_stored": u.frames_stored,
                        "errors": u.errors,
                    }
                    for u in sorted(coordinator.units.values(), key=lambda u: u.unit_id)
                ]
            }
        )

    @app.get("/api/alerts", dependencies=[auth])
    def list_alerts(since: int = Query(default=0, ge=0)):
        alerts = [a.as_dict() for a in coordinator.alerts if a.alert_id > since]
        next_since = coordinator.alerts[-1].alert_id if coordinator.alerts else since
        return _versioned({"alerts": alerts, "next_since": next_since})

    @app.post("/api/alerts/{alert_id}/ack", dependencies=[auth])
    def ack_alert(alert_id: int):
        if not coordinator.acknowledge_alert(alert_id):
            raise HTTPException(status_code=404, detail=f"no unacknowledged alert {alert_id}")
        return _versioned({"acknowledged": alert_id})

    @app.post("/api/commands", dependencies=[auth])
    def post_command(body: CommandIn):
        try:
            cmd = Command(
                command_id=uuid.uuid4().hex[:12],
                verb=body.verb,
                target_unit=body.unit_id,
                target_tank=body.tank_id,
                args=body.args,
            )
            acks = coordinator.dispatch(cmd)
        except ProtocolError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        return _versioned(
            {
                "command_id": cmd.command_id,
                "verb": cmd.verb.value,
                "acks": [
                    {
                        "unit_id": a.unit_id,
                        "ok": a.ok,
                        "state": a.state,
                        "reason": a.reason,
                    }
                    for a in acks
                ],
            }
        )

    @app.post("/api/tanks/{tank_id}/manual_counts", dependencies=[auth])
    def post_manual_count(tank_id: str, body: ManualCountIn):
        get_series(tank_id)
        calibrated = coordinator.add_manual_count(
            tank_id, ManualCount(time=body.time, tank_total=body.tank_total, method=body.method)
        )
        return _versioned(
            {
                "tank_id": tank_id,
                "calibrated": calibrated,
                "scaling_factor": coordinator.series[tank_id].scaling_factor,
            }
        )

    @app.get("/api/tanks/{tank_id}/harvest", dependencies=[auth])
    def harvest(
        tank_id: str,
        substrate_units: int = Query(gt=0),
        target_density_per_liter: float = Query(default=50.0, gt=0),
        settlement_tank_liters: float = Query(gt=0),
    ):
        series = get_series(tank_id)
        curve = series.tank_count_curve()
        latest = next((v for v in reversed(curve.rolling) if v is not None), None)
        if latest is None or latest <= 0:
            raise HTTPException(status_code=409, detail="no tank estimate available yet")
        plan = harvest_plan(latest, substrate_units, target_density_per_liter, settlement_tank_liters)
        return _versioned(
            {
                "tank_id": tank_id,
                "tank_estimate": latest,
                "required_larvae": plan.required_larvae,
                "proportion": plan.proportion,
                "shortfall": plan.shortfall,
                "inputs": {
                    "substrate_units": substrate_units,
                    "target_density_per_liter": target_density_per_liter,
                    "settlement_tank_liters": settlement_tank_liters,
                },
            }
        )

    @app.get("/api/reports/labor", dependencies=[auth])
    def labor(
        n_tanks: int = Query(default=60, ge=0),
        surface_hours: float = Query(default=12.0, ge=0),
        surface_samples_per_hour: float = Query(default=12.0, ge=0),
        subsurface_days: float = Query(default=6.0, ge=0),
        minutes_per_sample: float = Query(default=20.0, ge=0),
        operator_hours: float = Query(default=40.0, ge=0),
    ):
        report = labor_report(
            n_tanks=n_tanks,
            surface_hours=surface_hours,
            surface_samples_per_hour=surface_samples_per_hour,
            subsurface_days=subsurface_days,
            minutes_per_sample=minutes_per_sample,
            operator_hours=operator_hours,
        )
        return _versioned(report.as_dict())

    @app.get("/api/stats", dependencies=[auth])
    def stats():
        return _versioned(coordinator.stats())

    @app.get("/api/events", dependencies=[auth])
    async def events(request: Request, since: int = Query(default=0, ge=0)):
        """Server-sent event stream: alert events plus periodic heartbeats."""

        async def stream():
            last = since
            while True:
                if await request.is_disconnected():
                    break
                fresh = [a for a in coordinator.alerts if a.alert_id > last]
                for alert in fresh:
                    last = alert.alert_id
                    yield f"event: alert\ndata: {json.dumps(alert.as_dict(), sort_keys=True)}\n\n"
                heartbeat = {
                    "time": coordinator.clock.now(),
                    "tanks": [coordinator.tank_summary(t) for t in coordinator.tank_ids()],
                }
                yield f"event: heartbeat\ndata: {json.dumps(heartbeat, sort_keys=True)}\n\n"
                await asyncio.sleep(events_poll_s)

        return StreamingResponse(stream(), media_type="text/event-stream")

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="console")

    return app
