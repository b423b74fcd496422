"""Operator and developer command line.

Subcommands: simulate, detect, eval, analyze, serve, report, annotate.
Every run writes a manifest capturing the full effective configuration;
re-running a subcommand with the same manifest inputs reproduces its
machine-readable outputs byte for byte. SPAWNWATCH_SEED and
SPAWNWATCH_OUT provide environment defaults for --seed and --out.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import threading
from pathlib import Path

from spawnwatch import __version__
from spawnwatch.analytics import (
    AnalyticsConfig,
    ManualCount,
    TankSeries,
    harvest_plan,
    labor_report,
    rmse,
)
from spawnwatch.detect import (
    DetectionResult,
    DetectorError,
    DetectorNoise,
    oracle_detect,
    reference_detect,
    uniform_confusion,
)
from spawnwatch.evalkit import EvalFrame, MatchConfig, evaluate
from spawnwatch.model import OperationalMode, StageLabel, counts_from_labels
from spawnwatch.simtank import (
    Scenario,
    ScenarioError,
    Tank,
    load_scenario,
    read_pgm,
    render_frame,
    scenario_text,
    write_pgm,
)
from spawnwatch.simtank.tank import FrameTruth
from spawnwatch.store import RecordEnvelope, RecordLog, scan_envelopes


class CliError(Exception):
    """User-facing command failure (nonzero exit)."""


def _env_default(name: str, fallback=None):
    return os.environ.get(f"SPAWNWATCH_{name}", fallback)


def _write_manifest(out_dir: Path, subcommand: str, params: dict, scenario: Scenario | None = None) -> None:
    manifest = {
        "tool": "spawnwatch",
        "version": __version__,
        "subcommand": subcommand,
        "params": params,
    }
    if scenario is not None:
        manifest["scenario"] = scenario_text(scenario)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _load_run_truth(run_dir: Path) -> list[FrameTruth]:
    path = run_dir / "truth.ndjson"
    if not path.exists():
        raise CliError(f"{run_dir}: no truth.ndjson (run simulate first)")
    return [FrameTruth.from_payload(env.payload) for env in scan_envelopes(path, record_type="truth")]


def _load_run_detections(run_dir: Path) -> dict[int, DetectionResult]:
    path = run_dir / "detections.ndjson"
    if not path.exists():
        raise CliError(f"{run_dir}: no detections.ndjson (run detect first)")
    out = {}
    for env in scan_envelopes(path, record_type="detection"):
        result = DetectionResult.from_payload(env.payload)
        out[result.frame_id] = result
    return out


def _scenario_from_manifest(run_dir: Path) -> Scenario:
    path = run_dir / "manifest.json"
    if not path.exists():
        raise CliError(f"{run_dir}: no manifest.json")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if "scenario" not in manifest:
        raise CliError(f"{run_dir}: manifest has no scenario")
    from spawnwatch.simtank import parse_scenario

    return parse_scenario(manifest["scenario"])


# -- simulate ----------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = dataclasses.replace(
            scenario, tank=dataclasses.replace(scenario.tank, seed=int(args.seed))
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(out_dir, "simulate", {"scenario_path": str(args.scenario)}, scenario)

    tank = Tank(scenario.tank)
    log = RecordLog(out_dir / "truth.ndjson")
    renders_dir = out_dir / "renders"
    if scenario.render:
        renders_dir.mkdir(exist_ok=True)
    n_frames = 0
    interval = scenario.capture_interval_s
    next_capture = interval
    while next_capture <= scenario.duration_s:
        tank.step(next_capture - tank.time)
        frame = tank.capture_frame()
        log.append(
            RecordEnvelope(
                record_type="truth",
                timestamp=frame.time,
                payload=frame.to_payload(),
                source={"tank_id": "sim"},
            )
        )
        if scenario.render:
            image = render_frame(
                frame,
                scenario.frame_width_px,
                scenario.frame_height_px,
                noise_sigma=scenario.render_noise_sigma,
                seed=scenario.tank.seed,
            )
            write_pgm(image, renders_dir / f"frame_{frame.frame_id:06d}.pgm")
        n_frames += 1
        next_capture += interval
    log.close()
    print(f"simulated {n_frames} frames -> {out_dir}")
    return 0


# -- detect --------------------------------------------------------------------


def _parse_detector_spec(spec: str) -> tuple[str, OperationalMode | None]:
    name, _, mode_str = spec.partition(":")
    if name not in ("oracle", "reference"):
        raise CliError(f"unknown detector {name!r} (expected oracle or reference)")
    mode = None
    if mode_str:
        try:
            mode = OperationalMode(mode_str)
        except ValueError:
            raise CliError(f"unknown detector mode {mode_str!r}") from None
    return name, mode


def _noise_from_args(args: argparse.Namespace) -> DetectorNoise:
    if args.noise_file:
        obj = json.loads(Path(args.noise_file).read_text(encoding="utf-8"))
        diagonal = obj.pop("confusion_diagonal", None)
        if diagonal is not None:
            obj["confusion"] = uniform_confusion(float(diagonal))
        return DetectorNoise(**obj)
    confusion = (
        uniform_confusion(args.confusion_diagonal) if args.confusion_diagonal is not None else None
    )
    return DetectorNoise(
        miss_rate=args.miss_rate,
        false_positive_rate=args.fp_rate,
        confusion=confusion,
        box_jitter_sigma=args.jitter,
    )


def cmd_detect(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    name, pinned_mode = _parse_detector_spec(args.detector)
    noise = _noise_from_args(args)
    truths = _load_run_truth(run_dir)
    seed = int(args.seed) if args.seed is not None else 0

    scenario = None
    if name == "reference":
        scenario = _scenario_from_manifest(run_dir)

    log = RecordLog(run_dir / "detections.ndjson")
    n = 0
    slowest = 0.0
    for frame in truths:
        if pinned_mode is not None and frame.mode != pinned_mode:
            log.close()
            raise CliError(
                f"frame {frame.frame_id}: detector pinned to {pinned_mode.value} "
                f"but frame is {frame.mode.value}"
            )
        if name == "oracle":
            try:
                result = oracle_detect(frame, noise, seed=seed)
            except DetectorError as exc:
                log.close()
                raise CliError(f"frame {frame.frame_id}: {exc}") from exc
        else:
            pgm = run_dir / "renders" / f"frame_{frame.frame_id:06d}.pgm"
            if pgm.exists():
                image = read_pgm(pgm)
            else:
                image = render_frame(
                    frame,
                    scenario.frame_width_px,
                    scenario.frame_height_px,
                    noise_sigma=scenario.render_noise_sigma,
                    seed=scenario.tank.seed,
                )
            detected = reference_detect(image, frame.mode)
            slowest = max(slowest, detected.inference_time)
            result = DetectionResult(frame_id=frame.frame_id, detections=detected.detections)
        log.append(
            RecordEnvelope(
                record_type="detection",
                timestamp=frame.time,
                payload=result.to_payload(source=name),
                source={"detector": args.detector},
            )
        )
        n += 1
    log.close()
    _write_manifest(
        run_dir,
        "detect",
        {"detector": args.detector, "seed": seed, "run": str(run_dir)},
        scenario,
    )
    msg = f"detected on {n} frames -> {run_dir / 'detections.ndjson'}"
    if slowest:
        msg += f" (slowest frame {slowest * 1000:.0f} ms)"
    print(msg)
    return 0


# -- eval -----------------------------------------------------------------------


def cmd_eval(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    truths = _load_run_truth(run_dir)
    detections = _load_run_detections(run_dir)
    frames = [
        EvalFrame(
            frame_id=t.frame_id,
            detections=detections.get(t.frame_id, DetectionResult(t.frame_id, ())).detections,
            truths=t.boxes,
        )
        for t in truths
    ]
    cfg = MatchConfig(iou_threshold=args.iou, confidence_threshold=args.confidence)
    report = evaluate(frames, cfg)
    (run_dir / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (run_dir / "report.txt").write_text(report.to_text(), encoding="utf-8")
    print(report.to_text())
    return 0


# -- analyze ---------------------------------------------------------------------


def _series_from_run(
    truths: list[FrameTruth],
    detections: dict[int, DetectionResult],
    config: AnalyticsConfig,
    count_confidence: float = 0.5,
) -> TankSeries:
    series = TankSeries("sim", config)
    for frame in truths:
        result = detections.get(frame.frame_id)
        if result is None:
            continue
        confident = [d for d in result.detections if d.confidence >= count_confidence]
        if frame.mode == OperationalMode.SURFACE:
            series.add_surface_counts(frame.time, counts_from_labels(d.label for d in confident))
        else:
            series.add_subsurface_count(
                frame.time, sum(1 for d in confident if d.label == StageLabel.CORAL)
            )
    return series


def cmd_analyze(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    truths = _load_run_truth(run_dir)
    detections = _load_run_detections(run_dir)
    config = AnalyticsConfig(
        surface_window=args.surface_window, subsurface_window=args.subsurface_window
    )
    series = _series_from_run(truths, detections, config)

    manual_counts = []
    if args.manual_counts:
        for obj in json.loads(Path(args.manual_counts).read_text(encoding="utf-8")):
            manual_counts.append(ManualCount.from_payload(obj))
    for manual in manual_counts:
        series.add_manual_count(manual)
    series.finalize()

    fert = series.fertilization_curve()
    counts = series.tank_count_curve()
    (run_dir / "fertilization.tsv").write_text(fert.to_table("f"), encoding="utf-8")
    (run_dir / "tank_counts.tsv").write_text(counts.to_table("estimate"), encoding="utf-8")

    analysis: dict = {
        "health": series.health().value,
        "scaling_factor": series.scaling_factor,
        "calibration_time": series.calibration_time,
        "fertilization_points": len(series.fert_points),
        "count_points": len(series.count_points),
        "manual_counts": len(series.manual_counts),
        "rmse": {},
    }

    truth_fert = [
        (t.time, f)
        for t in truths
        if t.tank_counts is not None
        and (f := _safe_fert(t)) is not None
    ]
    rolling_points = fert.defined_rolling()
    if rolling_points and truth_fert:
        analysis["rmse"]["fertilization_rolling_vs_tank"] = rmse(
            rolling_points, truth_fert, config.pair_tolerance_s
        )
    population = [(t.time, float(t.tank_population)) for t in truths]
    est_points = counts.defined_rolling()
    if est_points and population:
        sub_population = [(t, p) for t, p in population if t >= est_points[0][0]]
        if sub_population:
            err = rmse(est_points, sub_population, config.pair_tolerance_s)
            mean_pop = sum(p for _, p in sub_population) / len(sub_population)
            analysis["rmse"]["tank_estimate"] = err
            analysis["rmse"]["tank_estimate_fraction"] = err / mean_pop if mean_pop else None

    (run_dir / "analysis.json").write_text(
        json.dumps(analysis, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(json.dumps(analysis, sort_keys=True, indent=2))
    return 0


def _safe_fert(frame: FrameTruth) -> float | None:
    from spawnwatch.analytics import fertilization_success

    assert frame.tank_counts is not None
    return fertilization_success(frame.tank_counts)


# -- report -----------------------------------------------------------------------


def cmd_report(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = labor_report(
        n_tanks=args.n_tanks,
        surface_hours=args.surface_hours,
        surface_samples_per_hour=args.surface_samples_per_hour,
        subsurface_days=args.subsurface_days,
        minutes_per_sample=args.minutes_per_sample,
        operator_hours=args.operator_hours,
    )
    (out_dir / "labor_report.json").write_text(
        json.dumps(report.as_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    lines = [
        f"tanks:                 {report.n_tanks}",
        f"samples per tank:      {report.samples_per_tank:.0f}",
        f"total manual samples:  {report.total_samples:.0f}",
        f"manual labor hours:    {report.manual_hours:.0f}",
        f"operator hours:        {report.operator_hours:.0f}",
        f"hours saved:           {report.hours_saved:.0f}",
    ]
    print("\n".join(lines))

    if args.tank_estimate is not None:
        plan = harvest_plan(
            args.tank_estimate,
            args.substrate_units,
            args.target_density,
            args.settlement_liters,
        )
        plan_dict = {
            "tank_estimate": args.tank_estimate,
            "required_larvae": plan.required_larvae,
            "proportion": plan.proportion,
            "shortfall": plan.shortfall,
        }
        (out_dir / "harvest_plan.json").write_text(
            json.dumps(plan_dict, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        print(
            f"harvest proportion:    {plan.proportion:.4f}"
            + (" (shortfall: fewer larvae than required)" if plan.shortfall else "")
        )
    _write_manifest(out_dir, "report", {k: v for k, v in vars(args).items() if k != "func"})
    return 0


# -- serve ------------------------------------------------------------------------


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from spawnwatch.fleet import FleetSimulation, load_topology
    from spawnwatch.fleet.api import create_app

    topology = load_topology(args.config)
    sim = FleetSimulation(topology, store_dir=args.out)
    app = create_app(sim.coordinator, token=topology.api_token, static_dir=args.static)

    stop = threading.Event()

    def drive() -> None:
        # Advance the simulated fleet in wall-paced slices.
        tick = 0.5
        while not stop.is_set() and sim.clock.now() < args.duration:
            sim.run(min(args.speedup * tick, args.duration - sim.clock.now()))
            stop.wait(tick)
        sim.coordinator.flush()

    driver = threading.Thread(target=drive, daemon=True)
    driver.start()
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    finally:
        stop.set()
        driver.join(timeout=5.0)
    return 0


# -- annotate ----------------------------------------------------------------------


def cmd_annotate(args: argparse.Namespace) -> int:
    from spawnwatch import annotate as hitl

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.action == "plan":
        rounds = hitl.plan_rounds(args.total, bootstrap=args.bootstrap, batch=args.batch)
        payload = [
            {
                "round_index": r.round_index,
                "source": r.source.value,
                "size": r.size,
                "image_ids": r.image_ids,
            }
            for r in rounds
        ]
        (out_dir / "rounds.json").write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        print(f"{len(rounds)} rounds, sizes {[r.size for r in rounds]}")
    elif args.action == "split":
        ids = [f"img-{i:06d}" for i in range(args.total)]
        split = hitl.make_split(ids, seed=args.seed or 0)
        payload = {
            "train": list(split.train),
            "val": list(split.val),
            "test": list(split.test),
            "seed": split.seed,
        }
        (out_dir / "split.json").write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        print(f"split {args.total} -> {len(split.train)}/{len(split.val)}/{len(split.test)}")
    elif args.action == "export":
        if not args.run:
            raise CliError("annotate export needs --run")
        truths = _load_run_truth(Path(args.run))
        labels = {f"frame_{t.frame_id:06d}": list(t.boxes) for t in truths}
        written = hitl.export_labels(labels, out_dir)
        print(f"exported {len(written)} label files -> {out_dir}")
    else:
        raise CliError(f"unknown annotate action {args.action!r}")
    _write_manifest(out_dir, f"annotate-{args.action}", {k: v for k, v in vars(args).items() if k != "func"})
    return 0


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spawnwatch",
        description="Coral spawn culture monitoring: simulator, detectors, analytics, fleet.",
    )
    parser.add_argument("--version", action="version", version=f"spawnwatch {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate", help="run a tank scenario and log ground truth")
    p.add_argument("--scenario", required=True, help="key = value scenario file")
    p.add_argument("--out", default=_env_default("OUT"), required=_env_default("OUT") is None)
    p.add_argument("--seed", default=_env_default("SEED"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="run a detector over a simulated run")
    p.add_argument("--run", required=True, help="run directory from simulate")
    p.add_argument("--detector", default="oracle", help="oracle[:mode] or reference[:mode]")
    p.add_argument("--seed", default=_env_default("SEED"))
    p.add_argument("--noise-file", help="JSON file with DetectorNoise fields")
    p.add_argument("--miss-rate", type=float, default=0.0)
    p.add_argument("--fp-rate", type=float, default=0.0)
    p.add_argument("--confusion-diagonal", type=float, default=None)
    p.add_argument("--jitter", type=float, default=0.0)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="evaluate detections against truth")
    p.add_argument("--run", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--confidence", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="fertilization/tank-count series and health")
    p.add_argument("--run", required=True)
    p.add_argument("--manual-counts", help="JSON list of {time, tank_total, method}")
    p.add_argument("--surface-window", type=int, default=20)
    p.add_argument("--subsurface-window", type=int, default=40)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve", help="run coordinator + API over a simulated fleet")
    p.add_argument("--config", required=True, help="fleet topology JSON")
    p.add_argument("--out", default=_env_default("OUT"), help="store directory for logs")
    p.add_argument("--static", help="static console assets to serve at /")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--duration", type=float, default=86400.0, help="simulated seconds to run")
    p.add_argument("--speedup", type=float, default=60.0, help="sim seconds per wall second")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="labor savings and harvest planning")
    p.add_argument("--out", default=_env_default("OUT"), required=_env_default("OUT") is None)
    p.add_argument("--n-tanks", type=int, default=60)
    p.add_argument("--surface-hours", type=float, default=12.0)
    p.add_argument("--surface-samples-per-hour", type=float, default=12.0)
    p.add_argument("--subsurface-days", type=float, default=6.0)
    p.add_argument("--minutes-per-sample", type=float, default=20.0)
    p.add_argument("--operator-hours", type=float, default=40.0)
    p.add_argument("--tank-estimate", type=float)
    p.add_argument("--substrate-units", type=int, default=2)
    p.add_argument("--target-density", type=float, default=50.0)
    p.add_argument("--settlement-liters", type=float, default=10.0)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("annotate", help="annotation round management")
    p.add_argument("action", choices=["plan", "split", "export"])
    p.add_argument("--total", type=int, default=2000)
    p.add_argument("--bootstrap", type=int, default=100)
    p.add_argument("--batch", type=int, default=200)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--run", help="run directory (for export)")
    p.add_argument("--out", default=_env_default("OUT"), required=_env_default("OUT") is None)
    p.set_defaults(func=cmd_annotate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
