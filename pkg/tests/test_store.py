"""Append-only record log: durability, recovery, scan filtering."""

import json
import random

import pytest

from spawnwatch.store import RecordEnvelope, RecordLog, scan, scan_envelopes

RECORD_TYPES = ["truth", "detection", "telemetry", "manual_count", "alert"]


def random_payload(rng, depth=0):
    choices = ["int", "float", "str", "list", "dict"] if depth < 2 else ["int", "float", "str"]
    kind = rng.choice(choices)
    if kind == "int":
        return rng.randrange(-1000, 1000)
    if kind == "float":
        return rng.uniform(-100, 100)
    if kind == "str":
        return "".join(rng.choice("abcdef \"\\'\u00e9\u4e2d") for _ in range(rng.randrange(0, 12)))
    if kind == "list":
        return [random_payload(rng, depth + 1) for _ in range(rng.randrange(0, 4))]
    return {f"k{i}": random_payload(rng, depth + 1) for i in range(rng.randrange(0, 4))}


def random_envelope(rng):
    return RecordEnvelope(
        record_type=rng.choice(RECORD_TYPES),
        timestamp=rng.uniform(0, 1000),
        payload={"value": random_payload(rng)},
        source={"unit_id": f"u{rng.randrange(3)}", "tank_id": f"t{rng.randrange(2)}"},
    )


class TestAppendReadBack:
    def test_round_trip_identity(self, tmp_path):
        rng = random.Random(0)
        envelopes = [random_envelope(rng) for _ in range(200)]
        path = tmp_path / "log.ndjson"
        with RecordLog(path) as log:
            for env in envelopes:
                log.append(env)
        assert list(scan_envelopes(path)) == envelopes

    def test_positions_strictly_monotone(self, tmp_path):
        path = tmp_path / "log.ndjson"
        positions = []
        with RecordLog(path) as log:
            for i in range(100_000):
                positions.append(
                    log.append(RecordEnvelope(record_type="truth", timestamp=float(i), payload={}))
                )
        assert all(a < b for a, b in zip(positions, positions[1:]))
        assert positions == [pos for pos, _ in scan(path)]

    def test_unknown_record_type_preserved(self, tmp_path):
        path = tmp_path / "log.ndjson"
        env = RecordEnvelope(record_type="future_thing", timestamp=1.0, payload={"x": 1})
        with RecordLog(path) as log:
            log.append(env)
        assert list(scan_envelopes(path)) == [env]


class TestCrashRecovery:
    def test_torn_final_line_dropped(self, tmp_path):
        path = tmp_path / "log.ndjson"
        with RecordLog(path) as log:
            for i in range(5):
                log.append(RecordEnvelope(record_type="truth", timestamp=float(i), payload={}))
        intact = path.read_bytes()
        with open(path, "ab") as fh:
            fh.write(b'{"v":1,"type":"truth","ts":99')  # no newline: torn write
        RecordLog(path).close()
        assert path.read_bytes() == intact
        assert len(list(scan_envelopes(path))) == 5

    def test_complete_but_garbled_tail_dropped(self, tmp_path):
        path = tmp_path / "log.ndjson"
        with RecordLog(path) as log:
            log.append(RecordEnvelope(record_type="truth", timestamp=0.0, payload={}))
        intact = path.read_bytes()
        with open(path, "ab") as fh:
            fh.write(b"!!garbage!!\n")
        RecordLog(path).close()
        assert path.read_bytes() == intact

    def test_append_after_recovery_continues(self, tmp_path):
        path = tmp_path / "log.ndjson"
        with RecordLog(path) as log:
            log.append(RecordEnvelope(record_type="truth", timestamp=0.0, payload={}))
        with open(path, "ab") as fh:
            fh.write(b'{"torn')
        with RecordLog(path) as log:
            log.append(RecordEnvelope(record_type="truth", timestamp=1.0, payload={}))
        times = [env.timestamp for env in scan_envelopes(path)]
        assert times == [0.0, 1.0]


class TestScan:
    @pytest.fixture()
    def populated(self, tmp_path):
        rng = random.Random(1)
        envelopes = [random_envelope(rng) for _ in range(300)]
        path = tmp_path / "log.ndjson"
        with RecordLog(path) as log:
            for env in envelopes:
                log.append(env)
        return path, envelopes

    def test_empty_filter_returns_all(self, populated):
        path, envelopes = populated
        assert list(scan_envelopes(path)) == envelopes

    def test_disjoint_time_range_empty(self, populated):
        path, _ = populated
        assert list(scan_envelopes(path, t_min=5000.0)) == []

    def test_filters_match_in_memory_oracle(self, populated):
        path, envelopes = populated
        cases = [
            {"record_type": "telemetry"},
            {"t_min": 100.0, "t_max": 600.0},
            {"source": {"unit_id": "u1"}},
            {"record_type": "truth", "t_min": 200.0, "source": {"tank_id": "t0"}},
        ]
        for kwargs in cases:
            want = [
                e
                for e in envelopes
                if (kwargs.get("record_type") is None or e.record_type == kwargs["record_type"])
                and (kwargs.get("t_min") is None or e.timestamp >= kwargs["t_min"])
                and (kwargs.get("t_max") is None or e.timestamp <= kwargs["t_max"])
                and all(e.source.get(k) == v for k, v in kwargs.get("source", {}).items())
            ]
            assert list(scan_envelopes(path, **kwargs)) == want

    def test_corrupt_interior_line_reported_and_skipped(self, tmp_path):
        path = tmp_path / "log.ndjson"
        good = RecordEnvelope(record_type="truth", timestamp=0.0, payload={})
        lines = [good.to_line(), "NOT JSON", good.to_line()]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        errors = []
        got = list(scan_envelopes(path, on_error=lambda pos, msg: errors.append((pos, msg))))
        assert got == [good, good]
        assert len(errors) == 1
        assert errors[0][0] == len(good.to_line()) + 1  # byte position of the bad line


def test_line_format_is_single_json_object():
    env = RecordEnvelope(record_type="truth", timestamp=1.5, payload={"a": [1, 2]}, source={"s": "x"})
    obj = json.loads(env.to_line())
    assert obj == {"v": 1, "type": "truth", "ts": 1.5, "src": {"s": "x"}, "data": {"a": [1, 2]}}
    assert "\n" not in env.to_line()
