import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fybrr.errors import InvalidConfigError
from fybrr.model import ScoreParams, validate_room
from fybrr.overlay import create_room, height, join_peer
from fybrr.sim.baseline import baseline_detach, baseline_height, baseline_reattach, build_baseline
from fybrr.sim.capacity import capacity_demand, capacity_utilization
from fybrr.sim.compare import compare
from fybrr.sim.config import SimConfig, dump_config, load_config
from fybrr.sim.engine import run_simulation
from fybrr.sim.io import read_trace, write_snapshots, write_trace
from fybrr.sim.population import draw_population, edge_delay_us

from fixtures import expected_subscriptions, path_delay_us

P = ScoreParams()
SHORT = dict(num_peers=20, duration=30.0)


def fybrr_room(peers):
    room = create_room("r", peers[0], 2.5, P)
    for p in peers[1:]:
        join_peer(room, p)
    return room


# ---------------------------------------------------------------- population / baselines


def test_population_shape_and_determinism():
    a = draw_population(3, 57, 2.5, P)
    assert a == draw_population(3, 57, 2.5, P)
    assert a[0].id == "S" and a[1].id == "p00" and a[-1].id == "p55"
    assert all(5 <= p.upload_bandwidth <= 100 and p.slots in (2, 3, 4) for p in a)


def test_edge_delay_is_fixed_per_link():
    assert edge_delay_us(1, "a", "b", 3.5, 0.25) == edge_delay_us(1, "a", "b", 3.5, 0.25)
    assert edge_delay_us(1, "a", "b", 3.5, 0.0) == 3500


@pytest.mark.parametrize("scheme,n,h", [("BINARY", 7, 2), ("QUAD", 5, 1), ("BINARY", 57, 5), ("QUAD", 57, 3)])
def test_complete_baseline_heights(scheme, n, h):
    room = build_baseline(scheme, draw_population(0, n, 2.5, P))
    assert baseline_height(room) == h
    assert validate_room(room) == []


def test_baseline_reattach_first_free_slot():
    room = build_baseline("BINARY", draw_population(0, 7, 2.5, P))
    # S{p00{p02, p03}, p01{p04, p05}}; p01 is full, so the second orphan lands under the first.
    orphans = baseline_detach(room, "p00", failed=True)
    assert orphans == ["p02", "p03"]
    assert baseline_reattach(room, orphans) == [("p02", "S"), ("p03", "p02")]
    assert validate_room(room) == []


@pytest.mark.parametrize("seed", range(20))
def test_height_ordering_on_populations(seed):
    peers = draw_population(seed, 57, 2.5, P)
    h_f = height(fybrr_room(peers))
    assert baseline_height(build_baseline("QUAD", peers)) <= h_f <= baseline_height(build_baseline("BINARY", peers))


# ---------------------------------------------------------------- capacity


def test_capacity_demand_directions():
    peers = draw_population(0, 57, 2.5, P)
    assert capacity_demand("BINARY", peers) < capacity_demand("FYBRR", peers) == 1.0 < capacity_demand("QUAD", peers)


def test_capacity_demand_hand_example():
    peers = draw_population(0, 3, 2.5, P)
    for p, s in zip(peers, (2, 3, 3)):
        p.slots = s
    assert capacity_demand("BINARY", peers) == 6 / 8
    assert capacity_demand("QUAD", peers) == 12 / 8


def test_capacity_utilization_counts_edges():
    room = fybrr_room(draw_population(1, 57, 2.5, P))
    active = room.active_ids()
    assert capacity_utilization(room) == (len(active) - 1) / sum(room.peers[p].slots for p in active)


# ---------------------------------------------------------------- config


def test_config_round_trip(tmp_path):
    cfg = SimConfig(seed=4, scheme="quad", leave_rate=0.1)
    path = tmp_path / "c.yaml"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_config_overrides_win(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("simulation:\n  seed: 3\nheartbeat:\n  interval: 1.0\n")
    cfg = load_config(path, seed=9, heartbeat_misses=3)
    assert cfg.seed == 9 and cfg.heartbeat.interval == 1.0 and cfg.heartbeat.miss_threshold == 3


@pytest.mark.parametrize("text", ["[1, 2]", "bogus: {}\n", "simulation:\n  nope: 1\n", "simulation:\n  scheme: tri\n",
                                  "scoring:\n  k1: 0.9\n", "simulation:\n  duration: -1\n", "{{{"])
def test_config_rejects(tmp_path, text):
    path = tmp_path / "c.yaml"
    path.write_text(text)
    with pytest.raises(InvalidConfigError):
        load_config(path)


def test_config_missing_file(tmp_path):
    with pytest.raises(InvalidConfigError):
        load_config(tmp_path / "absent.yaml")


# ---------------------------------------------------------------- engine


def test_run_is_deterministic():
    cfg = SimConfig(seed=5, **SHORT, leave_rate=0.1, fail_rate=0.1, rejoin_rate=0.1)
    a, b = run_simulation(cfg), run_simulation(cfg)
    assert a.trace == b.trace and a.snapshots == b.snapshots and a.report == b.report


def test_result_unpacks():
    trace, snapshots, report = run_simulation(SimConfig(**SHORT))
    assert trace and snapshots and report.height >= 1


@pytest.mark.parametrize("scheme", ["FYBRR", "BINARY", "QUAD"])
def test_lossless_static_run(scheme):
    res = run_simulation(SimConfig(seed=2, scheme=scheme, overload_loss=False, **SHORT))
    assert all(m.pdr == 1.0 for m in res.report.nodes.values())
    assert len(res.report.nodes) == SHORT["num_peers"] - 1


def test_quad_overload_loses_packets():
    res = run_simulation(SimConfig(seed=2, scheme="QUAD"))
    assert res.report.mean_pdr < 1.0


@pytest.mark.parametrize("scheme", ["FYBRR", "BINARY", "QUAD"])
def test_latency_equals_path_sum_without_noise(scheme):
    cfg = SimConfig(seed=1, scheme=scheme, edge_noise_ms=0.0, contention_ms=0.0, overload_loss=False, **SHORT)
    res = run_simulation(cfg)
    last = max(e.seq for e in res.trace)
    for e in res.trace:
        if e.seq == last:
            assert e.arrive_us - e.emit_us == path_delay_us(res, e.node)


@pytest.mark.parametrize("scheme", ["FYBRR", "BINARY", "QUAD"])
@pytest.mark.parametrize("seed", [0, 1])
def test_conservation_under_churn(scheme, seed):
    cfg = SimConfig(seed=seed, scheme=scheme, num_peers=30, duration=80.0,
                    leave_rate=0.1, fail_rate=0.1, rejoin_rate=0.15)
    res = run_simulation(cfg)
    got: dict[str, set[int]] = {}
    for e in res.trace:
        got.setdefault(e.node, set()).add(e.seq)
    assert sum(len(v) for v in got.values()) == len(res.trace)
    assert got == expected_subscriptions(res)
    for node, m in res.report.nodes.items():
        assert m.received + m.lost == len(got[node])


@pytest.mark.parametrize("seed", range(5))
def test_churn_keeps_fybrr_tree_valid(seed):
    cfg = SimConfig(seed=seed, leave_rate=0.15, fail_rate=0.15, rejoin_rate=0.2, duration=150.0)
    res = run_simulation(cfg)
    assert res.invalid == [] and res.stranded == []
    assert res.detections
    for d in res.detections:
        assert d.detected_us - d.silenced_us <= cfg.heartbeat.detection_bound * 1e6
        assert d.aux_before_reparent


def test_startup_delay_flat():
    res = run_simulation(SimConfig(seed=0))
    xs = sorted(res.join_times, key=res.join_times.get)
    ys = [res.report.nodes[p].startup_delay for p in xs]
    n = len(xs)
    mx, my = (n - 1) / 2, sum(ys) / n
    slope = sum((i - mx) * (y - my) for i, y in enumerate(ys)) / sum((i - mx) ** 2 for i in range(n))
    assert abs(slope) <= 0.001


def test_invalid_config_rejected_by_run():
    cfg = SimConfig()
    cfg.duration = -1
    with pytest.raises(InvalidConfigError):
        run_simulation(cfg)


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.sampled_from(["FYBRR", "BINARY", "QUAD"]))
def test_pdr_in_unit_interval(seed, scheme):
    res = run_simulation(SimConfig(seed=seed, scheme=scheme, num_peers=15, duration=25.0, fail_rate=0.2))
    assert all(0.0 <= m.pdr <= 1.0 for m in res.report.nodes.values())
    assert res.stranded == []


# ---------------------------------------------------------------- io / compare


def test_trace_csv_round_trip(tmp_path):
    res = run_simulation(SimConfig(**SHORT))
    path = write_trace(tmp_path / "t.csv", res.trace)
    assert path.read_text().splitlines()[0] == "node_id,seq,emit_us,arrive_us,delivered"
    assert read_trace(path) == res.trace


def test_snapshot_files(tmp_path):
    paths = write_snapshots(tmp_path, [(0, {"S": None}), (1000, {"S": None, "A": "S"})])
    assert [p.name for p in paths] == ["snapshot_00000_0.csv", "snapshot_00001_1000.csv"]
    assert paths[1].read_text() == "parent,child\nS,A\n"


def test_compare_writes_identical_files(tmp_path):
    base = SimConfig(**SHORT)
    for d in ("a", "b"):
        compare(base, [42], tmp_path / d)
    names = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert names and names == sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    assert (tmp_path / "a" / "seed42" / "quad" / "trace.csv").exists()


def test_compare_parallel_matches_serial():
    base = SimConfig(**SHORT)
    assert compare(base, [0, 1], jobs=2).runs == compare(base, [0, 1]).runs


def test_compare_verdict_text():
    cmp = compare(SimConfig(**SHORT), [0, 1])
    text = cmp.verdict_text()
    assert text.startswith("height_ordering: ")
    assert not math.isnan(cmp.table()[0][1])
