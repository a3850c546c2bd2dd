import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fybrr.errors import (
    DuplicatePeerError,
    DuplicateRoomError,
    EmptyChildrenError,
    NoCapacityError,
    NoLiveCandidateError,
    SourceCannotLeaveError,
    SourceHasNoAuxError,
    UnknownPeerError,
)
from fybrr.model import PeerRecord, PeerState, ScoreParams, tree_depths, validate_room
from fybrr.overlay import (
    RoomRegistry,
    activate_auxiliary,
    auxiliary_candidates,
    begin_departure,
    complete_departure,
    create_room,
    depth,
    find_best_parent,
    find_min_slot_child_of_source,
    find_next_best_node,
    handle_failure,
    height,
    join_peer,
    leave_peer,
    make_peer,
    update_stats,
)

from fixtures import SCENARIOS, build_room, newcomer

P = ScoreParams()


@pytest.mark.parametrize("name", list(SCENARIOS))
def test_fixture_scenarios(name):
    assert SCENARIOS[name]() == []


# ---------------------------------------------------------------- rooms


def test_create_room_minimal():
    room = create_room("r1", PeerRecord("S", 10.0), 5.0)
    assert list(room.peers) == ["S"] and room.source == "S"
    assert room.peers["S"].slots == 2
    assert validate_room(room) == []


def test_registry_duplicate_room():
    reg = RoomRegistry()
    reg.create_room("r1", PeerRecord("S", 10.0), 5.0)
    with pytest.raises(DuplicateRoomError):
        reg.create_room("r1", PeerRecord("T", 10.0), 5.0)


# ---------------------------------------------------------------- queries


def test_min_slot_child():
    room = build_room({"S": ["A", "B"]}, {"A": 3, "B": 4})
    assert find_min_slot_child_of_source(room) == "A"


def test_min_slot_child_tie_goes_to_earlier_join():
    room = build_room({"S": ["A", "B"]}, {"A": 3, "B": 3})
    assert find_min_slot_child_of_source(room) == "A"


def test_min_slot_child_singleton_and_empty():
    assert find_min_slot_child_of_source(build_room({"S": ["A"]}, {})) == "A"
    with pytest.raises(EmptyChildrenError):
        find_min_slot_child_of_source(build_room({"S": []}, {}))


def test_best_parent_highest_score_with_free_slot():
    room = build_room({"S": ["A", "B"]}, {"S": 2, "A": 1, "B": 1}, {"S": 10, "A": 7, "B": 9})
    assert find_best_parent(room) == "B"


def test_best_parent_all_full():
    room = build_room({"S": ["A"]}, {"S": 1, "A": 0})
    with pytest.raises(NoCapacityError):
        find_best_parent(room)


def test_best_parent_prefers_shallower_on_equal_score():
    room = build_room({"S": ["A", "B"], "B": ["C"]}, {"S": 2, "A": 1, "B": 1, "C": 1}, {"A": 7, "C": 7})
    assert find_best_parent(room) == "A"


def test_best_parent_fills_a_level_before_the_next():
    # C at depth 2 outscores A at depth 1, yet the shallower level is filled first.
    room = build_room({"S": ["A", "B"], "B": ["C"]}, {"S": 2, "A": 2, "B": 1, "C": 2}, {"A": 1, "C": 50})
    assert find_best_parent(room) == "A"


def test_next_best_node_skips_source_children():
    room = build_room({"S": ["A", "B"], "A": ["X", "Y"]}, {}, {"A": 99, "B": 98, "X": 3, "Y": 4})
    assert find_next_best_node(room) == "Y"


def test_depth_and_height():
    room = build_room({"S": ["A"], "A": ["B"]}, {})
    assert depth(room, "S") == 0 and depth(room, "B") == 2 and height(room) == 2


def test_depth_unknown_peer():
    with pytest.raises(UnknownPeerError):
        depth(build_room({"S": []}, {}), "nope")


# ---------------------------------------------------------------- auxiliary feeds


def test_aux_candidates_depth_one_uses_siblings():
    room = build_room({"S": ["A", "C1", "C2"]}, {"S": 3}, {"C1": 2, "C2": 5})
    assert auxiliary_candidates(room, "A") == ["C2", "C1"]


def test_aux_candidates_grandparent_before_parent_sibling():
    room = build_room({"S": ["G"], "G": ["P", "U"], "P": ["X"]}, {})
    assert auxiliary_candidates(room, "X") == ["G", "U"]


def test_aux_candidates_fallback_to_source():
    room = build_room({"S": ["A"], "A": ["B"]}, {})
    assert auxiliary_candidates(room, "B") == ["S"]


def test_aux_candidates_source_and_unknown():
    room = build_room({"S": ["A"]}, {})
    with pytest.raises(SourceHasNoAuxError):
        auxiliary_candidates(room, "S")
    with pytest.raises(UnknownPeerError):
        auxiliary_candidates(room, "Z")


def _orphan_x():
    room = build_room({"S": ["G"], "G": ["P", "U"], "P": ["X"]}, {"S": 2, "G": 3, "P": 2, "U": 2})
    room.aux_table["X"] = ["G", "U"]
    room.peers["P"].children.remove("X")
    room.peers["X"].parent = None
    return room


def test_activate_aux_picks_first_live():
    room = _orphan_x()
    assert activate_auxiliary(room, "X") == "G"
    assert room.active_aux == {"X": "G"}


def test_activate_aux_no_live_candidate():
    room = _orphan_x()
    room.aux_table["X"] = ["G"]
    room.peers["S"].children = []
    room.peers["G"].parent = None
    room.peers["G"].children = []
    for p in ("P", "U"):
        room.peers[p].parent = None
    room.peers["G"].state = PeerState.FAILED
    with pytest.raises(NoLiveCandidateError):
        activate_auxiliary(room, "X")


def test_aux_released_when_reparented():
    room = build_room({"S": ["A", "B"], "A": ["C", "D"]}, {"S": 2, "A": 2, "B": 3}, {"C": 5, "D": 2})
    pending = begin_departure(room, "A", failed=True)
    assert set(room.active_aux) == {"C", "D"}
    assert validate_room(room) == []
    complete_departure(room, pending)
    assert room.active_aux == {}
    assert validate_room(room) == []


def test_failure_with_two_children_holds_aux_until_reparent():
    room = build_room({"S": ["A", "B"], "A": ["C", "D"]}, {"S": 2, "A": 2, "B": 3})
    pending = begin_departure(room, "A", failed=True)
    assert all(room.peers[o].parent is None and o in room.active_aux for o in ("C", "D"))
    out = complete_departure(room, pending)
    assert out.aux_assignments.keys() == {"C", "D"}


# ---------------------------------------------------------------- leave / failure


def test_leaf_leave_with_non_source_parent_is_plain_removal():
    room = build_room({"S": ["A", "B"], "A": ["C"]}, {})
    before = {p: (r.parent, list(r.children)) for p, r in room.peers.items() if p != "C"}
    out = leave_peer(room, "C")
    before["A"] = ("S", [])
    assert {p: (r.parent, r.children) for p, r in room.peers.items() if p != "C"} == before
    assert out.promoted_child is None and out.refilled_source_child is None and not out.rejoined_peers


def test_failure_increments_count_and_rejoin_keeps_it():
    room = create_room("r", make_peer("S", 60, 2.5, P), 2.5)
    peer = make_peer("A", 10, 2.5, P)
    join_peer(room, peer)
    handle_failure(room, "A")
    assert room.peers["A"].num_of_failure == 1 and room.peers["A"].state is PeerState.FAILED
    join_peer(room, peer)
    handle_failure(room, "A")
    assert room.peers["A"].num_of_failure == 2


def test_source_cannot_leave():
    room = build_room({"S": ["A"]}, {})
    with pytest.raises(SourceCannotLeaveError):
        leave_peer(room, "S")


def test_unknown_peer_leave():
    with pytest.raises(UnknownPeerError):
        leave_peer(build_room({"S": []}, {}), "nobody")


def test_duplicate_active_join():
    room = build_room({"S": ["A"]}, {})
    with pytest.raises(DuplicatePeerError):
        join_peer(room, newcomer("A", 2))


def test_no_capacity_join():
    room = build_room({"S": ["A"]}, {"S": 1, "A": 0})
    with pytest.raises(NoCapacityError):
        join_peer(room, newcomer("B", 0))


def test_update_stats_changes_score_not_tree():
    room = create_room("r", make_peer("S", 60, 2.5, P), 2.5)
    join_peer(room, make_peer("A", 10, 2.5, P))
    links = {p: (r.parent, list(r.children)) for p, r in room.peers.items()}
    s1 = update_stats(room, "A", latency=0.2, active_duration=10)
    s2 = update_stats(room, "A", latency=0.1, active_duration=10)
    assert s2 > s1
    assert update_stats(room, "A", latency=0.1, active_duration=10) == s2
    assert {p: (r.parent, r.children) for p, r in room.peers.items()} == links


def test_update_stats_failed_peer():
    room = create_room("r", make_peer("S", 60, 2.5, P), 2.5)
    join_peer(room, make_peer("A", 10, 2.5, P))
    handle_failure(room, "A")
    with pytest.raises(UnknownPeerError):
        update_stats(room, "A", latency=0.1)


# ---------------------------------------------------------------- properties


def _joins_only(n: int, slots: int):
    params = ScoreParams(min_slots=slots, max_slots=max(slots, 4))
    room = create_room("r", PeerRecord("S", 10.0, score=1.0, slots=slots), 2.5, params)
    for i in range(n - 1):
        join_peer(room, PeerRecord(f"p{i}", 10.0, score=1.0, slots=slots))
    return room


@pytest.mark.parametrize("n", [3, 7, 15, 31, 57, 63, 127])
def test_log_height_bound_binary_slots(n):
    assert height(_joins_only(n, 2)) <= math.ceil(math.log2(n + 1))


@given(st.integers(2, 200), st.integers(2, 4))
def test_height_bound_uniform_slots(n, s):
    room = _joins_only(n, s)
    assert height(room) <= math.ceil(math.log(n * (s - 1) + 1, s) - 1e-12)


@given(st.lists(st.floats(5, 100), min_size=1, max_size=60), st.floats(5, 100))
def test_displacement_never_shrinks_source_capacity(bws, src_bw):
    room = create_room("r", make_peer("S", src_bw, 2.5, P), 2.5)
    for i, b in enumerate(bws):
        before = sum(room.peers[c].slots for c in room.peers["S"].children)
        out = join_peer(room, make_peer(f"p{i}", b, 2.5, P))
        after = sum(room.peers[c].slots for c in room.peers["S"].children)
        if out.displaced_child is not None:
            assert after > before
        assert validate_room(room) == []


@given(st.integers(0, 10_000))
def test_leave_then_rejoin_round_trip(seed):
    rng = random.Random(seed)
    room = create_room("r", make_peer("S", rng.uniform(5, 100), 2.5, P), 2.5)
    peers = [make_peer(f"p{i}", rng.uniform(5, 100), 2.5, P) for i in range(20)]
    for p in peers:
        join_peer(room, p)
    victim = rng.choice(peers)
    leave_peer(room, victim.id)
    join_peer(room, victim)
    assert room.is_active(victim.id) and validate_room(room) == []


@given(st.integers(0, 10_000))
def test_aux_candidates_exclude_self_and_dead(seed):
    rng = random.Random(seed)
    room = create_room("r", make_peer("S", 30, 2.5, P), 2.5)
    for i in range(25):
        join_peer(room, make_peer(f"p{i}", rng.uniform(5, 100), 2.5, P))
    for _ in range(5):
        handle_failure(room, rng.choice([p for p in room.active_ids() if p != "S"]))
    for p in room.active_ids():
        if p == "S":
            continue
        cands = auxiliary_candidates(room, p)
        assert cands and p not in cands
        assert all(room.is_active(c) for c in cands)


def _ops(seed: int, n: int):
    rng = random.Random(seed)
    room = create_room("r", make_peer("S", 40, 2.5, P), 2.5)
    for i in range(n):
        live = [p for p in room.active_ids() if p != "S"]
        if not live or rng.random() < 0.5:
            join_peer(room, make_peer(f"p{i}", rng.uniform(5, 100), 2.5, P))
        elif rng.random() < 0.5:
            leave_peer(room, rng.choice(live))
        else:
            handle_failure(room, rng.choice(live))
    return room


@given(st.integers(0, 10_000))
def test_determinism(seed):
    assert _ops(seed, 120) == _ops(seed, 120)


def test_tree_depths_cover_all_active_after_churn():
    room = _ops(7, 400)
    assert set(tree_depths(room)) == set(room.active_ids())


def test_departure_never_overfills_when_aux_capacity_runs_out():
    # S has one slot left after P goes; Q can take two feeds; the fourth orphan
    # must ride on a sibling orphan's spare slot instead of crowding the source.
    room = build_room(
        {"S": ["P", "Q"], "P": ["a", "b", "c", "d"]},
        {"S": 2, "P": 4, "Q": 2, "a": 2, "b": 3, "c": 2, "d": 3},
        {"a": 9, "b": 8, "c": 7, "d": 6},
    )
    seen = []
    pending = begin_departure(room, "P")
    seen.extend(validate_room(room))
    assert pending.escalated == []
    assert pending.aux_assignments == {"a": "S", "b": "Q", "c": "Q", "d": "a"}
    out = complete_departure(room, pending)
    seen.extend(validate_room(room))
    assert seen == []
    assert out.promoted_child == "a" and len(room.peers["S"].children) == 2
    assert room.active_aux == {}
