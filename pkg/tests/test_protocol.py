from collections import Counter

import pytest

from anoncount import messages as M
from anoncount.engine import RoundTopology, make_scheduler, path, run_processes, scheduler_alternating, star
from anoncount.history_tree import ROOT_ID, HistoryTree
from anoncount.protocol import (
    LEADER_LABEL,
    Inconsistent,
    LevelGraph,
    Phase,
    Process,
    TempForest,
    TUnionProcess,
    make_processes,
)


def drive(gen, inboxes=()):
    """Run a sub-generator; returns (messages sent, return value)."""
    sent = []
    boxes = iter(inboxes)
    try:
        msg = next(gen)
        while True:
            sent.append(msg)
            msg = gen.send(next(boxes, Counter()))
    except StopIteration as stop:
        return sent, stop.value


def run(n, sched, mode="basic", inputs=None, T=1, budget=10**6):
    procs = make_processes(n, mode, inputs, T)
    if mode == "simultaneous":
        done = lambda ps: all(p.terminated for p in ps)  # noqa: E731
    else:
        done = lambda ps: ps[0].output is not None  # noqa: E731
    metrics, _ = run_processes(procs, sched, budget, done)
    return procs, metrics


def level_state(my_id, roots, next_id, obs):
    """A non-leader at level 1 whose VHT level 0 holds ``roots``."""
    p = Process(False)
    p.vht = HistoryTree()
    for r in roots:
        p.vht.add_node(r, ROOT_ID, "x")
    p.temp = TempForest(roots)
    p.level_graph = LevelGraph(roots)
    p.next_fresh_id = next_id
    p.my_id = my_id
    p.obs = list(obs)
    return p


# --- initial state -----------------------------------------------------------


def test_init_state():
    lead, other = Process(True), Process(False)
    assert lead.my_id == 0 and other.my_id == 1
    assert lead.diam == other.diam == 1
    assert lead.current_level == 1 and lead.next_fresh_id == 2
    assert sorted(lead.vht.level(0)) == [0, 1]
    assert lead.vht.nodes[0].label == LEADER_LABEL
    assert lead.outgoing() == M.begin(0)
    assert other.outgoing() == M.begin(1)


def test_generalized_init_state():
    p = Process(False, mode="generalized", input_value=7)
    assert p.vht.level(0) == [0] and p.my_id == ROOT_ID and p.current_level == 0
    assert p.outgoing() == M.input_value(7)
    with pytest.raises(ValueError):
        Process(False, mode="generalized")


# --- begin round ---------------------------------------------------------------


def test_alone_leader_observes_itself_twice():
    p = Process(True)
    _, ret = drive(p.set_up_new_level(Counter()))
    assert ret == "OK" and p.obs == [(0, 2)]


def test_same_id_begins_replaced_by_cycle_pair():
    p = level_state(5, [2, 5], 6, [])
    _, ret = drive(p.set_up_new_level(Counter({M.begin(2): 1, M.begin(5): 3})))
    assert ret == "OK"
    assert p.obs == [(2, 1), (5, 2)]
    assert set(p.level_graph.adj) == {2, 5} and not p.level_graph.edges()


def test_error_in_begin_round():
    p = Process(False)
    gen = p.set_up_new_level(Counter({M.error(1): 1}))
    assert next(gen) == M.error(1)
    assert p.phase == Phase.ERROR and p.is_error


# --- messages ------------------------------------------------------------------


def test_make_vht_message():
    p = level_state(5, [2, 5], 6, [(2, 1), (5, 2)])
    assert p.make_vht_message() == M.edge(5, 2, 1)
    q = level_state(9, [9], 10, [])
    q.vht = HistoryTree()
    q.vht.add_node(0, ROOT_ID, "x")
    assert q.make_vht_message() == M.done(9)
    q.vht.add_node(9, 0)
    assert q.make_vht_message() == M.END


def test_broadcast_step_keeps_top():
    p = Process(False)
    sent, top = drive(p._broadcast_step(M.done(4)), [Counter({M.edge(1, 2, 1): 1})])
    assert sent == [M.done(4)] and top == M.edge(1, 2, 1)
    _, top = drive(p._broadcast_step(M.done(4)), [Counter()])
    assert top == M.done(4)
    _, top = drive(p._broadcast_step(M.error(3)), [Counter({M.reset(3, 0, 2): 1})])
    assert top == M.reset(3, 0, 2)


# --- temporary VHT, level graph, VHT ------------------------------------------------


def test_update_temp_vht_trace():
    p = level_state(5, [5, 2, 3], 6, [(2, 1), (5, 2)])
    p.update_temp_vht(5, 2, 1)
    assert p.temp.parent[6] == 5 and p.temp.red[6] == {2: 1}
    assert p.level_graph.edges() == [(2, 5)]
    assert p.my_id == 6 and p.obs == [(5, 2)]
    p.update_temp_vht(6, 3, 1)
    assert p.temp.parent[7] == 6 and p.temp.red[7] == {3: 1}
    assert p.level_graph.edges() == [(2, 5), (3, 5)]
    # same-root triplet: a red edge but no level-graph edge
    p.update_temp_vht(6, 5, 1)
    assert p.temp.parent[8] == 6 and p.temp.red[8] == {5: 1}
    assert p.level_graph.edges() == [(2, 5), (3, 5)]
    assert p.next_fresh_id == 9


def test_prevent_cycles_drops_redundant_triplets():
    # a process with ID 2 that also saw class 3: once 5-2 and 5-3 are in the
    # level graph, its (3, m) observation would close a cycle
    p = level_state(2, [5, 2, 3], 6, [(2, 2), (3, 4)])
    p.update_temp_vht(5, 2, 1)
    assert p.obs == [(2, 2), (3, 4)]
    p.update_temp_vht(5, 3, 1)
    assert p.obs == [(2, 2)]


def test_prevent_cycles_keeps_own_cycle_pair():
    p = level_state(6, [5, 2], 7, [(5, 2)])
    p.temp.parent[6] = 5
    p.temp.red[6] = {2: 1}
    p.level_graph.add_edge(5, 2)
    p.prevent_cycles()
    assert p.obs == [(5, 2)]


def test_prevent_cycles_with_empty_graph_is_noop():
    p = level_state(5, [5, 2, 3], 6, [(2, 1), (3, 1), (5, 2)])
    p.prevent_cycles()
    assert p.obs == [(2, 1), (3, 1), (5, 2)]


def test_update_vht_collects_path_red_edges():
    p = level_state(5, [5, 2, 3], 6, [])
    p.update_temp_vht(5, 2, 1)
    p.update_temp_vht(6, 3, 1)
    p.update_vht(7)
    node = p.vht.nodes[7]
    assert node.parent == 5 and node.red == {3: 1, 2: 1}
    with pytest.raises(Inconsistent):
        p.update_vht(7)
    with pytest.raises(Inconsistent):
        p.update_vht(2)


def test_ack_mismatch_enters_error_phase():
    p = Process(False)
    assert p.outgoing() == M.begin(1)
    p.deliver(Counter({M.begin(0): 1}))
    assert p.obs == [(0, 1), (1, 2)]
    assert p.outgoing() == M.edge(1, 0, 1)
    p.deliver(Counter())  # VHT phase over: VHTMessage = Edge(1, 0, 1)
    assert p.phase == Phase.ACK_BROADCAST and p.outgoing() == M.NULL
    p.deliver(Counter({M.edge(0, 1, 1): 1}))
    assert p.phase == Phase.ERROR and p.outgoing() == M.error(1)


# --- resets ----------------------------------------------------------------------


def test_reset_message_doubles_estimate():
    p = Process(True)
    p.diam = 4
    p.current_round = 30
    assert p.make_reset_message() == M.reset(p.current_level, 30, 8)


def test_apply_reset_rewinds_to_ancestor():
    p = Process(False)
    vht = HistoryTree()
    vht.add_node(0, ROOT_ID, LEADER_LABEL)
    vht.add_node(1, ROOT_ID, "non-leader")
    for child, parent in [(2, 1), (3, 2), (4, 3)]:
        vht.add_node(child, parent)
    p.vht = vht
    p.current_level = 4
    p.temp = TempForest([4])
    p.temp.parent[5] = 4
    p.my_id = 5
    p.apply_reset(M.reset(3, 10, 2))
    assert p.my_id == 3
    assert p.vht.depth == 2
    assert p.current_level == 3 and p.diam == 2
    assert p.next_fresh_id == 4
    assert p.resets == 1


def test_reset_phases_end_together():
    procs, _ = run(6, make_scheduler("static-path", 6))
    leader_resets = {(ev[1], ev[2]) for ev in procs[0].events if ev[0] == "reset"}
    assert leader_resets
    for p in procs:
        for ev in p.events:
            if ev[0] == "reset":
                assert (ev[1], ev[2]) in leader_resets


# --- end to end --------------------------------------------------------------------


def test_two_processes_single_link():
    procs, _ = run(2, make_scheduler("static-path", 2))
    assert procs[0].output == 2


@pytest.mark.parametrize("n", [1, 3, 5])
def test_simultaneous_termination(n):
    procs, _ = run(n, make_scheduler("static-star", n), mode="simultaneous")
    assert [p.output for p in procs] == [n] * n
    assert len({p.output_round for p in procs}) == 1


def test_generalized_inputs():
    procs, _ = run(4, make_scheduler("random-connected", 4, 2), "generalized", [None, 10, 10, 20])
    leader = procs[0]
    assert len(leader.vht.level(0)) == 3
    assert leader.output == {10: 2, 20: 1}


def test_generalized_reset_to_input_stage_during_begin_round():
    # a slow process errs at level 0 after the others have sent Begin for level 1
    procs, _ = run(5, make_scheduler("random-connected", 5, 4), "generalized", [None, 3, 1, 0, 0], budget=5000)
    assert 0 in {ev[1] for ev in procs[0].events if ev[0] == "reset" and ev[2] > 20}
    assert procs[0].output == {0: 2, 1: 1, 3: 1}


def test_generalized_single_input_matches_basic_shape():
    procs, _ = run(4, make_scheduler("static-star", 4), "generalized", [None, 3, 3, 3])
    assert len(procs[0].vht.level(0)) == 2
    assert procs[0].output == {3: 3}


def test_t_union_one_is_plain():
    a, ma = run(4, make_scheduler("random-connected", 4, 5))
    w = [TUnionProcess(Process(i == 0), 1) for i in range(4)]
    mb, _ = run_processes(w, make_scheduler("random-connected", 4, 5), 10**6, lambda ps: ps[0].output is not None)
    assert ma.rounds == mb.rounds and w[0].output == a[0].output == 4


def test_t_union_half_stars():
    halves = [RoundTopology.from_pairs(3, [(0, 1)]), RoundTopology.from_pairs(3, [(0, 2)])]
    procs, metrics = run(3, scheduler_alternating(halves), T=2)
    assert procs[0].output == 3
    # virtual round r consumes real rounds 2r-1 and 2r
    assert procs[0].inner.current_round == procs[0].real_round // 2


def test_counting_on_star_and_path():
    for g in (star(5), path(5)):
        procs, _ = run(5, iter(lambda g=g: g, None))
        assert procs[0].output == 5
