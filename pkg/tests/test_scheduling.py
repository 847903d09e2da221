"""Task assignment, expansion, motion sweeps, TPG, and simulation."""

import json
import math
import random

import pytest

from brickplan import (
    AssemblySequence,
    AssemblyStep,
    Brick,
    BrickStructure,
    BrickType,
    ExecConfig,
    MaskConfig,
    Orientation,
    SkillKind,
    SolverConfig,
    StationLayout,
    SupportSpec,
    TaskKind,
    Unassignable,
    WorldConfig,
    assign_tasks,
    build_tpg,
    expand_tasks,
    parse_brick_line,
    plan_motions,
    plan_sequence,
    simulate,
    simulate_sequential,
)
from brickplan.scheduling import (
    NOMINAL_DURATIONS,
    _Box,
    _box_cells_at,
    load_tpg,
    save_tpg,
    sweep_cells,
)
from helpers import grow_buildable_design

WORLD = WorldConfig((10, 10, 12))
LAYOUT = StationLayout.default(WORLD)
MASK = MaskConfig()
SOLVER = SolverConfig()


def seq_of(*lines, skill=SkillKind.PLACE_DOWN):
    return AssemblySequence(tuple(
        AssemblyStep(parse_brick_line(ln), skill) for ln in lines))


def pipeline(design, seed=0):
    seq = plan_sequence(design, MASK, SOLVER, seed=seed)
    assignments = assign_tasks(seq, LAYOUT)
    nodes = expand_tasks(assignments, LAYOUT)
    nodes = plan_motions(nodes, LAYOUT, design, MASK.tool)
    return seq, build_tpg(nodes, design)


# -- layout -------------------------------------------------------------------


def test_layout_reach_regions_cover_plate():
    for cx in range(WORLD.dims[0]):
        assert LAYOUT.reaches_column(0, cx) or LAYOUT.reaches_column(1, cx)


def test_layout_depots_outside_plate():
    with pytest.raises(ValueError):
        StationLayout(plate_dims=(10, 10), depots=((5.0, 5.0, 0.0),
                                                   (14.0, 5.0, 0.0)))


# -- assignment ----------------------------------------------------------------


def test_two_symmetric_tasks_split_one_per_robot():
    """Exhaustive check over all 4 assignments: only one-per-robot attains
    zero imbalance, so the solver must return a split."""
    q = seq_of("2x2 (1,4,0)", "2x2 (7,4,0)")
    out = assign_tasks(q, LAYOUT)
    robots = [ta.robots[0] for ta in out]
    assert sorted(robots) == [0, 1]
    # brute force confirms the split is the unique imbalance-0 family
    cost_pd = sum(NOMINAL_DURATIONS[s] for s in (
        SkillKind.MOVE, SkillKind.PICK, SkillKind.DETECT_PICK,
        SkillKind.MOVE, SkillKind.PLACE_DOWN, SkillKind.DETECT_PLACE))
    best = min(max(cost_pd * (a == r) + cost_pd * (b == r) for r in (0, 1))
               for a in (0, 1) for b in (0, 1))
    got = max(sum(cost_pd for ta in out if ta.robots[0] == r) for r in (0, 1))
    assert got == pytest.approx(best)


def test_far_side_task_assigned_by_reachability():
    q = seq_of("2x2 (0,0,0)", "2x2 (0,3,0)", "2x2 (0,6,0)")  # all robot-0 side
    out = assign_tasks(q, LAYOUT)
    assert all(ta.robots[0] == 0 for ta in out)


def test_support_goes_to_other_robot():
    steps = (
        AssemblyStep(parse_brick_line("1x1 (4,4,0)"), SkillKind.PLACE_DOWN),
        AssemblyStep(parse_brick_line("4x1 (3,4,1)"), SkillKind.PLACE_DOWN,
                     SupportSpec(SkillKind.SUPPORT_BOTTOM, (6, 4, 0))),
    )
    out = assign_tasks(AssemblySequence(steps), LAYOUT)
    support = [ta for ta in out if ta.task.kind is TaskKind.SUPPORT]
    place = [ta for ta in out if ta.task.step == 1 and
             ta.task.kind is not TaskKind.SUPPORT]
    assert len(support) == 1
    assert support[0].robots[0] != place[0].robots[0]


def test_unreachable_task_raises():
    layout = StationLayout(plate_dims=(10, 10), overlap=-3,
                           depots=((-4.0, 5.0, 0.0), (14.0, 5.0, 0.0)),
                           homes=((-2.0, 5.0, 0.0), (12.0, 5.0, 0.0)),
                           rendezvous=(5.0, -3.0, 1.0))
    q = seq_of("2x2 (4,4,0)")  # straddles the midline, neither side reaches
    with pytest.raises(Unassignable):
        assign_tasks(q, layout)


def test_place_up_becomes_two_robot_task():
    steps = (
        AssemblyStep(parse_brick_line("2x2 (4,4,0)"), SkillKind.PLACE_DOWN),
        AssemblyStep(parse_brick_line("1x1 (4,4,5)"), SkillKind.PLACE_UP),
    )
    out = assign_tasks(AssemblySequence(steps), LAYOUT)
    up = [ta for ta in out if ta.task.kind is TaskKind.PICK_HANDOVER_PLACE_UP]
    assert len(up) == 1
    assert len(up[0].robots) == 2
    assert up[0].robots[0] != up[0].robots[1]


# -- expansion -------------------------------------------------------------------


def test_place_down_expands_to_six_nodes():
    q = seq_of("2x2 (4,4,0)")
    nodes = expand_tasks(assign_tasks(q, LAYOUT), LAYOUT)
    assert [n.skill for n in nodes] == [
        SkillKind.MOVE, SkillKind.PICK, SkillKind.DETECT_PICK,
        SkillKind.MOVE, SkillKind.PLACE_DOWN, SkillKind.DETECT_PLACE]
    assert len({n.robot for n in nodes}) == 1


def test_support_task_expands_around_protected_step():
    steps = (
        AssemblyStep(parse_brick_line("1x1 (4,4,0)"), SkillKind.PLACE_DOWN),
        AssemblyStep(parse_brick_line("4x1 (3,4,1)"), SkillKind.PLACE_DOWN,
                     SupportSpec(SkillKind.SUPPORT_BOTTOM, (6, 4, 0))),
    )
    nodes = expand_tasks(assign_tasks(AssemblySequence(steps), LAYOUT), LAYOUT)
    kinds = [n.skill for n in nodes]
    sup_i = kinds.index(SkillKind.SUPPORT_BOTTOM)
    place_i = [i for i, n in enumerate(nodes)
               if n.skill is SkillKind.PLACE_DOWN and n.step == 1][0]
    retreat_i = [i for i, n in enumerate(nodes)
                 if "retreat_after" in n.meta][0]
    assert sup_i < place_i < retreat_i
    # sum of template lengths: 6 + (2 support head) + 6 + (1 retreat)
    assert len(nodes) == 15


def test_handover_expansion_node_count_and_edges():
    steps = (
        AssemblyStep(parse_brick_line("2x2 (4,4,0)"), SkillKind.PLACE_DOWN),
        AssemblyStep(parse_brick_line("1x1 (4,4,5)"), SkillKind.PLACE_UP),
    )
    q = AssemblySequence(steps)
    nodes = expand_tasks(assign_tasks(q, LAYOUT), LAYOUT)
    assert len(nodes) == 6 + 10
    up_nodes = [n for n in nodes if n.step == 1]
    assert sum(1 for n in up_nodes if n.skill is SkillKind.HANDOVER) == 1
    assert sum(1 for n in up_nodes if n.skill is SkillKind.PLACE_UP) == 1
    assert len({n.robot for n in up_nodes}) == 2

    design = BrickStructure.from_bricks([st.brick for st in steps], WORLD)
    nodes = plan_motions(nodes, LAYOUT, design, MASK.tool)
    g = build_tpg(nodes, design)
    reasons = {e.reason for e in g.edges}
    assert "handover_ready" in reasons or "volume" in reasons
    # ready edge: receiver at the rendezvous strictly before the handover
    ready = [e for e in g.edges if e.reason == "handover_ready"]
    if ready:
        assert g.nodes[ready[0].src].robot != g.nodes[ready[0].dst].robot
    rep = simulate(g, ExecConfig(seed=3))
    assert rep.certificate_ok()


def test_node_count_equals_template_sum():
    for seed in (1, 2, 3):
        d = grow_buildable_design(seed + 50, 8, WORLD)
        seq = plan_sequence(d, MASK, SOLVER, seed=seed)
        nodes = expand_tasks(assign_tasks(seq, LAYOUT), LAYOUT)
        expected = 0
        for st in seq.steps:
            expected += 10 if st.skill is SkillKind.PLACE_UP else 6
            expected += 3 if st.support is not None else 0
        assert len(nodes) == expected


# -- sweep geometry ----------------------------------------------------------------


def _dense_sweep(profile, waypoints, factor=10):
    """Independent fine-interpolation sweep: sample poses densely along
    each leg and union the exact box cover at each sample."""
    cells = set()
    for p0, p1 in zip(waypoints, waypoints[1:]):
        length = max(abs(p1[a] - p0[a]) for a in range(3))
        steps = max(2, int(math.ceil(length * 2 * factor)) + 1)
        for i in range(steps):
            t = i / (steps - 1)
            pose = tuple(p0[a] + t * (p1[a] - p0[a]) for a in range(3))
            for box in profile:
                cells.update(_box_cells_at(box, pose))
    if len(waypoints) == 1:
        for box in profile:
            cells.update(_box_cells_at(box, waypoints[0]))
    return cells


def test_swept_volume_matches_dense_oracle_100_random_motions():
    rng = random.Random(424242)
    profiles = [
        (_Box(0.0, 0.0, 0.5, 0.5, 0.0, 4.0),),
        (_Box(0.0, 0.0, 1.0, 1.0, 0.0, 1.0), _Box(0.0, 0.0, 1.0, 2.0, 1.0, 4.0)),
        (_Box(0.0, 0.0, 0.5, 1.5, -4.0, 4.0),),
    ]
    for _ in range(100):
        profile = profiles[rng.randrange(len(profiles))]
        # axis-aligned waypoint chain on the half-integer grid
        p = [rng.randint(-4, 14), rng.randint(-4, 14), rng.randint(0, 8)]
        pts = [tuple(map(float, p))]
        for _ in range(rng.randint(1, 4)):
            axis = rng.randrange(3)
            q = list(pts[-1])
            q[axis] += rng.choice((-1, 1)) * rng.randint(1, 6) * 0.5
            pts.append(tuple(q))
        exact = sweep_cells(profile, pts)
        dense = _dense_sweep(profile, pts)
        assert exact == dense


def test_sweep_rejects_diagonal_legs():
    with pytest.raises(ValueError):
        sweep_cells((_Box(0, 0, 0.5, 0.5, 0, 1),),
                    [(0.0, 0.0, 0.0), (1.0, 1.0, 0.0)])


def test_static_box_open_interval_semantics():
    # box spanning exactly [1,3)x[0,2) covers cells 1..2 x 0..1 only
    cells = set(_box_cells_at(_Box(0.0, 0.0, 1.0, 1.0, 0.0, 1.0),
                              (2.0, 1.0, 0.0)))
    assert cells == {(1, 0, 0), (1, 1, 0), (2, 0, 0), (2, 1, 0)}


# -- motion planning ----------------------------------------------------------------


def test_exposed_goal_three_leg_path():
    d = BrickStructure.from_bricks([parse_brick_line("2x2 (4,4,0)")], WORLD)
    q = seq_of("2x2 (4,4,0)")
    nodes = expand_tasks(assign_tasks(q, LAYOUT), LAYOUT)
    nodes = plan_motions(nodes, LAYOUT, d, MASK.tool)
    move_to_goal = [n for n in nodes if n.skill is SkillKind.MOVE][1]
    assert len(move_to_goal.waypoints) >= 3
    zs = [w[2] for w in move_to_goal.waypoints]
    assert max(zs) == d.top_level() + 2
    assert not any(c[2] < 0 for c in move_to_goal.swept)


def test_motion_blocked_under_overhang():
    """Goal buried under a wide overhang: both overhead descent and the
    side approaches intersect the structure."""
    from brickplan import MotionBlocked

    bricks = ["2x2 (4,4,0)", "4x2 (1,3,2)", "4x2 (5,3,2)",
              "4x2 (1,5,2)", "4x2 (5,5,2)"]
    design = BrickStructure.from_bricks(
        [parse_brick_line(b) for b in bricks], WORLD)
    q = AssemblySequence(tuple(
        AssemblyStep(b, SkillKind.PLACE_DOWN) for b in design.bricks))
    # force all roof bricks placed before the buried goal
    reordered = AssemblySequence(q.steps[1:] + q.steps[:1])
    nodes = expand_tasks(assign_tasks(reordered, LAYOUT), LAYOUT)
    with pytest.raises(MotionBlocked) as ei:
        plan_motions(nodes, LAYOUT, design, MASK.tool)
    assert ei.value.blocking


# -- TPG ---------------------------------------------------------------------------


def test_tpg_invariants_on_random_designs():
    for seed in (61, 62):
        d = grow_buildable_design(seed, 10, WORLD)
        _, g = pipeline(d, seed=seed)
        order = g.topological_order()  # raises on cycle
        assert len(order) == len(g.nodes)
        by_robot = {}
        for e in g.edges:
            a, b = g.nodes[e.src], g.nodes[e.dst]
            assert e.src < e.dst  # forward in sequential order
            if e.kind == "type1":
                assert a.robot == b.robot
                by_robot.setdefault(a.robot, []).append((e.src, e.dst))
            else:
                assert a.robot != b.robot
        # type1 edges chain each robot's nodes totally
        for robot, pairs in by_robot.items():
            ids = [n.id for n in g.nodes if n.robot == robot]
            assert sorted(pairs) == list(zip(ids, ids[1:]))


def test_disjoint_tasks_no_type2_edges():
    q = seq_of("2x2 (0,0,0)", "2x2 (8,8,0)")
    nodes = expand_tasks(assign_tasks(q, LAYOUT), LAYOUT)
    d = BrickStructure.from_bricks([st.brick for st in q.steps], WORLD)
    nodes = plan_motions(nodes, LAYOUT, d, MASK.tool)
    g = build_tpg(nodes, d)
    type2 = [e for e in g.edges if e.kind == "type2"]
    assert all(e.reason == "place_order" for e in type2)


def test_shared_center_produces_ordering_edge():
    q = seq_of("2x2 (4,4,0)", "2x2 (4,4,1)")
    nodes = expand_tasks(assign_tasks(q, LAYOUT), LAYOUT)
    d = BrickStructure.from_bricks([st.brick for st in q.steps], WORLD)
    nodes = plan_motions(nodes, LAYOUT, d, MASK.tool)
    g = build_tpg(nodes, d)
    cross = [e for e in g.edges if e.kind == "type2"]
    assert cross  # both robots visit the same column


def test_pruning_preserves_reachability():
    """Transitive closure before pruning equals closure after pruning."""
    from brickplan.scheduling import _prune_transitive, Edge

    d = grow_buildable_design(63, 10, WORLD)
    seq = plan_sequence(d, MASK, SOLVER, seed=63)
    nodes = expand_tasks(assign_tasks(seq, LAYOUT), LAYOUT)
    nodes = plan_motions(nodes, LAYOUT, d, MASK.tool)

    chain = []
    last = {}
    for n in nodes:
        if n.robot in last:
            chain.append(Edge(last[n.robot], n.id, "type1", "chain"))
        last[n.robot] = n.id
    cand = []
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            if a.robot != b.robot and (a.swept & b.swept):
                cand.append(Edge(a.id, b.id, "type2", "volume"))
    kept = _prune_transitive(nodes, chain, cand)

    def closure(edges):
        succ = {n.id: set() for n in nodes}
        for e in edges:
            succ[e.src].add(e.dst)
        out = {}
        for i in sorted(succ, reverse=True):
            reach = set(succ[i])
            for j in succ[i]:
                reach |= out[j]
            out[i] = reach
        return out

    assert closure(chain + cand) == closure(chain + kept)
    assert len(kept) <= len(cand)


def test_tpg_json_round_trip(tmp_path):
    d = grow_buildable_design(64, 8, WORLD)
    _, g = pipeline(d, seed=64)
    p = tmp_path / "g.json"
    save_tpg(g, p)
    g2 = load_tpg(p)
    assert [n.id for n in g2.nodes] == [n.id for n in g.nodes]
    assert g2.to_dict() == g.to_dict()
    dot = g.to_dot()
    assert dot.startswith("digraph") and f"n{g.nodes[0].id}" in dot


# -- simulation ---------------------------------------------------------------------


def test_empty_graph_makespan_zero():
    from brickplan import TemporalPlanGraph

    g = TemporalPlanGraph([], [], ())
    rep = simulate(g, ExecConfig())
    assert rep.makespan == 0.0


def test_async_leq_sequential_and_certificate():
    for seed in (71, 72, 73):
        d = grow_buildable_design(seed, 10, WORLD)
        _, g = pipeline(d, seed=seed)
        cfg = ExecConfig(seed=seed)
        rep = simulate(g, cfg)
        seqrep = simulate_sequential(g, cfg)
        assert rep.makespan <= seqrep.makespan + 1e-9
        assert rep.certificate_ok()
        assert seqrep.makespan == pytest.approx(
            sum(ExecConfig(seed=seed).node_duration(n) for n in g.nodes))


def test_simulation_deterministic_byte_exact():
    d = grow_buildable_design(74, 9, WORLD)
    _, g = pipeline(d, seed=74)
    r1 = simulate(g, ExecConfig(seed=5))
    r2 = simulate(g, ExecConfig(seed=5))
    assert json.dumps(r1.to_dict(), sort_keys=True) == \
        json.dumps(r2.to_dict(), sort_keys=True)


def test_failures_inflate_makespan_same_order():
    d = grow_buildable_design(75, 9, WORLD)
    _, g = pipeline(d, seed=75)
    clean = simulate(g, ExecConfig(seed=11))
    faulty = simulate(g, ExecConfig(
        seed=11, failure_probs={SkillKind.PICK: 0.5,
                                SkillKind.PLACE_DOWN: 0.5}))
    assert faulty.failures
    assert faulty.makespan > clean.makespan
    order = lambda rep: [i for i, _ in sorted(
        rep.timings.items(), key=lambda kv: (kv[1][0], kv[0]))]
    assert order(clean) == order(faulty)
    assert faulty.certificate_ok()  # execution completes despite failures


def test_failure_free_completes_all_manipulations():
    d = grow_buildable_design(76, 8, WORLD)
    _, g = pipeline(d, seed=76)
    rep = simulate(g, ExecConfig(seed=1))
    from brickplan.sequencing import MANIPULATION_SKILLS

    expected = sum(1 for n in g.nodes if n.skill in MANIPULATION_SKILLS)
    assert rep.manipulation_completed == expected
    assert not rep.failures


def test_duration_ranges_drawn_per_node_substream():
    d = grow_buildable_design(77, 6, WORLD)
    _, g = pipeline(d, seed=77)
    cfg = ExecConfig(seed=9, duration_ranges={SkillKind.MOVE: (2.0, 4.0)})
    r1 = simulate(g, cfg)
    r2 = simulate(g, cfg)
    assert r1.to_dict()["timings"] == r2.to_dict()["timings"]
    moves = [n for n in g.nodes if n.skill is SkillKind.MOVE]
    durs = {round(r1.timings[n.id][1] - r1.timings[n.id][0], 6) for n in moves}
    assert len(durs) > 1  # nodes draw independently
    assert all(2.0 <= x <= 4.0 for x in durs)


def test_exec_config_validation():
    with pytest.raises(ValueError):
        ExecConfig(failure_probs={SkillKind.PICK: 1.5})
    with pytest.raises(ValueError):
        ExecConfig(failure_probs={SkillKind.MOVE: 0.1})
    with pytest.raises(ValueError):
        ExecConfig(durations={SkillKind.MOVE: 0.0})
