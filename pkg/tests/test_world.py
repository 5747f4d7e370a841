import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import open_room
from oracles import bfs_component, grid_geodesic
from seqnav.geometry import Action, ContractViolation, Pose, euclidean
from seqnav.world import (
    MAX_RANGE, AgentState, GenerationError, RollbackUnavailable, SceneSpec, UnreachableError, dumps_scene,
    generate_reference_episode, generate_scene, grid_path, loads_scene, observe, reachable_cells,
    shortest_path_distance, step, traverse_poses, visible_landmarks,
)

# --------------------------------------------------------------- stepping


def test_forward_into_open_space(room):
    s, _ = step(room, AgentState(Pose(1.0, 1.0, 0)), Action.FORWARD)
    assert s.pose == Pose(1.25, 1.0, 0) and not s.collision_flag


def test_forward_into_wall(room):
    start = Pose(0.25, 1.0, 180)  # cell (4, 1); column 0 is wall
    s, _ = step(room, AgentState(start), Action.FORWARD)
    assert s.pose == start and s.collision_flag


def test_rollback_restores_pose_bit_exact(room):
    start = Pose(1.0, 1.0, 30)
    s, _ = step(room, AgentState(start), Action.FORWARD)
    s, _ = step(room, s, Action.TURN_BACK_LAST_STEP)
    assert s.pose == start and s.pose_stack == []


def test_rollback_with_empty_stack(room):
    with pytest.raises(RollbackUnavailable):
        step(room, AgentState(Pose(1, 1, 0)), Action.TURN_BACK_LAST_STEP)


def test_stop_leaves_stack_alone(room):
    s, _ = step(room, AgentState(Pose(1, 1, 0)), Action.FORWARD)
    s2, _ = step(room, s, Action.STOP)
    assert s2.pose == s.pose and s2.pose_stack == s.pose_stack


# ---------------------------------------------------------------- sensing


def test_landmark_straight_ahead():
    scene = open_room(landmarks=[("sofa", (2.0, 1.0))])
    vis = visible_landmarks(scene, Pose(1.0, 1.0, 0))
    assert [v[0] for v in vis] == ["sofa"]
    assert abs(vis[0][2] - 1.0) <= scene.resolution


def test_landmark_behind_wall_is_hidden():
    walls = [(r, 6) for r in range(1, 20)]
    scene = open_room(landmarks=[("sofa", (2.0, 1.0))], walls=walls)
    assert visible_landmarks(scene, Pose(1.0, 1.0, 0)) == ()


def test_landmark_outside_fov_is_hidden():
    scene = open_room(landmarks=[("sofa", (1.0, 2.0))])
    assert visible_landmarks(scene, Pose(1.0, 1.0, 0)) == ()
    assert visible_landmarks(scene, Pose(1.0, 1.0, 90))[0][0] == "sofa"


def test_standing_on_landmark_sees_it():
    scene = open_room(landmarks=[("sofa", (1.0, 1.0))])
    assert visible_landmarks(scene, Pose(1.0, 1.0, 270))[0][0] == "sofa"


def test_empty_space_rays_report_max_range():
    occ = np.zeros((200, 200), np.uint8)
    from seqnav.world import Scene
    scene = Scene(occ, np.full_like(occ, 2), [])
    obs = observe(scene, Pose(25.0, 25.0, 0))
    assert len(obs.depth_rays) == 46
    assert all(d == MAX_RANGE and cls is None for _, d, cls in obs.depth_rays)


def test_observe_is_deterministic(small_scene):
    lm = small_scene.landmarks[0]
    p = Pose(lm.position[0], lm.position[1], 45)
    assert observe(small_scene, p) == observe(small_scene, p)


# -------------------------------------------------------------- geodesics


def test_geodesic_same_point(room):
    assert shortest_path_distance(room, (1, 1), (1, 1)) == 0.0


def test_geodesic_straight_corridor():
    walls = [(r, c) for r in range(1, 20) for c in range(1, 20) if r != 5]
    scene = open_room(walls=walls)
    assert shortest_path_distance(scene, (1.0, 1.25), (3.5, 1.25)) == 2.5


def test_geodesic_around_wall_matches_dijkstra():
    walls = [(r, 10) for r in range(1, 16)] + [(15, c) for c in range(4, 11)]
    scene = open_room(walls=walls)
    a, b = (1.0, 2.0), (4.0, 2.0)
    want = grid_geodesic(scene.occupancy, scene.cell_of(a), scene.cell_of(b), scene.resolution)
    assert shortest_path_distance(scene, a, b) == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_geodesic_on_generated_scene_matches_dijkstra(seed):
    scene = generate_scene(seed, SceneSpec(n_rooms=4, n_landmarks=4, room_min=8, room_max=10))
    a, b = scene.landmarks[0].position, scene.landmarks[-1].position
    want = grid_geodesic(scene.occupancy, scene.cell_of(a), scene.cell_of(b), scene.resolution)
    assert shortest_path_distance(scene, a, b) == pytest.approx(want, abs=1e-12)


def test_geodesic_unreachable():
    walls = [(r, 10) for r in range(1, 20)]
    scene = open_room(walls=walls)
    with pytest.raises(UnreachableError):
        shortest_path_distance(scene, (1.0, 1.0), (4.0, 1.0))


def test_geodesic_from_wall_is_contract_violation(room):
    with pytest.raises(ContractViolation):
        shortest_path_distance(room, (0.0, 0.0), (1.0, 1.0))


def test_grid_path_is_shortest_and_connected(room):
    path = grid_path(room, (2, 2), (9, 15))
    assert len(path) - 1 == 7 + 13
    assert all(abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1 for a, b in zip(path, path[1:]))


# ------------------------------------------------------------- generation


def test_generation_is_deterministic():
    assert dumps_scene(generate_scene(11)) == dumps_scene(generate_scene(11))


def test_generation_differs_by_seed():
    assert dumps_scene(generate_scene(11)) != dumps_scene(generate_scene(12))


def test_requested_room_count():
    assert len(generate_scene(5, SceneSpec(n_rooms=4)).rooms) == 4


@given(st.integers(0, 10_000), st.integers(1, 9))
def test_landmarks_mutually_reachable(seed, n_rooms):
    scene = generate_scene(seed, SceneSpec(n_rooms=n_rooms, n_landmarks=min(8, 2 * n_rooms), room_min=10, room_max=12))
    comp = bfs_component(scene.occupancy, scene.cell_of(scene.landmarks[0].position))
    assert all(scene.cell_of(lm.position) in comp for lm in scene.landmarks)
    assert comp == reachable_cells(scene, scene.cell_of(scene.landmarks[0].position))


def test_scene_semantics_classes(small_scene):
    sem, occ = small_scene.semantics, small_scene.occupancy
    assert sem.max() <= 12
    assert np.all(sem[occ == 0] >= 2)  # free cells belong to a room
    assert len({lm.label for lm in small_scene.landmarks}) == len(small_scene.landmarks)


@pytest.mark.parametrize("spec", [SceneSpec(n_rooms=0), SceneSpec(room_min=5), SceneSpec(n_landmarks=999),
                                  SceneSpec(room_min=12, room_max=10)])
def test_infeasible_spec(spec):
    with pytest.raises(GenerationError):
        generate_scene(0, spec)


def test_scene_round_trip(small_scene):
    back = loads_scene(dumps_scene(small_scene))
    assert np.array_equal(back.occupancy, small_scene.occupancy)
    assert np.array_equal(back.semantics, small_scene.semantics)
    assert back.landmarks == small_scene.landmarks and back.id == small_scene.id


def test_scene_format_checked(small_scene):
    import json
    d = json.loads(dumps_scene(small_scene))
    d["format"] = "other/9"
    with pytest.raises(ValueError, match="other/9"):
        loads_scene(json.dumps(d))


# ---------------------------------------------------------------- episodes


def test_single_subtask_episode(small_scene):
    ep = generate_reference_episode(small_scene, 1, 1)
    assert ep.boundaries == [len(ep.path) - 1] and len(ep.goals) == 1
    assert small_scene.cell_of(ep.path[-1]) == small_scene.cell_of(small_scene.landmark(ep.goals[0]).position)


def test_three_subtasks_are_contiguous(small_scene):
    ep = generate_reference_episode(small_scene, 4, 3, min_goal_separation=2.0, ordered_visibility=False)
    assert len(ep.boundaries) == 3
    for k, b in enumerate(ep.boundaries):
        assert small_scene.cell_of(ep.path[b]) == small_scene.cell_of(small_scene.landmark(ep.goals[k]).position)
    assert all(euclidean(a, b) == pytest.approx(0.25) for a, b in zip(ep.path, ep.path[1:]))


@pytest.mark.parametrize("seed", range(6))
def test_passed_landmarks_are_near_their_subpath(small_scene, seed):
    ep = generate_reference_episode(small_scene, seed, 2, min_goal_separation=2.0, ordered_visibility=False)
    prev = 0
    for k, b in enumerate(ep.boundaries):
        sub = ep.path[prev:b + 1]
        for label in ep.descriptors[k]["passed"]:
            pos = small_scene.landmark(label).position
            assert min(math.dist(p, pos) for p in sub) <= MAX_RANGE
        prev = b


def test_max_actions_bound(small_scene):
    ep = generate_reference_episode(small_scene, 2, 2, min_goal_separation=2.0, max_actions=120)
    assert len(traverse_poses(ep.path, ep.start.heading)) <= 120


def test_infeasible_episode(small_scene):
    with pytest.raises(GenerationError):
        generate_reference_episode(small_scene, 0, 20)


def test_episode_dict_round_trip(small_scene):
    from seqnav.world import ReferenceEpisode
    ep = generate_reference_episode(small_scene, 7, 2, min_goal_separation=2.0)
    back = ReferenceEpisode.from_dict(ep.to_dict())
    assert back.path == [tuple(p) for p in ep.path] and back.start == ep.start and back.goals == ep.goals


def test_traverse_poses_turns_in_place():
    poses = traverse_poses([(0, 0), (0.25, 0), (0.25, 0.25)], 0.0)
    # forward, six left turns, forward
    assert len(poses) == 1 + 1 + 6 + 1
    assert poses[-1][0] == Pose(0.25, 0.25, 90)
