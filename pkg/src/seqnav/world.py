"""Synthetic persistent scenes, the step/observe simulator and episode generation."""
from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .geometry import (
    Action,
    ContractViolation,
    Point,
    Pose,
    apply_action,
    euclidean,
    heading_vector,
    normalize_heading,
)

SCENE_FORMAT = "seqnav-scene/1"

RESOLUTION = 0.25  # m per cell; one FORWARD step is one cell
FOV = 90.0  # degrees
MAX_RANGE = 5.0  # m
RAY_SPACING = 2.0  # degrees

NUM_CLASSES = 13
VOID, WALL = 0, 1
CLASS_NAMES = (
    "void", "wall", "living room", "kitchen", "bedroom", "bathroom", "hallway",
    "dining room", "office", "laundry", "garage", "stairwell", "closet",
)
ROOM_CLASSES = tuple(range(2, NUM_CLASSES))

# landmark label -> synonym tokens; labels are single lowercase tokens
VOCABULARY = {
    "couch": ("couch", "sofa", "settee"),
    "fireplace": ("fireplace", "hearth"),
    "table": ("table",),
    "chair": ("chair",),
    "bed": ("bed",),
    "lamp": ("lamp",),
    "plant": ("plant", "houseplant"),
    "piano": ("piano",),
    "television": ("television", "tv"),
    "bookshelf": ("bookshelf", "bookcase", "shelves"),
    "mirror": ("mirror",),
    "painting": ("painting", "picture", "artwork"),
    "vase": ("vase",),
    "clock": ("clock",),
    "refrigerator": ("refrigerator", "fridge"),
    "sink": ("sink", "basin"),
    "bathtub": ("bathtub", "tub"),
    "toilet": ("toilet",),
    "wardrobe": ("wardrobe", "armoire"),
    "dresser": ("dresser",),
    "desk": ("desk",),
    "stove": ("stove", "oven"),
    "washer": ("washer",),
    "rug": ("rug", "carpet"),
    "window": ("window",),
    "statue": ("statue", "sculpture"),
    "aquarium": ("aquarium", "fishtank"),
    "armchair": ("armchair",),
    "ottoman": ("ottoman",),
    "chandelier": ("chandelier",),
    "cabinet": ("cabinet", "cupboard"),
    "bench": ("bench",),
}


class GenerationError(RuntimeError):
    pass


class RollbackUnavailable(RuntimeError):
    """TURN_BACK_LAST_STEP requested with an empty pose stack."""


class UnreachableError(RuntimeError):
    pass


@dataclass(frozen=True)
class Landmark:
    label: str
    position: Point


@dataclass(frozen=True)
class Room:
    id: int
    row0: int
    col0: int
    row1: int  # exclusive
    col1: int  # exclusive
    semantic_class: int


@dataclass
class Scene:
    occupancy: np.ndarray  # uint8, 1 = blocked
    semantics: np.ndarray  # uint8 class ids
    landmarks: list
    resolution: float = RESOLUTION
    id: str = "scene"
    rooms: list = field(default_factory=list)
    _fields: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.occupancy = np.ascontiguousarray(self.occupancy, dtype=np.uint8)
        self.semantics = np.ascontiguousarray(self.semantics, dtype=np.uint8)
        if self.occupancy.shape != self.semantics.shape:
            raise ContractViolation("occupancy and semantics grids differ in shape")
        if self.resolution <= 0:
            raise ContractViolation("resolution must be positive")
        self.free_rows = (self.occupancy == 0).tolist()
        for lm in self.landmarks:
            if not self.is_free(lm.position):
                raise ContractViolation(f"landmark {lm.label} is not on a free cell")

    @property
    def shape(self):
        return self.occupancy.shape

    def cell_of(self, p: Sequence[float]) -> tuple[int, int]:
        return (int(math.floor(p[1] / self.resolution + 0.5)), int(math.floor(p[0] / self.resolution + 0.5)))

    def cell_center(self, cell: Sequence[int]) -> Point:
        return (cell[1] * self.resolution, cell[0] * self.resolution)

    def in_bounds(self, cell) -> bool:
        return 0 <= cell[0] < self.shape[0] and 0 <= cell[1] < self.shape[1]

    def is_free(self, p: Sequence[float]) -> bool:
        cell = self.cell_of(p)
        return self.in_bounds(cell) and not self.occupancy[cell]

    def landmark(self, label: str) -> Landmark:
        for lm in self.landmarks:
            if lm.label == label:
                return lm
        raise KeyError(label)

    def keyword_map(self) -> dict:
        return {lm.label: frozenset(VOCABULARY.get(lm.label, (lm.label,))) for lm in self.landmarks}


@dataclass
class AgentState:
    pose: Pose
    pose_stack: list = field(default_factory=list)
    collision_flag: bool = False


@dataclass(frozen=True)
class Observation:
    pose: Pose
    visible_landmarks: tuple  # (label, bearing deg, range m)
    depth_rays: tuple  # (bearing deg, hit range m, hit class or None)

    @property
    def visible_labels(self) -> frozenset:
        return frozenset(v[0] for v in self.visible_landmarks)


# ---------------------------------------------------------------- sensing


def ray_bearings(fov: float = FOV, spacing: float = RAY_SPACING) -> np.ndarray:
    n = int(round(fov / spacing))
    return np.array([-fov / 2.0 + i * spacing for i in range(n + 1)], dtype=np.float64)


_BEARINGS = ray_bearings()


def ray_directions(heading: float, bearings: Iterable[float]):
    """Direction cosines for rays at ``heading + bearing``; shared by sensing and mapping."""
    dxs, dys = [], []
    for b in bearings:
        dx, dy = heading_vector(heading + b)
        dxs.append(dx)
        dys.append(dy)
    return np.array(dxs, dtype=np.float64), np.array(dys, dtype=np.float64)


def _wrap180(deg: float) -> float:
    b = normalize_heading(deg)
    return b - 360.0 if b > 180.0 else b


def visible_landmarks(scene: Scene, pose: Pose, fov: float = FOV, max_range: float = MAX_RANGE) -> tuple:
    out = []
    half = fov / 2.0 + 1e-9
    for lm in scene.landmarks:
        dx = lm.position[0] - pose.x
        dy = lm.position[1] - pose.y
        rng = math.hypot(dx, dy)
        if rng > max_range:
            continue
        if rng < 0.5 * scene.resolution:
            # standing on the landmark's cell
            out.append((lm.label, 0.0, rng))
            continue
        bearing = _wrap180(math.degrees(math.atan2(dy, dx)) - pose.heading)
        if abs(bearing) > half:
            continue
        dist, _, _ = kernels.cast_rays(scene.occupancy, scene.resolution, pose.x, pose.y,
                                       np.array([dx / rng]), np.array([dy / rng]), rng)
        if dist[0] < rng:
            continue
        out.append((lm.label, bearing, rng))
    return tuple(out)


def observe(scene: Scene, pose: Pose) -> Observation:
    dxs, dys = ray_directions(pose.heading, _BEARINGS)
    dists, rows, cols = kernels.cast_rays(scene.occupancy, scene.resolution, pose.x, pose.y, dxs, dys, MAX_RANGE)
    h, w = scene.shape
    rays = []
    for b, d, r, c in zip(_BEARINGS.tolist(), dists.tolist(), rows.tolist(), cols.tolist()):
        if r < 0:
            if d < MAX_RANGE:  # left the grid
                rays.append((b, d, WALL))
            else:
                rays.append((b, d, None))
        elif 0 <= r < h and 0 <= c < w:
            rays.append((b, d, int(scene.semantics[r, c])))
        else:
            rays.append((b, d, WALL))
    return Observation(pose=pose, visible_landmarks=visible_landmarks(scene, pose), depth_rays=tuple(rays))


def step(scene: Scene, state: AgentState, action: Action):
    """Execute one action; returns the new state and the observation at its pose."""
    action = Action(action)
    stack = list(state.pose_stack)
    collision = False
    if action == Action.TURN_BACK_LAST_STEP:
        if not stack:
            raise RollbackUnavailable("no executed motion to roll back")
        pose = stack.pop()
    elif action == Action.STOP:
        pose = state.pose
    else:
        stack.append(state.pose)
        pose = apply_action(state.pose, action)
        if action == Action.FORWARD and not scene.is_free(pose.position):
            pose = state.pose
            collision = True
    new = AgentState(pose=pose, pose_stack=stack, collision_flag=collision)
    return new, observe(scene, pose)


# --------------------------------------------------------------- geodesics


def shortest_path_distance(scene: Scene, a: Sequence[float], b: Sequence[float]) -> float:
    """8-connected grid geodesic in meters (no corner cutting)."""
    sa, sb = scene.cell_of(a), scene.cell_of(b)
    for cell in (sa, sb):
        if not scene.in_bounds(cell) or scene.occupancy[cell]:
            raise ContractViolation(f"cell {cell} is not free")
    if sa == sb:
        return 0.0
    free = scene.free_rows
    h, w = scene.shape
    diag = math.sqrt(2.0)
    dist = {sa: 0.0}
    heap = [(0.0, sa)]
    while heap:
        d, cell = heapq.heappop(heap)
        if cell == sb:
            return d * scene.resolution
        if d > dist.get(cell, math.inf):
            continue
        r, c = cell
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                nr, nc = r + dr, c + dc
                if not (0 <= nr < h and 0 <= nc < w) or not free[nr][nc]:
                    continue
                if dr and dc and not (free[r + dr][c] and free[r][c + dc]):
                    continue
                nd = d + (diag if dr and dc else 1.0)
                if nd < dist.get((nr, nc), math.inf):
                    dist[(nr, nc)] = nd
                    heapq.heappush(heap, (nd, (nr, nc)))
    raise UnreachableError(f"{b} unreachable from {a}")


_DIRS = ((0, 1), (1, 0), (0, -1), (-1, 0))  # (drow, dcol) for headings 0, 90, 180, 270


def distance_field(scene: Scene, goal_cell) -> dict:
    """4-connected BFS step counts to ``goal_cell``; cached per scene."""
    cache = scene._fields
    goal_cell = (int(goal_cell[0]), int(goal_cell[1]))
    if goal_cell in cache:
        return cache[goal_cell]
    if not scene.in_bounds(goal_cell) or scene.occupancy[goal_cell]:
        raise ContractViolation(f"goal cell {goal_cell} is not free")
    grid = scene.free_rows
    h, w = scene.shape
    dist = {goal_cell: 0}
    todo = deque([goal_cell])
    while todo:
        cell = todo.popleft()
        d = dist[cell] + 1
        r, c = cell
        for dr, dc in _DIRS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and grid[nr][nc] and (nr, nc) not in dist:
                dist[(nr, nc)] = d
                todo.append((nr, nc))
    if len(cache) > 256:
        cache.clear()
    cache[goal_cell] = dist
    return dist


def next_direction(field: dict, cell, current_dir: Optional[int] = None) -> Optional[int]:
    """Direction index of a downhill move in ``field``; keeps ``current_dir`` when it is downhill."""
    d = field.get(cell)
    if d is None:
        raise UnreachableError(f"{cell} cannot reach the goal")
    if d == 0:
        return None
    order = list(range(4))
    if current_dir is not None:
        order.remove(current_dir)
        order.insert(0, current_dir)
    for k in order:
        dr, dc = _DIRS[k]
        if field.get((cell[0] + dr, cell[1] + dc), -1) == d - 1:
            return k
    raise AssertionError("distance field has no downhill neighbour")


def grid_path(scene: Scene, start_cell, goal_cell, start_dir: Optional[int] = None) -> list:
    """4-connected shortest cell path that keeps going straight whenever that stays shortest."""
    field = distance_field(scene, goal_cell)
    cell = (int(start_cell[0]), int(start_cell[1]))
    if cell not in field:
        raise UnreachableError(f"{goal_cell} unreachable from {start_cell}")
    out = [cell]
    k = start_dir
    while True:
        k = next_direction(field, cell, k)
        if k is None:
            return out
        cell = (cell[0] + _DIRS[k][0], cell[1] + _DIRS[k][1])
        out.append(cell)


def reachable_cells(scene: Scene, start_cell) -> set:
    occ = scene.occupancy
    h, w = occ.shape
    seen = {start_cell}
    todo = deque([start_cell])
    while todo:
        r, c = todo.popleft()
        for dr, dc in _DIRS:
            n = (r + dr, c + dc)
            if 0 <= n[0] < h and 0 <= n[1] < w and not occ[n] and n not in seen:
                seen.add(n)
                todo.append(n)
    return seen


# ------------------------------------------------------------- generation


@dataclass(frozen=True)
class SceneSpec:
    n_rooms: int = 4
    n_landmarks: int = 8
    room_min: int = 14  # interior cells per side
    room_max: int = 20
    door_width: int = 3
    extra_door_prob: float = 0.3

    def validate(self):
        if not 1 <= self.n_rooms <= 16:
            raise GenerationError(f"n_rooms={self.n_rooms} outside [1, 16]")
        if not 0 <= self.n_landmarks <= len(VOCABULARY):
            raise GenerationError(f"n_landmarks={self.n_landmarks} outside [0, {len(VOCABULARY)}]")
        if not 6 <= self.room_min <= self.room_max <= 80:
            raise GenerationError("room size bounds must satisfy 6 <= room_min <= room_max <= 80")
        if not 1 <= self.door_width <= self.room_min - 2:
            raise GenerationError("door_width must fit inside the smallest wall")


def generate_scene(seed: int, spec: SceneSpec = SceneSpec()) -> Scene:
    """Rooms on a jittered grid joined by doors along a random spanning tree."""
    spec.validate()
    rng = np.random.default_rng([int(seed), 0x5CE7E])
    n = spec.n_rooms
    gcols = int(math.ceil(math.sqrt(n)))
    grows = int(math.ceil(n / gcols))
    widths = rng.integers(spec.room_min, spec.room_max + 1, size=gcols)
    heights = rng.integers(spec.room_min, spec.room_max + 1, size=grows)
    col_starts = [1 + int(sum(widths[:i])) + i for i in range(gcols)]
    row_starts = [1 + int(sum(heights[:i])) + i for i in range(grows)]
    H = int(sum(heights)) + grows + 1
    W = int(sum(widths)) + gcols + 1
    occ = np.ones((H, W), dtype=np.uint8)
    sem = np.full((H, W), WALL, dtype=np.uint8)

    classes = rng.permutation(ROOM_CLASSES)
    rooms = []
    slot = {}
    for k in range(n):
        gr, gc = divmod(k, gcols)
        r0, c0 = row_starts[gr], col_starts[gc]
        room = Room(k, r0, c0, r0 + int(heights[gr]), c0 + int(widths[gc]), int(classes[k % len(classes)]))
        rooms.append(room)
        slot[(gr, gc)] = room
        occ[room.row0:room.row1, room.col0:room.col1] = 0
    for room in rooms:
        # interior and surrounding wall ring carry the room's class; later rooms win shared walls
        sem[room.row0 - 1:room.row1 + 1, room.col0 - 1:room.col1 + 1] = np.where(
            occ[room.row0 - 1:room.row1 + 1, room.col0 - 1:room.col1 + 1] == 0,
            room.semantic_class,
            np.where(sem[room.row0 - 1:room.row1 + 1, room.col0 - 1:room.col1 + 1] == WALL,
                     room.semantic_class, sem[room.row0 - 1:room.row1 + 1, room.col0 - 1:room.col1 + 1]),
        )
    sem[occ == 0] = 0
    for room in rooms:
        sem[room.row0:room.row1, room.col0:room.col1] = room.semantic_class

    # adjacency between grid neighbours, spanning tree by randomized Kruskal
    edges = []
    for (gr, gc), room in slot.items():
        if (gr, gc + 1) in slot:
            edges.append((room.id, slot[(gr, gc + 1)].id, "h"))
        if (gr + 1, gc) in slot:
            edges.append((room.id, slot[(gr + 1, gc)].id, "v"))
    order = rng.permutation(len(edges))
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    doors = []
    for idx in order:
        a, b, kind = edges[idx]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            doors.append(edges[idx])
        elif rng.random() < spec.extra_door_prob:
            doors.append(edges[idx])
    for a, b, kind in sorted(doors):
        ra, rb = rooms[a], rooms[b]
        dw = spec.door_width
        if kind == "h":
            wall_c = ra.col1
            lo, hi = max(ra.row0, rb.row0) + 1, min(ra.row1, rb.row1) - 1 - dw
            start = int(rng.integers(lo, hi + 1))
            occ[start:start + dw, wall_c] = 0
            sem[start:start + dw, wall_c] = ra.semantic_class
        else:
            wall_r = ra.row1
            lo, hi = max(ra.col0, rb.col0) + 1, min(ra.col1, rb.col1) - 1 - dw
            start = int(rng.integers(lo, hi + 1))
            occ[wall_r, start:start + dw] = 0
            sem[wall_r, start:start + dw] = ra.semantic_class

    labels = sorted(VOCABULARY)
    chosen = rng.choice(len(labels), size=spec.n_landmarks, replace=False) if spec.n_landmarks else []
    candidates = []
    for room in rooms:
        for r in range(room.row0 + 2, room.row1 - 2):
            for c in range(room.col0 + 2, room.col1 - 2):
                candidates.append((r, c))
    if len(candidates) < spec.n_landmarks:
        raise GenerationError("not enough interior cells for landmarks")
    perm = rng.permutation(len(candidates))
    placed = []
    for idx in perm:
        if len(placed) == spec.n_landmarks:
            break
        r, c = candidates[idx]
        if all(abs(r - pr) + abs(c - pc) >= 6 for pr, pc in placed):
            placed.append((r, c))
    if len(placed) < spec.n_landmarks:
        raise GenerationError("could not space landmarks apart")
    landmarks = [
        Landmark(labels[int(li)], (c * RESOLUTION, r * RESOLUTION)) for li, (r, c) in zip(chosen, placed)
    ]
    sid = f"synth-{int(seed)}-r{spec.n_rooms}-l{spec.n_landmarks}"
    return Scene(occupancy=occ, semantics=sem, landmarks=landmarks, resolution=RESOLUTION, id=sid, rooms=rooms)


# -------------------------------------------------------- reference episodes


def turn_toward(heading: float, target: float) -> Action:
    """Single 15-degree turn reducing the angular gap; FORWARD once aligned."""
    diff = _wrap180(target - heading)
    if abs(diff) < 1e-9:
        return Action.FORWARD
    return Action.TURN_LEFT if diff > 0 else Action.TURN_RIGHT


def heading_between(a: Point, b: Point) -> float:
    return normalize_heading(round(math.degrees(math.atan2(b[1] - a[1], b[0] - a[0])) / 15.0) * 15.0)


def traverse_poses(path: Sequence[Point], start_heading: float):
    """Poses visited when following ``path`` with turn-in-place and unit steps.

    Yields ``(pose, path_index)``; turning poses report the index of the cell
    the agent stands on.
    """
    pose = Pose(path[0][0], path[0][1], start_heading)
    out = [(pose, 0)]
    for i in range(1, len(path)):
        target = heading_between(path[i - 1], path[i])
        while True:
            a = turn_toward(pose.heading, target)
            if a == Action.FORWARD:
                break
            pose = apply_action(pose, a)
            out.append((pose, i - 1))
        pose = Pose(path[i][0], path[i][1], pose.heading)
        out.append((pose, i))
    return out


@dataclass
class ReferenceEpisode:
    scene_id: str
    start: Pose
    path: list  # cell-centre points
    boundaries: list  # path index where each sub-trajectory ends
    goals: list  # landmark labels, one per sub-task
    descriptors: list  # per sub-task {"goal": label, "passed": [labels]}

    @property
    def n_subtasks(self) -> int:
        return len(self.boundaries)

    def subtask_of_index(self, idx: int) -> int:
        for k, b in enumerate(self.boundaries):
            if idx <= b:
                return k
        return len(self.boundaries) - 1

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "start": [self.start.x, self.start.y, self.start.heading],
            "path": [list(p) for p in self.path],
            "boundaries": list(self.boundaries),
            "goals": list(self.goals),
            "descriptors": [dict(d) for d in self.descriptors],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceEpisode":
        return cls(
            scene_id=d["scene_id"],
            start=Pose(*d["start"]),
            path=[tuple(p) for p in d["path"]],
            boundaries=list(d["boundaries"]),
            goals=list(d["goals"]),
            descriptors=[dict(x) for x in d["descriptors"]],
        )


def _passed_landmarks(scene: Scene, sub_path: Sequence[Point], exclude: Iterable[str]) -> list:
    skip = set(exclude)
    out = []
    for p in sub_path:
        for lm in scene.landmarks:
            if lm.label in skip or lm.label in out:
                continue
            if euclidean(p, lm.position) <= MAX_RANGE:
                out.append(lm.label)
    return out


def _ordered_visibility_ok(scene, poses, boundaries, goals, min_goal_visibility):
    """Along the reference, only the current goal (and at a sub-task's start
    cell, the goal just reached) may be visible among this episode's goals."""
    goal_index = {g: k for k, g in enumerate(goals)}
    seen_counts = [0] * len(goals)
    pose_counts = [0] * len(goals)
    starts = {0: 0}
    for k, b in enumerate(boundaries[:-1]):
        starts[b] = k + 1
    for pose, idx in poses:
        sub = 0
        for k, b in enumerate(boundaries):
            if idx <= b:
                sub = k
                break
        vis = {goal_index[v[0]] for v in visible_landmarks(scene, pose) if v[0] in goal_index}
        if idx in starts and idx != boundaries[-1]:
            nxt = starts[idx]
            allowed = {nxt, nxt - 1} if nxt > 0 else {0}
            counted = None
        else:
            allowed = {sub}
            counted = sub
        if not vis <= allowed:
            return False
        if counted is not None:
            pose_counts[counted] += 1
            if counted in vis:
                seen_counts[counted] += 1
    if min_goal_visibility > 0:
        for k in range(len(goals)):
            if pose_counts[k] and seen_counts[k] / pose_counts[k] < min_goal_visibility:
                return False
    return True


def generate_reference_episode(
    scene: Scene,
    seed: int,
    n_subtasks: int,
    start: Optional[Pose] = None,
    *,
    min_goal_separation: float = 3.5,
    ordered_visibility: bool = True,
    min_goal_visibility: float = 0.0,
    exclude_goals: Iterable[str] = (),
    max_actions: Optional[int] = None,
    max_attempts: int = 400,
) -> ReferenceEpisode:
    """Reference path visiting ``n_subtasks`` landmark goals in order.

    Candidates are rejected unless goals are pairwise at least
    ``min_goal_separation`` apart, following the path takes at most
    ``max_actions`` moves and turns (STOP included), and, with
    ``ordered_visibility``, the episode's goals come into view in
    instruction order along the reference.
    """
    if n_subtasks < 1:
        raise ContractViolation("n_subtasks must be >= 1")
    rng = np.random.default_rng([int(seed), 0xE915])
    excluded = set(exclude_goals)
    free = np.argwhere(scene.occupancy == 0)
    for _ in range(max_attempts):
        if start is None:
            r, c = free[int(rng.integers(len(free)))]
            s_cell = (int(r), int(c))
            s_pose = Pose(*scene.cell_center(s_cell), float(90 * int(rng.integers(4))))
        else:
            s_pose = start
            s_cell = scene.cell_of(start.position)
        pool = [lm for lm in scene.landmarks if lm.label not in excluded and scene.cell_of(lm.position) != s_cell]
        if len(pool) < n_subtasks:
            raise GenerationError(f"scene {scene.id} has only {len(pool)} eligible goal landmarks")
        picks = [pool[int(i)] for i in rng.choice(len(pool), size=n_subtasks, replace=False)]
        pts = [s_pose.position] + [lm.position for lm in picks]
        if any(
            euclidean(pts[i], pts[j]) < min_goal_separation
            for i in range(len(pts)) for j in range(i + 1, len(pts))
        ):
            continue
        path_cells = [s_cell]
        boundaries = []
        ok = True
        for lm in picks:
            try:
                seg = grid_path(scene, path_cells[-1], scene.cell_of(lm.position))
            except UnreachableError:
                ok = False
                break
            path_cells.extend(seg[1:])
            boundaries.append(len(path_cells) - 1)
        if not ok:
            continue
        path = [scene.cell_center(c) for c in path_cells]
        goals = [lm.label for lm in picks]
        if max_actions is not None and len(path) - 1 > max_actions:
            continue
        if ordered_visibility or min_goal_visibility > 0 or max_actions is not None:
            poses = traverse_poses(path, s_pose.heading)
            if max_actions is not None and len(poses) > max_actions:
                continue
        if ordered_visibility or min_goal_visibility > 0:
            if not _ordered_visibility_ok(scene, poses, boundaries, goals, min_goal_visibility):
                continue
        descriptors = []
        prev = 0
        for k, b in enumerate(boundaries):
            sub = path[prev:b + 1]
            descriptors.append({"goal": goals[k], "passed": _passed_landmarks(scene, sub, [goals[k]])})
            prev = b
        return ReferenceEpisode(scene.id, s_pose, path, boundaries, goals, descriptors)
    raise GenerationError(f"no feasible {n_subtasks}-goal episode in scene {scene.id} after {max_attempts} attempts")


# ------------------------------------------------------------ serialization


def _rle(arr: np.ndarray) -> list:
    flat = arr.ravel().tolist()
    out = []
    for v in flat:
        if out and out[-1][0] == v:
            out[-1][1] += 1
        else:
            out.append([v, 1])
    return out


def _unrle(runs, shape, dtype) -> np.ndarray:
    flat = []
    for v, n in runs:
        flat.extend([v] * n)
    if len(flat) != shape[0] * shape[1]:
        raise ValueError("run-length data does not match grid shape")
    return np.array(flat, dtype=dtype).reshape(shape)


def scene_to_dict(scene: Scene) -> dict:
    return {
        "format": SCENE_FORMAT,
        "id": scene.id,
        "resolution": scene.resolution,
        "shape": list(scene.shape),
        "occupancy": _rle(scene.occupancy),
        "semantics": _rle(scene.semantics),
        "landmarks": [{"label": lm.label, "position": list(lm.position)} for lm in scene.landmarks],
        "rooms": [
            {"id": r.id, "rows": [r.row0, r.row1], "cols": [r.col0, r.col1], "class": r.semantic_class}
            for r in scene.rooms
        ],
    }


def scene_from_dict(d: dict) -> Scene:
    if d.get("format") != SCENE_FORMAT:
        raise ValueError(f"unsupported scene format {d.get('format')!r}; expected {SCENE_FORMAT}")
    shape = tuple(d["shape"])
    return Scene(
        occupancy=_unrle(d["occupancy"], shape, np.uint8),
        semantics=_unrle(d["semantics"], shape, np.uint8),
        landmarks=[Landmark(x["label"], tuple(x["position"])) for x in d["landmarks"]],
        resolution=float(d["resolution"]),
        id=d["id"],
        rooms=[Room(x["id"], x["rows"][0], x["cols"][0], x["rows"][1], x["cols"][1], x["class"]) for x in d.get("rooms", [])],
    )


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), sort_keys=True, separators=(",", ":"))


def loads_scene(text: str) -> Scene:
    return scene_from_dict(json.loads(text))
