"""Poses, the discrete action set and path arithmetic."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

FORWARD_STEP = 0.25  # meters
TURN_ANGLE = 15.0  # degrees

Point = Tuple[float, float]


class ContractViolation(ValueError):
    """Raised when an operation is called outside its documented domain."""


class Action(enum.IntEnum):
    FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    STOP = 3
    TURN_BACK_LAST_STEP = 4


# the four actions a policy may emit, in probability-vector order
POLICY_ACTIONS = (Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT, Action.STOP)


def normalize_heading(deg: float) -> float:
    h = math.fmod(deg, 360.0)
    if h < 0.0:
        h += 360.0
    if h >= 360.0:  # fmod of tiny negatives can round up to 360
        h = 0.0
    return h


def heading_vector(deg: float) -> Tuple[float, float]:
    """Unit vector for a heading; exact on the four axis-aligned headings."""
    h = normalize_heading(deg)
    if h == 0.0:
        return 1.0, 0.0
    if h == 90.0:
        return 0.0, 1.0
    if h == 180.0:
        return -1.0, 0.0
    if h == 270.0:
        return 0.0, -1.0
    rad = math.radians(h)
    return math.cos(rad), math.sin(rad)


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.heading)):
            raise ContractViolation(f"non-finite pose {self!r}")
        object.__setattr__(self, "heading", normalize_heading(self.heading))

    @property
    def position(self) -> Point:
        return (self.x, self.y)


def apply_action(pose: Pose, action: Action) -> Pose:
    if action == Action.FORWARD:
        dx, dy = heading_vector(pose.heading)
        return Pose(pose.x + FORWARD_STEP * dx, pose.y + FORWARD_STEP * dy, pose.heading)
    if action == Action.TURN_LEFT:
        return Pose(pose.x, pose.y, pose.heading + TURN_ANGLE)
    if action == Action.TURN_RIGHT:
        return Pose(pose.x, pose.y, pose.heading - TURN_ANGLE)
    if action == Action.STOP:
        return pose
    raise ContractViolation(f"{Action(action).name} is not a geometric action; rollback belongs to the simulator")


def euclidean(a: Sequence[float], b: Sequence[float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def path_length(path: Iterable[Sequence[float]]) -> float:
    pts = list(path)
    if not pts:
        raise ContractViolation("path must contain at least one point")
    return math.fsum(euclidean(pts[i], pts[i + 1]) for i in range(len(pts) - 1))


def as_path(points: Iterable[Sequence[float]]) -> list[Point]:
    """Validate and copy a sequence of points into a list of float tuples."""
    out = [(float(p[0]), float(p[1])) for p in points]
    if not out:
        raise ContractViolation("path must contain at least one point")
    for p in out:
        if not (math.isfinite(p[0]) and math.isfinite(p[1])):
            raise ContractViolation(f"non-finite path point {p}")
    return out
