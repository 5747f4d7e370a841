"""Navigation metrics: TL, NE, SR, OS, SPL, DTW/nDTW/t-nDTW, CPsubT, CPsubI."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .geometry import euclidean, path_length

SUCCESS_RADIUS = 3.0
D_TH = 3.0
METRIC_KEYS = ("tl", "ne", "os", "ndtw", "sr", "spl", "cpsubt", "cpsubi")


def _as_array(path) -> np.ndarray:
    a = np.asarray(path, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 2 or a.shape[0] == 0:
        raise ValueError("path must be a non-empty sequence of (x, y) points")
    return a


def dtw(r, t) -> float:
    """Minimum cumulative Euclidean cost over monotone warpings matching both endpoints."""
    return float(kernels.dtw_cost(_as_array(r), _as_array(t)))


def ndtw(r, t, d_th: float = D_TH) -> float:
    if d_th <= 0:
        raise ValueError("d_th must be positive")
    return math.exp(-dtw(r, t) / (len(r) * d_th))


@dataclass
class EpisodeResult:
    agent_path: list
    reference_path: list
    subtask_boundaries: list
    selection_log: list  # per executed step: (selected sub-task or None, ground-truth sub-task)
    success_radius: float = SUCCESS_RADIUS
    d_th: float = D_TH
    scene_id: str = ""
    episode_id: str = ""
    actions: list = field(default_factory=list)
    stopped: bool = False
    steps: Optional[int] = None  # executed steps; defaults to len(selection_log)
    failed: bool = False  # e.g. step cap reached; forces sr = 0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        b = self.subtask_boundaries
        if not b or any(x >= y for x, y in zip(b, b[1:])) or b[-1] != len(self.reference_path) - 1:
            raise ValueError("boundaries must be strictly increasing and end at the last reference index")
        if self.steps is None:
            self.steps = len(self.selection_log)
        if len(self.selection_log) < self.steps:
            raise ValueError("selection log shorter than the executed step count")

    @property
    def goal(self):
        return tuple(self.reference_path[-1])


@dataclass
class TourResult:
    episodes: list
    scene_id: str = ""
    tour_id: str = ""
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.episodes:
            raise ValueError("tour has no episodes")


def tl(ep: EpisodeResult) -> float:
    return path_length(ep.agent_path)


def ne(ep: EpisodeResult, scene=None) -> float:
    """Euclidean by default; pass a scene for the geodesic variant."""
    if scene is not None:
        from .world import shortest_path_distance

        return shortest_path_distance(scene, ep.agent_path[-1], ep.goal)
    return euclidean(ep.agent_path[-1], ep.goal)


def sr(ep: EpisodeResult, scene=None) -> float:
    if ep.failed:
        return 0.0
    return 1.0 if ne(ep, scene) <= ep.success_radius else 0.0


def os_(ep: EpisodeResult) -> float:
    g = ep.goal
    return 1.0 if min(euclidean(p, g) for p in ep.agent_path) <= ep.success_radius else 0.0


def spl(ep: EpisodeResult, variant: str = "standard", scene=None) -> float:
    s = sr(ep, scene)
    l_ref = path_length(ep.reference_path)
    p = tl(ep)
    if variant == "standard":
        denom = max(l_ref, p)
        return s if denom == 0 else s * l_ref / denom
    if variant == "tl_ratio":
        return s if l_ref == 0 else s * p / l_ref
    raise ValueError(f"unknown spl variant {variant!r}")


def episode_ndtw(ep: EpisodeResult) -> float:
    return ndtw(ep.reference_path, ep.agent_path, ep.d_th)


def tndtw(tour: TourResult) -> float:
    ref = [p for ep in tour.episodes for p in ep.reference_path]
    agent = [p for ep in tour.episodes for p in ep.agent_path]
    return ndtw(ref, agent, tour.episodes[0].d_th)


def cpsubt(ep: EpisodeResult, radius: Optional[float] = None) -> float:
    """Fraction of sub-tasks completed in order before the first miss."""
    eps = ep.success_radius if radius is None else radius
    targets = [ep.reference_path[b] for b in ep.subtask_boundaries]
    done = 0
    for p in ep.agent_path:
        if done == len(targets):
            break
        if euclidean(p, targets[done]) <= eps:
            done += 1
    return done / len(targets)


def cpsubi(ep: EpisodeResult) -> float:
    log = ep.selection_log[: ep.steps]
    if not log:
        return 0.0
    return sum(1 for sel, gt in log if sel is not None and sel == gt) / len(log)


def subtask_of_index(boundaries: Sequence[int], idx: int) -> int:
    for k, b in enumerate(boundaries):
        if idx <= b:
            return k
    return len(boundaries) - 1


class ProgressTracker:
    """Monotone nearest-node projection of agent positions onto a reference path."""

    def __init__(self, reference_path, boundaries):
        self.ref = _as_array(reference_path)
        self.boundaries = list(boundaries)
        self.index = 0

    def update(self, position) -> int:
        d = np.hypot(self.ref[:, 0] - position[0], self.ref[:, 1] - position[1])
        self.index = max(self.index, int(np.argmin(d)))
        return subtask_of_index(self.boundaries, self.index)


def episode_metrics(ep: EpisodeResult, spl_variant: str = "standard", scene=None) -> dict:
    return {
        "tl": tl(ep),
        "ne": ne(ep, scene),
        "os": os_(ep),
        "ndtw": episode_ndtw(ep),
        "sr": sr(ep, scene),
        "spl": spl(ep, spl_variant, scene),
        "cpsubt": cpsubt(ep),
        "cpsubi": cpsubi(ep),
    }


@dataclass
class MetricsReport:
    episodes: list  # per-episode metric dicts (with ids)
    tours: list  # per-tour dicts with tndtw
    aggregate: dict

    def to_dict(self) -> dict:
        return {"aggregate": self.aggregate, "episodes": self.episodes, "tours": self.tours}


def mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else float("nan")


def build_report(tours: Sequence[TourResult], spl_variant: str = "standard", scene_lookup=None) -> MetricsReport:
    eps, trs = [], []
    for t in tours:
        scene = scene_lookup(t.scene_id) if scene_lookup else None
        for ep in t.episodes:
            m = episode_metrics(ep, spl_variant, scene)
            eps.append({"tour_id": t.tour_id, "episode_id": ep.episode_id, "scene_id": ep.scene_id, **m})
        trs.append({"tour_id": t.tour_id, "scene_id": t.scene_id, "tndtw": tndtw(t)})
    agg = {k: mean(e[k] for e in eps) for k in METRIC_KEYS}
    agg["tndtw"] = mean(t["tndtw"] for t in trs)
    return MetricsReport(eps, trs, agg)
