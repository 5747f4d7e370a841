"""Episode/tour runners, seeded synthetic suites and ablation sweeps."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .geometry import Action, Pose
from .instruction import HashedBagEncoder, encode_instruction, segment, select_phrase, sentences
from .mapping import MapEncoderWeights, TourMap, crop_ego, encode_map, integrate_observation
from .metrics import (
    METRIC_KEYS,
    EpisodeResult,
    ProgressTracker,
    TourResult,
    build_report,
    mean,
)
from .planner import (
    TICK,
    AOHWeights,
    EaVConfig,
    NeuralAOH,
    ScriptedOraclePolicy,
    eav_step,
    initial_eav_state,
    update_threshold,
)
from .similarity import RemoteEmbeddingClient, SyntheticOracleProvider
from .tours import parse_scene_id, read_tours, synthesize_instruction
from .world import (
    VOCABULARY,
    AgentState,
    GenerationError,
    ReferenceEpisode,
    Scene,
    SceneSpec,
    generate_reference_episode,
    generate_scene,
    observe,
    step,
    traverse_poses,
)


def derive_seed(*parts) -> int:
    h = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:4], "little")


# ------------------------------------------------------------------- suites


@dataclass
class EpisodeSpec:
    episode_id: str
    reference: ReferenceEpisode
    instruction: str
    sentence_to_subtask: list  # sentence index -> sub-task index


@dataclass
class TourSpec:
    tour_id: str
    scene: Scene
    episodes: list


def scene_spec(cfg: RunConfig) -> SceneSpec:
    s = cfg.scene
    return SceneSpec(n_rooms=s.n_rooms, n_landmarks=s.n_landmarks, room_min=s.room_min, room_max=s.room_max)


def _make_tour(cfg: RunConfig, index: int, max_scene_tries: int = 20) -> TourSpec:
    sc = cfg.suite
    for attempt in range(max_scene_tries):
        scene_seed = derive_seed("scene", cfg.seed, index, attempt)
        scene = generate_scene(scene_seed, scene_spec(cfg))
        rng = np.random.default_rng(derive_seed("tour", cfg.seed, index, attempt))
        episodes = []
        start = None
        try:
            for e in range(sc.episodes_per_tour):
                n_sub = int(rng.integers(sc.min_subtasks, sc.max_subtasks + 1))
                ref = generate_reference_episode(
                    scene, derive_seed("episode", scene_seed, e), n_sub, start,
                    min_goal_separation=sc.min_goal_separation,
                    ordered_visibility=sc.ordered_visibility,
                    min_goal_visibility=sc.min_goal_visibility,
                    max_actions=sc.max_actions,
                )
                words = [str(rng.choice(VOCABULARY.get(g, (g,)))) for g in ref.goals]
                text = synthesize_instruction(words, derive_seed("text", scene_seed, e))
                episodes.append(EpisodeSpec(f"t{index:04d}e{e}", ref, text, list(range(n_sub))))
                last = traverse_poses(ref.path, ref.start.heading)[-1][0]
                start = Pose(last.x, last.y, last.heading)
        except GenerationError:
            continue
        return TourSpec(f"t{index:04d}", scene, episodes)
    raise GenerationError(f"could not build tour {index} after {max_scene_tries} scenes")


_SUITE_CACHE = {}


def build_suite(cfg: RunConfig) -> list:
    if cfg.suite.tour_file:
        return suite_from_tour_file(cfg.suite.tour_file, cfg)
    key = (cfg.seed, cfg.scene.model_dump_json(), cfg.suite.model_dump_json())
    if key not in _SUITE_CACHE:
        if len(_SUITE_CACHE) > 8:
            _SUITE_CACHE.clear()
        _SUITE_CACHE[key] = [_make_tour(cfg, i) for i in range(cfg.suite.n_tours)]
    return _SUITE_CACHE[key]


def suite_from_tour_file(path: str, cfg: RunConfig) -> list:
    """Tours from a stitched tour file; each stitched record is one multi-sub-task episode."""
    records = read_tours(path)
    scenes = {}
    by_scene = {}
    for rec in records:
        if not rec.episodes:
            raise ValueError(f"tour {rec.id} carries no episode records")
        if rec.scene_id not in scenes:
            seed, n_rooms, n_lm = parse_scene_id(rec.scene_id)
            spec = SceneSpec(n_rooms=n_rooms, n_landmarks=n_lm, room_min=cfg.scene.room_min, room_max=cfg.scene.room_max)
            scenes[rec.scene_id] = generate_scene(seed, spec)
        path_pts, bounds, goals, s2k = [], [], [], []
        for j, er in enumerate(rec.episodes):
            pts = er.reference_path if not path_pts else er.reference_path[1:]
            path_pts.extend(pts)
            bounds.append(len(path_pts) - 1)
            goals.append(er.goals[-1] if er.goals else "")
            s2k.extend([j] * max(1, len(sentences(er.instruction))))
        first = rec.episodes[0]
        ref = ReferenceEpisode(rec.scene_id, Pose(*first.start, first.start_heading), path_pts, bounds,
                               [g for g in goals], [{"goal": g, "passed": []} for g in goals])
        by_scene.setdefault(rec.scene_id, []).append(EpisodeSpec(rec.id, ref, rec.stitched_instruction, s2k))
    return [TourSpec(f"{sid}", scenes[sid], eps) for sid, eps in sorted(by_scene.items())]


# ------------------------------------------------------------------ running


def make_provider(cfg: RunConfig, scene: Scene, run_seed: int):
    p = cfg.provider
    if p.kind == "remote":
        url = os.environ.get(p.endpoint_env)
        if not url:
            raise RuntimeError(f"remote provider selected but {p.endpoint_env} is not set")
        return RemoteEmbeddingClient(url, timeout=p.timeout)
    return SyntheticOracleProvider(scene.keyword_map(), p.match_scale, p.base_score, p.noise_sigma, run_seed)


def make_eav_config(cfg: RunConfig) -> EaVConfig:
    e = cfg.eav
    return EaVConfig(term1=e.term1, term2=e.term2, threshold_mode=e.threshold_mode,
                     fixed_value=e.fixed_value, init=e.init)


@dataclass
class Models:
    encoder: HashedBagEncoder
    map_weights: Optional[MapEncoderWeights]
    aoh_weights: Optional[AOHWeights]


def make_models(cfg: RunConfig, run_seed: int) -> Models:
    if cfg.policy.kind != "neural":
        return Models(HashedBagEncoder(cfg.encoder_dim), None, None)
    mw = MapEncoderWeights.load(cfg.policy.map_weights) if cfg.policy.map_weights else MapEncoderWeights.random(run_seed)
    aw = (AOHWeights.load(cfg.policy.weights) if cfg.policy.weights
          else AOHWeights.random(run_seed, instr_dim=cfg.encoder_dim, hidden=cfg.policy.hidden))
    return Models(HashedBagEncoder(cfg.encoder_dim), mw, aw)


@dataclass
class TourContext:
    """State that persists across the episodes of one tour."""

    scene: Scene
    tmap: TourMap
    eav: object
    provider: object
    policy: object
    models: Models
    eav_cfg: EaVConfig
    run_seed: int


def new_context(cfg: RunConfig, scene: Scene, run_seed: int, models: Optional[Models] = None) -> TourContext:
    models = models or make_models(cfg, run_seed)
    if cfg.policy.kind == "neural":
        policy = NeuralAOH(models.aoh_weights)
    else:
        policy = ScriptedOraclePolicy(scene, cfg.policy.error_rate, seed=run_seed)
    eav_cfg = make_eav_config(cfg)
    return TourContext(scene, TourMap(scene.resolution), initial_eav_state(eav_cfg), make_provider(cfg, scene, run_seed),
                       policy, models, eav_cfg, run_seed)


def run_episode(cfg: RunConfig, scene: Scene, episode: EpisodeSpec, ctx: Optional[TourContext] = None) -> EpisodeResult:
    ctx = ctx or new_context(cfg, scene, cfg.seed)
    ref = episode.reference
    instr = segment(episode.instruction, cfg.segmentation)
    n_sub = ref.n_subtasks
    phrase_subtask = [min(episode.sentence_to_subtask[min(s, len(episode.sentence_to_subtask) - 1)], n_sub - 1)
                      for s in instr.sentence_of]
    hidden = ctx.policy.initial_hidden(episode=ref, seed=derive_seed(ctx.run_seed, episode.episode_id))
    eav = ctx.eav.for_new_episode(hidden)
    state = AgentState(ref.start)
    obs = observe(scene, ref.start)
    tracker = ProgressTracker(ref.path, ref.boundaries)
    agent_path = [ref.start.position]
    actions, sel_log, k_log, ent_log, delta_log, vis_log, known_log = [], [], [], [], [], [], []
    collisions = 0
    stopped = False
    n_events = len(eav.events)
    for _ in range(cfg.step_cap):
        sel = select_phrase(instr, obs, ctx.provider, cfg.phi_lambda, cfg.logit_scale)
        gt = tracker.update(obs.pose.position)
        integrate_observation(ctx.tmap, obs)
        known_log.append(ctx.tmap.known_cell_count)
        z_map = z_instr = None
        if ctx.policy.requires_map:
            z_instr = encode_instruction(sel, instr, ctx.models.encoder)
            z_map = encode_map(crop_ego(ctx.tmap, obs.pose), ctx.models.map_weights)
        action, eav = eav_step(obs, instr, sel, ctx.policy, eav, ctx.provider, ctx.eav_cfg,
                               z_map=z_map, z_instr=z_instr, can_rollback=bool(state.pose_stack))
        sel_log.append((phrase_subtask[sel.k_star] if sel.alpha else None, gt))
        k_log.append(sel.k_star)
        vis_log.append(sorted(obs.visible_labels))
        ent_log.append(sel.entropy)
        actions.append(int(action))
        if action == Action.STOP:
            stopped = True
            eav = update_threshold(eav, TICK, ctx.eav_cfg)
            delta_log.append(eav.delta0)
            break
        state, obs = step(scene, state, action)
        collisions += state.collision_flag
        eav.a_prev = action
        eav = update_threshold(eav, TICK, ctx.eav_cfg)
        delta_log.append(eav.delta0)
        pos = state.pose.position
        if pos != agent_path[-1]:
            agent_path.append(pos)
    if not stopped:
        integrate_observation(ctx.tmap, obs)
        known_log.append(ctx.tmap.known_cell_count)
    ctx.eav = eav
    extras = {
        "k_star": k_log,
        "entropy": ent_log,
        "visible": vis_log,
        "delta0": delta_log,
        "known_cells": known_log,
        "events": [list(e) for e in eav.events[n_events:]],
        "collisions": int(collisions),
    }
    if isinstance(ctx.policy, ScriptedOraclePolicy):
        extras["injected_errors"] = hidden.errors
    return EpisodeResult(
        agent_path=agent_path,
        reference_path=list(ref.path),
        subtask_boundaries=list(ref.boundaries),
        selection_log=sel_log,
        success_radius=cfg.metrics.success_radius,
        d_th=cfg.metrics.d_th,
        scene_id=scene.id,
        episode_id=episode.episode_id,
        actions=actions,
        stopped=stopped,
        failed=not stopped,
        extras=extras,
    )


def map_digest(tmap: TourMap) -> str:
    h = hashlib.sha256()
    h.update(f"{tmap.row_off},{tmap.col_off},{tmap.occupancy.shape}".encode())
    h.update(tmap.occupancy.tobytes())
    h.update(tmap.semantics.tobytes())
    return h.hexdigest()[:16]


def run_tour(cfg: RunConfig, tour: TourSpec, run_seed: Optional[int] = None, models: Optional[Models] = None) -> TourResult:
    seed = cfg.seed if run_seed is None else run_seed
    ctx = new_context(cfg, tour.scene, derive_seed("run", seed, tour.tour_id), models)
    results, known, digests = [], [], []
    for ep in tour.episodes:
        start_digest = map_digest(ctx.tmap)
        results.append(run_episode(cfg, tour.scene, ep, ctx))
        known.append(ctx.tmap.known_cell_count)
        digests.append([start_digest, map_digest(ctx.tmap)])
    return TourResult(results, tour.scene.id, tour.tour_id,
                      extras={"known_cells": known, "map_digests": digests, "final_delta0": ctx.eav.delta0})


def run_suite(cfg: RunConfig, run_seed: Optional[int] = None, suite: Optional[list] = None) -> list:
    suite = build_suite(cfg) if suite is None else suite
    models = make_models(cfg, cfg.seed if run_seed is None else run_seed)
    return [run_tour(cfg, t, run_seed, models) for t in suite]


# ---------------------------------------------------------------- reporting

TABLE_COLUMNS = ("tl", "ne", "os", "ndtw", "sr", "spl", "tndtw")
COLUMN_TITLES = {"tl": "TL", "ne": "NE", "os": "OS", "ndtw": "nDTW", "sr": "SR", "spl": "SPL",
                 "tndtw": "t-nDTW", "cpsubt": "CPsubT", "cpsubi": "CPsubI"}
ALL_COLUMNS = METRIC_KEYS + ("tndtw",)


def summarize(tours: Sequence[TourResult], cfg: RunConfig) -> dict:
    scene_map = None
    if cfg.metrics.ne_geodesic:
        scenes = {}
        for t in build_suite(cfg):
            scenes[t.scene.id] = t.scene
        scene_map = scenes.__getitem__
    rep = build_report(tours, cfg.metrics.spl_variant, scene_map)
    return rep.to_dict()


@dataclass
class CellResult:
    label: str
    overrides: dict
    config_digest: str
    repeats: list  # per repeat: {"seed", "aggregate", "episodes", "tours"}
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)

    def finalize(self):
        for k in ALL_COLUMNS:
            vals = [r["aggregate"][k] for r in self.repeats]
            self.mean[k] = mean(vals)
            self.std[k] = float(np.std(vals))  # population std: zero for a single repeat
        return self


PRESETS = {
    "phi": [(f"Φλ = {v:.2f}", {"phi_lambda": v}) for v in (0.85, 0.75, 0.65, 0.55, 0.45)],
    "eav": [
        ("#1 off", {"eav.term1": False, "eav.term2": False}),
        ("#2 Term-I", {"eav.term1": True, "eav.term2": False}),
        ("#3 Term-II", {"eav.term1": False, "eav.term2": True}),
        ("#4 Term-I + Term-II", {"eav.term1": True, "eav.term2": True}),
    ],
    "segmentation": [
        ("Type-I", {"segmentation": "none"}),
        ("Type-II", {"segmentation": "commas"}),
        ("Type-III", {"segmentation": "conjunctions"}),
        ("Type-IV", {"segmentation": "periods"}),
    ],
    "threshold": [(f"fixed {v:.2f}", {"eav.threshold_mode": "fixed", "eav.fixed_value": v})
                  for v in (0.05, 0.10, 0.15, 0.20, 0.25)] + [("learnable", {"eav.threshold_mode": "learnable"})],
}


def _run_cell(args):
    cfg_json, overrides, r = args
    base = RunConfig.model_validate_json(cfg_json)
    cfg = base.with_updates(**overrides)
    run_seed = base.seed + 1000 * r
    tours = run_suite(cfg, run_seed)
    rep = summarize(tours, cfg)
    return {"seed": run_seed, **rep}


def run_ablation(cfg: RunConfig, cells: Sequence, repeats: Optional[int] = None, workers: Optional[int] = None) -> list:
    """Run every (label, overrides) cell ``repeats`` times; seeds are ``seed + 1000 * r``."""
    repeats = cfg.repeats if repeats is None else repeats
    workers = cfg.workers if workers is None else workers
    base_json = cfg.model_dump_json()
    tasks = [(base_json, dict(ov), r) for _, ov in cells for r in range(repeats)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            outs = list(ex.map(_run_cell, tasks))
    else:
        outs = [_run_cell(t) for t in tasks]
    results = []
    for i, (label, ov) in enumerate(cells):
        reps = outs[i * repeats:(i + 1) * repeats]
        results.append(CellResult(label, dict(ov), cfg.with_updates(**ov).digest(), reps).finalize())
    return results


def format_table(cells: Sequence[CellResult], fmt: str = "md", columns=TABLE_COLUMNS) -> str:
    head = ["Setting"] + [COLUMN_TITLES[c] for c in columns]
    rows = []
    for c in cells:
        rows.append([c.label] + [f"{c.mean[k]:.4f} ± {c.std[k]:.4f}" for k in columns])
    if fmt == "md":
        lines = ["| " + " | ".join(head) + " |", "|" + "|".join("---" for _ in head) + "|"]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["setting"] + [f"{k}_{s}" for k in columns for s in ("mean", "std")])
        for c in cells:
            w.writerow([c.label] + [repr(v) for k in columns for v in (c.mean[k], c.std[k])])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps([cell_to_dict(c) for c in cells], indent=2, sort_keys=True) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def cell_to_dict(c: CellResult) -> dict:
    return {"label": c.label, "overrides": c.overrides, "config_digest": c.config_digest,
            "mean": c.mean, "std": c.std, "repeats": [{"seed": r["seed"], "aggregate": r["aggregate"]} for r in c.repeats]}


def episode_to_dict(ep: EpisodeResult) -> dict:
    return {
        "episode_id": ep.episode_id,
        "scene_id": ep.scene_id,
        "agent_path": [list(p) for p in ep.agent_path],
        "reference_path": [list(p) for p in ep.reference_path],
        "subtask_boundaries": ep.subtask_boundaries,
        "selection_log": [list(s) for s in ep.selection_log],
        "actions": ep.actions,
        "stopped": ep.stopped,
        **ep.extras,
    }


def write_ablation(out_dir: str, cfg: RunConfig, cells: Sequence[CellResult], fmt: str = "md"):
    os.makedirs(out_dir, exist_ok=True)
    _write(os.path.join(out_dir, "config.json"), json.dumps(
        {"config": cfg.model_dump(mode="json"), "digest": cfg.digest()}, indent=2, sort_keys=True) + "\n")
    _write(os.path.join(out_dir, f"table.{fmt}"), format_table(cells, fmt))
    _write(os.path.join(out_dir, "cells.json"), format_table(cells, "json"))
    with open(os.path.join(out_dir, "episodes.jsonl"), "w") as f:
        for c in cells:
            for r in c.repeats:
                for e in r["episodes"]:
                    f.write(json.dumps({"cell": c.label, "seed": r["seed"], **e}, sort_keys=True) + "\n")


def _write(path, text):
    with open(path, "w") as f:
        f.write(text)
