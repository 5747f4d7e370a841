"""Command line entry point: simulate, stitch, metrics, ablate, encode-check, gen-scene."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, parse_config
from .harness import (
    COLUMN_TITLES, PRESETS, build_suite, episode_to_dict, format_table, run_ablation, run_suite,
    scene_spec, summarize, write_ablation,
)
from .instruction import sentences
from .mapping import MapEncoderWeights, TourMap, crop_ego, encode_map, integrate_observation
from .metrics import EpisodeResult, TourResult, build_report
from .tours import (
    EpisodeRecord, RemoteLLMClient, TourFileError, llm_concat, stitch_trajectories,
    verify_adjacency, write_tours,
)
from .world import GenerationError, dumps_scene, generate_scene, observe, traverse_poses

log = logging.getLogger("seqnav")

LLM_URL_ENV = "SEQNAV_LLM_URL"


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ output


def _fmt_value(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def render(rows: list, fmt: str) -> str:
    """A list of flat dicts as a JSON array, CSV or a markdown table."""
    if fmt == "json":
        return json.dumps(rows, indent=2, sort_keys=True) + "\n"
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        return buf.getvalue()
    if fmt == "md":
        head = [COLUMN_TITLES.get(c, c) for c in cols]
        lines = ["| " + " | ".join(head) + " |", "|" + "|".join("---" for _ in cols) + "|"]
        lines += ["| " + " | ".join(_fmt_value(r.get(c, "")) for c in cols) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise UsageError(f"unknown format {fmt!r}")


def _write(path: str, text: str):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w") as f:
        f.write(text)


def _emit(args, rows, name):
    text = render(rows, args.format)
    if args.out:
        _write(os.path.join(args.out, f"{name}.{args.format}"), text)
    sys.stdout.write(text)


# ------------------------------------------------------------------ config


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    updates = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        updates[k.strip()] = _parse_value(v.strip())
    if args.seed is not None:
        updates["seed"] = args.seed
    if updates:
        data = cfg.model_dump(mode="json")
        for path, value in updates.items():
            node = data
            keys = path.split(".")
            for k in keys[:-1]:
                if not isinstance(node.get(k), dict):
                    raise ConfigError(f"{path}: unknown section {k!r}")
                node = node[k]
            node[keys[-1]] = value
        cfg = parse_config(data)
    return cfg


def _config_doc(cfg: RunConfig) -> str:
    return json.dumps({"config": cfg.model_dump(mode="json"), "digest": cfg.digest(), "version": __version__},
                      indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    tours = run_suite(cfg)
    report = summarize(tours, cfg)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, "config.json"), _config_doc(cfg))
        with open(os.path.join(args.out, "episodes.jsonl"), "w") as f:
            for t in tours:
                for ep in t.episodes:
                    f.write(json.dumps({"tour_id": t.tour_id, **episode_to_dict(ep)}, sort_keys=True) + "\n")
        with open(os.path.join(args.out, "tours.jsonl"), "w") as f:
            for t, row in zip(tours, report["tours"]):
                f.write(json.dumps({**row, **t.extras}, sort_keys=True) + "\n")
        _write(os.path.join(args.out, "metrics.json"), json.dumps(report, indent=2, sort_keys=True) + "\n")
    _emit(args, [{"config": cfg.digest(), "episodes": len(report["episodes"]), **report["aggregate"]}], "summary")
    return 0


def _records_from_config(cfg: RunConfig) -> list:
    recs = []
    for tour in build_suite(cfg):
        for ep in tour.episodes:
            ref = ep.reference
            recs.append(EpisodeRecord(
                id=f"{tour.scene.id}/{ep.episode_id}", scene_id=tour.scene.id, reference_path=ref.path,
                instruction=ep.instruction, phrases=sentences(ep.instruction), boundaries=list(ref.boundaries),
                goals=list(ref.goals), start_heading=ref.start.heading,
            ))
    return recs


def _read_records(path: str) -> list:
    out = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(EpisodeRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError, ValueError) as e:
                raise TourFileError(f"{path}: line {n}: {e}") from None
    return out


def cmd_stitch(args) -> int:
    cfg = resolve_config(args)
    records = _read_records(args.episodes) if args.episodes else _records_from_config(cfg)
    client = None
    if cfg.llm_mode != "offline":
        if cfg.llm_mode in ("record", "replay") and not args.cassette:
            raise UsageError(f"llm_mode {cfg.llm_mode} needs --cassette")
        endpoint = os.environ.get(LLM_URL_ENV)
        if cfg.llm_mode in ("live", "record") and not endpoint:
            raise UsageError(f"llm_mode {cfg.llm_mode} needs {LLM_URL_ENV}")
        client = RemoteLLMClient(endpoint=endpoint, mode=cfg.llm_mode, cassette=args.cassette)
    sources = {}

    def concat(a, b):
        g = llm_concat(client, a, b)
        if g.error:
            log.warning("concatenation fell back to the offline join: %s", g.error)
        sources[g.text] = g.provenance
        return g.text

    tours = stitch_trajectories(records, tol=args.tol, max_chain=args.max_chain, concat=concat)
    for t in tours:
        if len(t.episodes) > 1:
            t.provenance = sources.get(t.stitched_instruction, "offline")
        if not verify_adjacency(t, args.tol):
            raise RuntimeError(f"tour {t.id} failed the adjacency re-check")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_tours(os.path.join(args.out, "tours.jsonl"), tours)
    rows = [{"tour_id": t.id, "scene_id": t.scene_id, "subtask_count": t.subtask_count,
             "phrases": len(sentences(t.stitched_instruction)), "provenance": t.provenance} for t in tours]
    _emit(args, rows, "stitch")
    return 0


def _read_path(path: str) -> list:
    with open(path) as f:
        text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = []
        for n, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            try:
                data.append([float(parts[0]), float(parts[1])])
            except (IndexError, ValueError):
                raise UsageError(f"{path}: line {n}: expected 'x y' or 'x,y'") from None
    if isinstance(data, dict):
        data = data.get("path", data.get("agent_path"))
    if not isinstance(data, list) or not data:
        raise UsageError(f"{path}: expected a non-empty list of points")
    try:
        return [(float(p[0]), float(p[1])) for p in data]
    except (TypeError, ValueError, IndexError):
        raise UsageError(f"{path}: points must be [x, y] pairs") from None


def cmd_metrics(args) -> int:
    cfg = resolve_config(args)
    m = cfg.metrics
    if args.episodes:
        tours = {}
        with open(args.episodes) as f:
            for n, line in enumerate(f, 1):
                if not line.strip():
                    continue
                d = json.loads(line)
                try:
                    ep = EpisodeResult(
                        agent_path=[tuple(p) for p in d["agent_path"]],
                        reference_path=[tuple(p) for p in d["reference_path"]],
                        subtask_boundaries=d["subtask_boundaries"],
                        selection_log=[tuple(s) for s in d["selection_log"]],
                        success_radius=m.success_radius, d_th=m.d_th, scene_id=d.get("scene_id", ""),
                        episode_id=d.get("episode_id", f"line{n}"), stopped=d.get("stopped", True),
                        failed=not d.get("stopped", True),
                    )
                except (KeyError, ValueError) as e:
                    raise UsageError(f"{args.episodes}: line {n}: {e}") from None
                tours.setdefault(d.get("tour_id", ep.episode_id), []).append(ep)
        rep = build_report([TourResult(eps, eps[0].scene_id, tid) for tid, eps in tours.items()], m.spl_variant)
        rows = [{"episodes": len(rep.episodes), **rep.aggregate}]
    else:
        if not (args.agent and args.reference):
            raise UsageError("metrics needs --episodes or both --agent and --reference")
        agent, ref = _read_path(args.agent), _read_path(args.reference)
        bounds = [int(b) for b in args.boundaries.split(",")] if args.boundaries else [len(ref) - 1]
        ep = EpisodeResult(agent, ref, bounds, [], success_radius=m.success_radius, d_th=m.d_th, stopped=True)
        rep = build_report([TourResult([ep])], m.spl_variant)
        agg = rep.aggregate
        rows = [{k: agg[k] for k in ("tl", "ne", "os", "ndtw", "sr", "spl", "cpsubt", "tndtw")}]
    _emit(args, rows, "metrics")
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    if args.preset not in PRESETS:
        raise UsageError(f"unknown preset {args.preset!r}; choose from {', '.join(sorted(PRESETS))}")
    cells = run_ablation(cfg, PRESETS[args.preset], repeats=args.repeats, workers=args.workers)
    if args.out:
        write_ablation(args.out, cfg, cells, args.format)
    sys.stdout.write(format_table(cells, args.format))
    return 0


def cmd_encode_check(args) -> int:
    cfg = resolve_config(args)
    weights = (MapEncoderWeights.load(args.weights) if args.weights
               else MapEncoderWeights.random(cfg.seed))
    weights.validate()
    scene = generate_scene(cfg.seed, scene_spec(cfg))
    tmap = TourMap()
    rng = np.random.default_rng(cfg.seed)
    free = np.argwhere(scene.occupancy == 0)
    pose = None
    for _ in range(4):
        r, c = free[int(rng.integers(len(free)))]
        path = [scene.cell_center((int(r), int(c)))]
        pose = traverse_poses(path, float(rng.integers(24)) * 15.0)[0][0]
        integrate_observation(tmap, observe(scene, pose))
    crop = crop_ego(tmap, pose)
    z = encode_map(crop, weights)
    z0 = encode_map(crop, MapEncoderWeights.zeros())
    rows = [{
        "crop_shape": f"{crop.occ.shape[0] + crop.sem.shape[0]}x{crop.occ.shape[1]}x{crop.occ.shape[2]}",
        "output_shape": "x".join(map(str, z.shape)),
        "shape_ok": z.shape == (128, 4, 4),
        "finite": bool(np.isfinite(z).all()),
        "zero_weights_max_abs": float(np.abs(z0).max()),
        "output_norm": float(np.linalg.norm(z)),
    }]
    _emit(args, rows, "encode_check")
    return 0 if rows[0]["shape_ok"] and rows[0]["finite"] and rows[0]["zero_weights_max_abs"] == 0.0 else 1


def cmd_gen_scene(args) -> int:
    cfg = resolve_config(args)
    scene = generate_scene(cfg.seed, scene_spec(cfg))
    if args.out:
        _write(os.path.join(args.out, f"{scene.id}.json"), dumps_scene(scene) + "\n")
    rows = [{"scene_id": scene.id, "rows": scene.shape[0], "cols": scene.shape[1],
             "rooms": len(scene.rooms), "landmarks": len(scene.landmarks),
             "free_cells": int((scene.occupancy == 0).sum())}]
    _emit(args, rows, "scene")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (JSON)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=("json", "csv", "md"), default="md")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="dotted config override, e.g. eav.term1=false (repeatable)")
    p = argparse.ArgumentParser(prog="seqnav", description=__doc__)
    p.add_argument("--version", action="version", version=f"seqnav {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run the configured tour suite")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("stitch", parents=[common], help="chain episodes into tours")
    s.add_argument("--episodes", help="episode records (JSONL); default: the configured synthetic suite")
    s.add_argument("--tol", type=float, default=0.25)
    s.add_argument("--max-chain", type=int, default=4)
    s.add_argument("--cassette", help="LLM record/replay cassette")
    s.set_defaults(func=cmd_stitch)

    s = sub.add_parser("metrics", parents=[common], help="metrics for stored paths")
    s.add_argument("--agent", help="agent path file (JSON list or 'x y' lines)")
    s.add_argument("--reference", help="reference path file")
    s.add_argument("--boundaries", help="comma-separated sub-task end indices into the reference")
    s.add_argument("--episodes", help="episodes.jsonl written by simulate")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("ablate", parents=[common], help="ablation sweep")
    s.add_argument("--preset", default="eav", help=f"one of: {', '.join(sorted(PRESETS))}")
    s.add_argument("--repeats", type=int)
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("encode-check", parents=[common], help="map-encoder sanity check")
    s.add_argument("--weights", help="map-encoder tensor file")
    s.set_defaults(func=cmd_encode_check)

    s = sub.add_parser("gen-scene", parents=[common], help="generate a synthetic scene")
    s.set_defaults(func=cmd_gen_scene)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"seqnav: config error: {e}", file=sys.stderr)
        return 2
    except UsageError as e:
        print(f"seqnav: {e}", file=sys.stderr)
        return 2
    except (OSError, TourFileError, GenerationError, RuntimeError, ValueError) as e:
        print(f"seqnav: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
