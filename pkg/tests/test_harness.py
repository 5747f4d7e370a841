import json

import pytest

from seqnav.config import RunConfig
from seqnav.harness import (
    PRESETS, build_suite, episode_to_dict, format_table, map_digest, new_context, run_ablation,
    run_episode, run_suite, run_tour, suite_from_tour_file, summarize,
)
from seqnav.mapping import TourMap
from seqnav.metrics import ndtw, tndtw
from seqnav.tours import EpisodeRecord, stitch_trajectories, write_tours


def small(**kw):
    base = {"seed": 1, "suite": {"n_tours": 2, "episodes_per_tour": 2}, "repeats": 1}
    cfg = RunConfig.model_validate(base)
    return cfg.with_updates(**kw) if kw else cfg


def test_suite_is_deterministic():
    cfg = small()
    a, b = build_suite(cfg), build_suite(cfg.model_copy())
    assert [t.episodes[0].reference.path for t in a] == [t.episodes[0].reference.path for t in b]


def test_episodes_in_a_tour_are_contiguous():
    for tour in build_suite(small()):
        for e1, e2 in zip(tour.episodes, tour.episodes[1:]):
            assert e1.reference.path[-1] == e2.reference.path[0]


def test_perfect_policy_succeeds():
    cfg = small(**{"provider.noise_sigma": 0.0})
    for tour in run_suite(cfg):
        for ep in tour.episodes:
            assert ep.stopped and not ep.failed
            assert summarize([tour], cfg)["aggregate"]["sr"] == 1.0


def test_step_cap_zero_fails_immediately():
    cfg = small(step_cap=0)
    tour = build_suite(cfg)[0]
    ep = run_episode(cfg, tour.scene, tour.episodes[0])
    assert ep.failed and not ep.stopped and ep.actions == [] and ep.agent_path == [ep.reference_path[0]]


def test_episode_is_reproducible():
    cfg = small(**{"policy.error_rate": 0.3})
    tour = build_suite(cfg)[0]
    a = episode_to_dict(run_episode(cfg, tour.scene, tour.episodes[0]))
    b = episode_to_dict(run_episode(cfg, tour.scene, tour.episodes[0]))
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_single_episode_tour_tndtw_equals_ndtw():
    cfg = small(**{"suite.episodes_per_tour": 1, "policy.error_rate": 0.3})
    tr = run_suite(cfg)[0]
    ep = tr.episodes[0]
    assert tndtw(tr) == ndtw(ep.reference_path, ep.agent_path)


def test_map_handed_over_between_episodes():
    cfg = small(**{"suite.episodes_per_tour": 3})
    tr = run_tour(cfg, build_suite(cfg)[0])
    digests = tr.extras["map_digests"]
    assert digests[0][0] == map_digest(TourMap())
    assert digests[2][0] == digests[1][1] and digests[1][0] == digests[0][1]
    assert tr.extras["known_cells"] == sorted(tr.extras["known_cells"])


def test_neural_policy_runs():
    cfg = small(**{"policy.kind": "neural", "step_cap": 5, "suite.episodes_per_tour": 1})
    tr = run_suite(cfg)[0]
    ep = tr.episodes[0]
    assert len(ep.actions) <= 5 and all(0 <= a <= 4 for a in ep.actions)


def test_remote_provider_needs_endpoint(monkeypatch):
    monkeypatch.delenv("SEQNAV_EMBED_URL", raising=False)
    cfg = small(**{"provider.kind": "remote"})
    with pytest.raises(RuntimeError, match="SEQNAV_EMBED_URL"):
        new_context(cfg, build_suite(cfg)[0].scene, 0)


def test_ablation_single_repeat_has_zero_std():
    cfg = small(**{"suite.n_tours": 1, "suite.episodes_per_tour": 1})
    cells = run_ablation(cfg, PRESETS["eav"][:2], repeats=1)
    assert all(v == 0.0 for c in cells for v in c.std.values())
    assert [c.label for c in cells] == ["#1 off", "#2 Term-I"]


def test_table_layouts():
    cfg = small(**{"suite.n_tours": 1, "suite.episodes_per_tour": 1})
    cells = run_ablation(cfg, PRESETS["phi"], repeats=1)
    md = format_table(cells, "md").splitlines()
    assert md[0] == "| Setting | TL | NE | OS | nDTW | SR | SPL | t-nDTW |"
    assert len(md) == 2 + 5
    assert format_table(cells, "csv").splitlines()[0].startswith("setting,tl_mean,tl_std")
    assert len(json.loads(format_table(cells, "json"))) == 5


def test_presets_shape():
    assert len(PRESETS["phi"]) == 5 and len(PRESETS["eav"]) == 4 and len(PRESETS["segmentation"]) == 4
    assert len(PRESETS["threshold"]) == 6


def test_suite_from_tour_file(tmp_path):
    cfg = small()
    tour = build_suite(cfg)[0]
    recs = []
    for ep in tour.episodes:
        ref = ep.reference
        recs.append(EpisodeRecord(ep.episode_id, tour.scene.id, ref.path, ep.instruction, [],
                                  goals=ref.goals, start_heading=ref.start.heading))
    path = str(tmp_path / "tours.jsonl")
    write_tours(path, stitch_trajectories(recs))
    suite = suite_from_tour_file(path, cfg)
    assert len(suite) == 1 and len(suite[0].episodes) == 1
    spec = suite[0].episodes[0]
    assert spec.reference.n_subtasks == 2
    assert len(spec.reference.path) == sum(len(e.reference.path) for e in tour.episodes) - 1
    ep = run_episode(cfg, suite[0].scene, spec)
    assert ep.subtask_boundaries[-1] == len(ep.reference_path) - 1
