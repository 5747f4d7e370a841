import json
import os
import shutil

import httpx
import numpy as np
import pytest

from oracles import best_chaining
from seqnav.instruction import segment
from seqnav.tours import (
    EpisodeRecord, LLMError, RemoteLLMClient, TourFileError, TourRecord, concat_instructions_offline, llava_enrich,
    llm_concat, parse_scene_id, read_tours, stitch_trajectories, synthesize_instruction, verify_adjacency,
    write_tours,
)

CASSETTE = os.path.join(os.path.dirname(__file__), "fixtures", "llm_cassette.json")

HALLWAY_A = ("As you walk down the hallway, turn right and look for a doorway with a mirror on it. As you walk past "
             "the stairs, turn right and continue down the hallway. Walk past the couch and stop.")
HALLWAY_B = ("As you walk past the couch, turn right and continue through the hallway. As you walk past the table "
             "and chairs, you will come across a large window. Stop in front of the window.")
GLASS_DOORS = ("Walk through the sliding glass doors and turn left. Walk into the hallway and turn right. Walk into "
               "the bedroom and stop.")
FRAMES = ["f000.png", "f001.png", "f002.png"]


def rec(i, start, end, scene="s", text=None):
    return EpisodeRecord(f"e{i:02d}", scene, [start, end], text or f"Go to spot {i}.", [])


# ---------------------------------------------------------------- stitching


def test_adjacent_pair_becomes_one_tour():
    tours = stitch_trajectories([rec(0, (0, 0), (1, 1)), rec(1, (1, 1.05), (3, 3))], tol=0.25)
    assert [t.episode_ids for t in tours] == [["e00", "e01"]]
    assert tours[0].subtask_count == 2


def test_no_adjacency_gives_singletons():
    tours = stitch_trajectories([rec(0, (0, 0), (1, 1)), rec(1, (5, 5), (6, 6))], tol=0.25)
    assert [t.episode_ids for t in tours] == [["e00"], ["e01"]]


def test_scenes_never_mix():
    tours = stitch_trajectories([rec(0, (0, 0), (1, 1), "a"), rec(1, (1, 1), (2, 2), "b")], tol=0.25)
    assert sorted(len(t.episode_ids) for t in tours) == [1, 1]


def test_max_chain_caps_length():
    recs = [rec(i, (i, 0), (i + 1, 0)) for i in range(5)]
    tours = stitch_trajectories(recs, tol=0.1, max_chain=2)
    assert [t.episode_ids for t in tours] == [["e00", "e01"], ["e02", "e03"], ["e04"]]


def test_stitching_parameters_validated():
    with pytest.raises(ValueError):
        stitch_trajectories([], tol=0)
    with pytest.raises(ValueError):
        stitch_trajectories([], max_chain=0)


def test_stitching_is_deterministic():
    recs = [rec(i, (i % 3, 0), ((i + 1) % 3, 0)) for i in range(6)]
    a = [t.to_dict() for t in stitch_trajectories(recs)]
    b = [t.to_dict() for t in stitch_trajectories(list(reversed(recs)))]
    assert a == b


def _random_records(rng, n):
    lattice = [(x * 0.5, y * 0.5) for x in range(3) for y in range(2)]
    out = []
    for i in range(n):
        s = lattice[rng.integers(len(lattice))]
        e = lattice[rng.integers(len(lattice))]
        jitter = rng.uniform(-0.08, 0.08, 2)
        out.append(rec(i, (s[0] + jitter[0], s[1] + jitter[1]), e))
    return out


@pytest.mark.parametrize("seed", range(25))
def test_greedy_matches_exhaustive_chaining(seed):
    rng = np.random.default_rng(seed)
    recs = _random_records(rng, int(rng.integers(1, 6)))
    max_chain = int(rng.integers(1, 5))
    got = [t.episode_ids for t in stitch_trajectories(recs, tol=0.25, max_chain=max_chain)]
    assert got == best_chaining(recs, 0.25, max_chain)


# ------------------------------------------------------------ concatenation


def test_offline_concat_rule():
    assert concat_instructions_offline("Go left.", "Stop at the door.") == "Go left. Then, stop at the door."


def test_offline_concat_normalizes_whitespace():
    assert concat_instructions_offline("  Go   left ", "\tStop  at the door.") == "Go left. Then, stop at the door."


def test_offline_concat_rejects_empty():
    with pytest.raises(ValueError):
        concat_instructions_offline("  ", "Stop.")


def test_stitched_phrase_counts_add_up():
    recs = [rec(0, (0, 0), (1, 1), text="Walk to the sofa. Stop."), rec(1, (1, 1), (2, 2), text="Go to the bed.")]
    t = stitch_trajectories(recs)[0]
    assert len(segment(t.stitched_instruction).phrases) == 3


# ------------------------------------------------------------- LLM service


def _answers():
    with open(CASSETTE) as f:
        return [v["response"] for v in json.load(f)["interactions"].values()]


def test_concat_replayed_from_recording():
    client = RemoteLLMClient(mode="replay", cassette=CASSETTE)
    g = llm_concat(client, HALLWAY_A, HALLWAY_B)
    assert g.provenance == "llm"
    assert g.text.startswith("As you walk down the hallway") and g.text.endswith("a large window and wait.")
    assert g.text in _answers()
    assert client.audit[-1][1] == "replay"


def test_enrich_replayed_from_recording():
    client = RemoteLLMClient(mode="replay", cassette=CASSETTE)
    g = llava_enrich(client, GLASS_DOORS, FRAMES)
    assert g.provenance == "llm"
    assert "which separate the living room from the outdoor patio" in g.text


def test_replay_miss_is_an_error():
    client = RemoteLLMClient(mode="replay", cassette=CASSETTE)
    with pytest.raises(LLMError):
        client.complete("not recorded")


def test_service_down_falls_back_offline():
    def down(request):
        raise httpx.ConnectError("refused", request=request)

    client = RemoteLLMClient("http://llm.invalid", transport=httpx.MockTransport(down), retries=1)
    g = llm_concat(client, "Go left.", "Stop at the door.")
    assert (g.text, g.provenance) == ("Go left. Then, stop at the door.", "offline")
    assert g.error


def test_short_response_rejected():
    def short(request):
        return httpx.Response(200, json={"choices": [{"message": {"content": "Go."}}]})

    client = RemoteLLMClient("http://llm.invalid", transport=httpx.MockTransport(short))
    g = llm_concat(client, "Go left.", "Stop at the door.")
    assert g.provenance == "offline" and "longer" in g.error


def test_no_client_is_offline():
    assert llm_concat(None, "Go left.", "Stop.").provenance == "offline"
    assert llava_enrich(None, "Go left.", FRAMES).text == "Go left."


def test_enrich_needs_frames():
    with pytest.raises(ValueError):
        llava_enrich(None, "Go left.", [])


def test_enrich_failure_keeps_phrase():
    def bad(request):
        return httpx.Response(500)

    client = RemoteLLMClient("http://llm.invalid", transport=httpx.MockTransport(bad), retries=0)
    g = llava_enrich(client, "Go left.", FRAMES)
    assert (g.text, g.provenance) == ("Go left.", "offline")


def test_record_then_replay(tmp_path):
    path = str(tmp_path / "c.json")
    shutil.copy(CASSETTE, path)

    def echo(request):
        body = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "ECHO " + body["messages"][0]["content"]}}]})

    RemoteLLMClient("http://llm.invalid", mode="record", cassette=path, transport=httpx.MockTransport(echo)).complete("hi")
    assert RemoteLLMClient(mode="replay", cassette=path).complete("hi") == "ECHO hi"


def test_client_mode_validation():
    with pytest.raises(ValueError):
        RemoteLLMClient(mode="replay")
    with pytest.raises(ValueError):
        RemoteLLMClient(mode="bogus")


# ---------------------------------------------------------------- tour files


def _tours():
    recs = [rec(0, (0, 0), (1, 1)), rec(1, (1, 1), (2, 2)), rec(2, (7, 7), (8, 8))]
    return stitch_trajectories(recs)


def test_tour_file_round_trip(tmp_path):
    path = str(tmp_path / "t.jsonl")
    tours = _tours()
    write_tours(path, tours)
    assert read_tours(path) == tours
    assert all(verify_adjacency(t, 0.25) for t in read_tours(path))


def test_unknown_schema_version(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text(json.dumps({"format": "seqnav-tour/9", **_tours()[0].to_dict()}) + "\n")
    with pytest.raises(TourFileError, match="seqnav-tour/9"):
        read_tours(str(path))


def test_truncated_final_line(tmp_path):
    path = tmp_path / "t.jsonl"
    write_tours(str(path), _tours())
    text = path.read_text()
    path.write_text(text[:-25])
    with pytest.raises(TourFileError, match="line 2"):
        read_tours(str(path))


def test_bad_record_fields(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text(json.dumps({"format": "seqnav-tour/1", "id": "x"}) + "\n")
    with pytest.raises(TourFileError, match="line 1"):
        read_tours(str(path))


def test_tour_record_dict_round_trip():
    t = _tours()[0]
    assert TourRecord.from_dict(t.to_dict()) == t


# ----------------------------------------------------------------- helpers


def test_synthesized_instruction_has_one_sentence_per_goal():
    text = synthesize_instruction(["sofa", "bed", "lamp"], 4)
    assert len(segment(text).phrases) == 3
    assert synthesize_instruction(["sofa"], 4) == synthesize_instruction(["sofa"], 4)


def test_parse_scene_id():
    assert parse_scene_id("synth-12-r4-l8") == (12, 4, 8)
    with pytest.raises(ValueError):
        parse_scene_id("stair-3")
