import csv
import io
import json
import os

import pytest

from seqnav.cli import main

SMALL = ["--set", "suite.n_tours=1", "--set", "suite.episodes_per_tour=2"]


def _tree(root):
    out = {}
    for d, _, files in os.walk(root):
        for f in files:
            p = os.path.join(d, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


def test_simulate_is_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--seed", "7", "--out", str(a), *SMALL]) == 0
    assert main(["simulate", "--seed", "7", "--out", str(b), *SMALL]) == 0
    ta, tb = _tree(a), _tree(b)
    assert set(ta) >= {"config.json", "episodes.jsonl", "tours.jsonl", "metrics.json", "summary.md"}
    assert ta == tb
    assert "| SR |" in capsys.readouterr().out


def test_metrics_identical_paths_every_format(tmp_path, capsys):
    path = [[0, 0], [1, 0], [2, 0], [2, 1]]
    for name in ("agent.json", "ref.json"):
        (tmp_path / name).write_text(json.dumps(path))
    argv = ["metrics", "--agent", str(tmp_path / "agent.json"), "--reference", str(tmp_path / "ref.json")]

    capsys.readouterr()
    assert main([*argv, "--format", "json"]) == 0
    row = json.loads(capsys.readouterr().out)[0]
    assert row["ndtw"] == 1.0 and row["sr"] == 1.0 and row["ne"] == 0.0

    assert main([*argv, "--format", "csv"]) == 0
    row = next(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert float(row["ndtw"]) == 1.0

    assert main([*argv, "--format", "md"]) == 0
    lines = capsys.readouterr().out.splitlines()
    head = [c.strip() for c in lines[0].strip("|").split("|")]
    vals = [c.strip() for c in lines[2].strip("|").split("|")]
    assert vals[head.index("nDTW")] == "1.000000"


def test_metrics_text_paths(tmp_path, capsys):
    (tmp_path / "a.txt").write_text("# agent\n0 0\n1,0\n")
    (tmp_path / "r.txt").write_text("0 0\n1 0\n")
    assert main(["metrics", "--agent", str(tmp_path / "a.txt"), "--reference", str(tmp_path / "r.txt"),
                 "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)[0]["ndtw"] == 1.0


def test_metrics_from_simulate_output(tmp_path, capsys):
    out = tmp_path / "sim"
    main(["simulate", "--seed", "3", "--out", str(out), "--format", "json", *SMALL])
    sim = json.loads((out / "metrics.json").read_text())["aggregate"]
    capsys.readouterr()
    assert main(["metrics", "--episodes", str(out / "episodes.jsonl"), "--format", "json"]) == 0
    row = json.loads(capsys.readouterr().out)[0]
    for k in ("ndtw", "sr", "spl", "tndtw"):
        assert row[k] == pytest.approx(sim[k], abs=1e-12)


def test_ablate_writes_table(tmp_path, capsys):
    out = tmp_path / "abl"
    assert main(["ablate", "--preset", "eav", "--repeats", "1", "--out", str(out), *SMALL]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0].startswith("| Setting | TL | NE | OS | nDTW | SR | SPL | t-nDTW |")
    assert len(text.strip().splitlines()) == 2 + 4
    assert any(f.endswith(".md") for f in os.listdir(out))


def test_unknown_preset(capsys):
    assert main(["ablate", "--preset", "nope", *SMALL]) == 2
    assert "unknown preset" in capsys.readouterr().err


def test_encode_check_passes(capsys):
    assert main(["encode-check", "--format", "json"]) == 0
    row = json.loads(capsys.readouterr().out)[0]
    assert row["output_shape"] == "128x4x4" and row["crop_shape"] == "14x64x64"
    assert row["zero_weights_max_abs"] == 0.0


def test_gen_scene(tmp_path, capsys):
    assert main(["gen-scene", "--seed", "4", "--out", str(tmp_path), "--format", "json"]) == 0
    row = json.loads(capsys.readouterr().out)[0]
    assert (tmp_path / f"{row['scene_id']}.json").exists()
    assert row["scene_id"].startswith("synth-4-")


def test_bad_config_exits_2_with_field_path(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"eav": {"init": 3.0}}))
    assert main(["simulate", "--config", str(p)]) == 2
    err = capsys.readouterr().err
    assert err.startswith("seqnav: config error: eav.init:")
    assert main(["simulate", "--set", "scene.bogus=1"]) == 2
    assert "scene.bogus" in capsys.readouterr().err


def test_bad_set_syntax(capsys):
    assert main(["simulate", "--set", "noequals"]) == 2


def test_stitch_offline(tmp_path, capsys):
    out = tmp_path / "st"
    assert main(["stitch", "--out", str(out), "--format", "json", *SMALL]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert sum(r["subtask_count"] for r in rows) == 2
    assert all(r["provenance"] == "offline" for r in rows)
    assert (out / "tours.jsonl").exists()


def test_stitch_replay_needs_cassette(capsys):
    assert main(["stitch", "--set", "llm_mode=replay", *SMALL]) == 2
    assert "--cassette" in capsys.readouterr().err


def test_missing_file_exits_1(tmp_path, capsys):
    assert main(["metrics", "--agent", str(tmp_path / "x"), "--reference", str(tmp_path / "y")]) == 1
