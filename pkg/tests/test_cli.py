import json

import numpy as np
import pytest

from cgcn.cli import main
from cgcn.config import RunConfig, config_from_dict, dump_config, load_config
from cgcn.errors import ConfigError
from cgcn.synth import synth_generate

FAST = "epochs: 1\nbatch_size: 4\ntarget_T: 16\ntemporal_kernel: 3\n"


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    # 2 per class keeps every command quick
    return synth_generate(tmp_path_factory.mktemp("data"), per_class=2, T=16, seed=4)


@pytest.fixture
def fast_cfg(tmp_path):
    p = tmp_path / "fast.yaml"
    p.write_text(FAST)
    return p


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


# configuration


def test_config_defaults_and_round_trip(tmp_path):
    cfg = RunConfig()
    assert (cfg.batch_size, cfg.lr, cfg.momentum, cfg.weight_decay) == (32, 0.1, 0.9, 1e-4)
    assert cfg.kernel == 5 and RunConfig(channels="paper").kernel == 9
    dump_config(cfg, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg


def test_config_rejects_unknown_and_invalid(tmp_path):
    with pytest.raises(ConfigError):
        config_from_dict({"epochz": 3})
    with pytest.raises(ConfigError):
        config_from_dict({"augment": {"spin": 1}})
    with pytest.raises(ConfigError):
        config_from_dict({"streams": ["J", "X"]})
    with pytest.raises(ConfigError):
        config_from_dict({"batch_size": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"mode": "dual"})
    with pytest.raises(ConfigError):
        config_from_dict({"dropout": 1.0})
    (tmp_path / "list.yaml").write_text("- 1\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.yaml")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_config_plan_preset():
    assert load_config("paper") == RunConfig(channels="paper")
    assert load_config("desk") == RunConfig()


def test_config_streams_string_and_augment():
    cfg = config_from_dict({"streams": "J,A", "augment": {"max_rotation_deg": 10}})
    assert cfg.streams == ("J", "A") and cfg.augment.active


# commands


def test_graph_validate(capsys):
    code, out, _ = run(capsys, "graph", "validate", "ntu25", "--json")
    info = json.loads(out)
    assert code == 0 and info["joints"] == 25 and info["edges"] == 24 and info["tree"]
    code, _, err = run(capsys, "graph", "validate", "nonexistent-template")
    assert code == 1 and "error" in err


def test_centrality_p3(tmp_path, capsys):
    (tmp_path / "p3.json").write_text(json.dumps({"joint_count": 3, "edges": [[0, 1], [1, 2]], "dims": 3}))
    seq = tmp_path / "s.json"
    seq.write_text(json.dumps({"template": "p3", "frames": [[[0, 0, 0], [1, 0, 0], [2, 0, 0]]]}))
    code, out, _ = run(capsys, "centrality", "compute", seq, "--json")
    assert code == 0
    s = json.loads(out)["sets"][0]
    np.testing.assert_allclose(s["J"], np.outer([2 / 3, 1, 2 / 3], [2 / 3, 1, 2 / 3]), atol=1e-12)
    np.testing.assert_allclose(s["B"], [[0, 1, 0], [1, 0, 1], [0, 1, 0]], atol=1e-12)
    np.testing.assert_allclose(s["W"], np.ones((3, 3)), atol=1e-12)


def test_centrality_per_frame_and_csv(tiny_data, tmp_path, capsys):
    from cgcn.dataio import SkeletonSequence, parse_sequence, write_sequence

    seq = parse_sequence(tiny_data / "walk_000.json")
    short = tmp_path / "five.json"
    write_sequence(SkeletonSequence(seq.frames[:5], "ntu25"), short)
    code, out, _ = run(capsys, "centrality", "compute", short, "--mode", "per_frame", "--out", tmp_path / "o", "--csv", "--json")
    assert code == 0 and json.loads(out)["sets"] == 5
    saved = json.loads((tmp_path / "o" / "centrality.json").read_text())
    assert len(saved["sets"]) == 5 and [s["frame_index"] for s in saved["sets"]] == list(range(5))
    assert len(list((tmp_path / "o").glob("*.csv"))) == 20


def test_centrality_highlight_is_sorted(tiny_data, capsys):
    code, out, _ = run(capsys, "centrality", "compute", tiny_data / "walk_001.json", "--highlight", "5", "--json")
    assert code == 0
    data = json.loads(out)
    s, h = data["sets"][0], data["highlight"][0]
    j_diag = np.diag(s["J"])
    assert [e["joint"] for e in h["J"]] == sorted(range(25), key=lambda i: -j_diag[i])[:5]
    w = np.array(s["W"])
    pairs = sorted(((i, j) for i in range(25) for j in range(i + 1, 25)), key=lambda p: -w[p])[:5]
    assert [tuple(e["pair"]) for e in h["W"]] == pairs
    vals = [e["value"] for e in h["B"]]
    assert vals == sorted(vals, reverse=True) and len(vals) == 5


def test_synth_generate_cli(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "generate", "--out", tmp_path / "s", "--per-class", "3", "--classes", "walk,bow", "--json")
    assert code == 0 and json.loads(out)["sequences"] == 6
    assert len((tmp_path / "s" / "manifest.csv").read_text().splitlines()) == 7


def test_train_one_epoch_and_repeat(tiny_data, fast_cfg, tmp_path, capsys):
    args = ["train", "--data", tiny_data, "--config", fast_cfg, "--streams", "A", "--epochs", "1", "--quiet", "--seed", "3"]
    code, out, _ = run(capsys, *args, "--out", tmp_path / "r1", "--json")
    assert code == 0 and json.loads(out)["epochs"] == 1
    rows = (tmp_path / "r1" / "report.csv").read_text().splitlines()
    assert rows[0] == "epoch,loss,top1,top5" and len(rows) == 2
    code, _, _ = run(capsys, *args, "--out", tmp_path / "r2")
    assert code == 0
    for name in ("report.csv", "report.json", "checkpoints/A.json", "config.yaml", "centrality.json"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_train_checkpoint_every(tiny_data, fast_cfg, tmp_path, capsys):
    code, _, _ = run(capsys, "train", "--data", tiny_data, "--config", fast_cfg, "--streams", "J,A", "--epochs", "2",
                     "--checkpoint-every", "1", "--out", tmp_path / "r", "--quiet")
    assert code == 0
    assert sorted(p.name for p in (tmp_path / "r" / "checkpoints").iterdir()) == [
        "A.json", "J.json", "epoch_0001", "epoch_0002"]


def test_eval_and_missing_checkpoints(tiny_data, fast_cfg, tmp_path, capsys):
    run(capsys, "train", "--data", tiny_data, "--config", fast_cfg, "--streams", "A", "--out", tmp_path / "r", "--quiet")
    code, out, _ = run(capsys, "eval", "--data", tiny_data, "--checkpoints", tmp_path / "r" / "checkpoints", "--json")
    res = json.loads(out)
    assert code == 0 and res["samples"] == 8 and 0 <= res["top1"] <= res["top5"] <= 1
    code, _, err = run(capsys, "eval", "--data", tiny_data, "--checkpoints", tmp_path / "nowhere")
    assert code == 1 and "not found" in err
    code, _, _ = run(capsys, "eval", "--data", tiny_data, "--checkpoints", tmp_path / "r" / "checkpoints", "--streams", "J")
    assert code == 1


def test_ablate_layout_and_eval_agreement(tiny_data, fast_cfg, tmp_path, capsys):
    code, out, _ = run(capsys, "ablate", "--data", tiny_data, "--config", fast_cfg, "--out", tmp_path / "ab", "--json")
    assert code == 0
    rows = json.loads(out)["rows"]
    assert [r["method"] for r in rows] == ["CGCN", "CGCN without J", "CGCN without B", "CGCN without W", "A only"]
    md = (tmp_path / "ab" / "ablation.md").read_text()
    assert sum(line.startswith("| ") for line in md.splitlines()) == 6 and "96.4" in md.split("Note:")[1]
    for r in rows:
        code, out, _ = run(capsys, "eval", "--data", tiny_data, "--checkpoints", tmp_path / "ab" / "checkpoints",
                           "--streams", ",".join(r["streams"]), "--topk", "1", "--json")
        assert code == 0 and json.loads(out)["top1"] == r["top1"]


def test_ablate_single_mode(tiny_data, fast_cfg, tmp_path, capsys):
    code, out, _ = run(capsys, "ablate", "--data", tiny_data, "--config", fast_cfg, "--mode", "single",
                       "--out", tmp_path / "ab", "--json")
    assert code == 0 and len(json.loads(out)["rows"]) == 5
    assert len(list((tmp_path / "ab" / "checkpoints").glob("*.json"))) == 5


def test_gradcheck_cli(capsys):
    code, out, _ = run(capsys, "gradcheck", "--layers", "softmax_xent", "--json")
    res = json.loads(out)
    assert code == 0 and [r["layer"] for r in res["layers"]] == ["softmax_xent"]
    code, _, _ = run(capsys, "gradcheck", "--layers", "softmax_xent", "--negate", "softmax_xent")
    assert code == 1


@pytest.mark.parametrize("argv", [
    ["train", "--data", "x", "--out", "y", "--bogus"],
    ["gradcheck", "--layers", "nope"],
    ["centrality", "compute"],
    ["frobnicate"],
])
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_help_lists_flags(capsys):
    with pytest.raises(SystemExit):
        main(["train", "--help"])
    out = capsys.readouterr().out
    for flag in ("--data", "--out", "--config", "--streams", "--epochs", "--seed", "--json", "--checkpoint-every"):
        assert flag in out
