import json
import subprocess
import sys

import pytest

import toyworld
from fudd.classifier import load_table
from fudd.cli import main
from fudd.gateway import PairCache
from fudd.pipeline import read_report


@pytest.fixture
def config(tmp_path):
    toyworld.write_world(tmp_path)
    cfg = {
        "manifest": "manifest.json",
        "cache_dir": "cache",
        "text_embedder": {"kind": "lookup", "path": "texts.emb"},
        "fixtures": "fixtures.json",
        "experiment": {"k": 2, "ks": [1, 2, 3]},
        "output": {"dir": "out"},
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg), "utf-8")
    return path


def write_config(path, **changes):
    cfg = json.loads(path.read_text())
    for key, value in changes.items():
        if isinstance(value, dict):
            cfg.setdefault(key, {}).update(value)
        else:
            cfg[key] = value
    path.write_text(json.dumps(cfg))


def test_embed_classes_is_sorted_and_reproducible(config, capsys):
    out = config.parent / "out" / "classes.single_template.emb"
    assert main(["embed-classes", "--config", str(config)]) == 0
    first = out.read_bytes()
    assert main(["embed-classes", "--config", str(config)]) == 0
    assert out.read_bytes() == first
    t = load_table(out)
    assert t.class_ids == ("albatross_bf", "albatross_ls", "wren")
    assert "wrote 3 class embeddings" in capsys.readouterr().out


def test_generate_dry_run_then_restricted(config, capsys):
    assert main(["generate", "--config", str(config), "--k", "2", "--dry-run"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["backend_calls"] == 0 and summary["unique_pairs"] == 2
    assert PairCache(config.parent / "cache").keys() == []

    assert main(["generate", "--config", str(config), "--k", "2", "--cache-mode", "restricted"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["backend_calls"] == 2 and summary["cache_mode"] == "restricted"
    assert PairCache(config.parent / "cache").mode == "restricted"


def test_eval_writes_report_and_traces(config, tmp_path, capsys):
    report, traces = tmp_path / "r.json", tmp_path / "t.jsonl"
    assert main(["eval", "--config", str(config), "--method", "fudd", "--k", "3",
                 "--output", str(report), "--traces", str(traces)]) == 0
    r = read_report(report)
    assert r.accuracy == 1.0 and r.k == 3 and r.method == "fudd"
    assert len(traces.read_text().splitlines()) == 3
    assert "fudd" in capsys.readouterr().out

    assert main(["eval", "--config", str(config), "--method", "single_template", "--output", str(report)]) == 0
    assert read_report(report).accuracy == pytest.approx(2 / 3)


def test_sweep_k_writes_plot_data(config):
    assert main(["sweep-k", "--config", str(config), "--ks", "1,2,3"]) == 0
    rows = (config.parent / "out" / "accuracy_vs_k.tsv").read_text().splitlines()
    assert rows[0] == "k\taccuracy" and len(rows) == 4
    assert [r.split("\t")[0] for r in rows[1:]] == ["1", "2", "3"]
    for k in (1, 2, 3):
        assert (config.parent / "out" / f"report.fudd.k{k}.json").exists()


def test_ablate(config, capsys):
    assert main(["ablate", "--config", str(config), "--k", "2"]) == 0
    out = config.parent / "out"
    diff = read_report(out / "ablation.differential.k2.json")
    non = read_report(out / "ablation.non_differential.k2.json")
    assert diff.accuracy > non.accuracy


def test_estimate_cost(capsys):
    assert main(["estimate-cost", "--queries", "1000"]) == 0
    assert "$0.78" in capsys.readouterr().out
    assert main(["estimate-cost", "--classes", "1000"]) == 0
    assert "499500 queries" in capsys.readouterr().out


def test_unknown_config_key_exits_2(config, capsys):
    write_config(config, experiment={"kay": 3})
    assert main(["eval", "--config", str(config)]) == 2
    assert "experiment.kay" in capsys.readouterr().err


def test_missing_manifest_exits_3(config):
    write_config(config, manifest="nowhere.json")
    assert main(["eval", "--config", str(config)]) == 3


def test_backend_failure_exits_4(config, tmp_path):
    (tmp_path / "empty.json").write_text("{}")
    write_config(config, fixtures="empty.json")
    assert main(["generate", "--config", str(config), "--k", "2"]) == 4


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "fudd.cli", "estimate-cost"], capture_output=True, text=True)
    assert proc.returncode == 0 and "$0.78" in proc.stdout
