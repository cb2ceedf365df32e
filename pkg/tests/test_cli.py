"""End-to-end command-line tests on a deliberately tiny pipeline."""

import io
import json
from types import SimpleNamespace

import pytest

from convofeat.cli import main_dispatch

TINY = {
    "seed": 3,
    "n_dialogues": 24,
    "n_topics": 3,
    "n_personas": 4,
    "turns": 8,
    "n_features": 8,
    "embed_dim": 16,
    "n_filters": 16,
    "enc_dim": 24,
    "hidden": 24,
    "max_len": 16,
    "n_pairs": 200,
    "n_valid_pairs": 60,
    "max_epochs": 3,
    "gen_max_epochs": 2,
    "patience": 10,
    "lr": 3e-3,
    "k": 2,
    "rollout_len": 6,
    "agg_iters": 20,
    "min_turns": 4,
}


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "tiny.json"
    config.write_text(json.dumps(TINY), encoding="utf-8")
    corpus = root / "corpus.jsonl"
    assert main_dispatch(["synth", "--config", str(config), "--out", str(corpus)]) == 0
    return SimpleNamespace(root=root, config=str(config), corpus=str(corpus))


@pytest.fixture(scope="module")
def topic_ckpt(ws):
    out = ws.root / "topic_ext"
    rc = main_dispatch([
        "train-extractor", "--config", ws.config, "--kind", "topic",
        "--data", ws.corpus, "--out", str(out),
    ])
    assert rc == 0
    return str(out)


@pytest.fixture(scope="module")
def gen_ckpt(ws, topic_ckpt):
    out = ws.root / "gen_t"
    rc = main_dispatch([
        "train-generator", "--config", ws.config, "--variant", "t",
        "--extractors", topic_ckpt, "--data", ws.corpus, "--out", str(out),
    ])
    assert rc == 0
    return str(out)


# --- argument handling --------------------------------------------------


def test_no_args_is_usage_error(capsys):
    assert main_dispatch([]) == 2
    capsys.readouterr()


def test_unknown_command_is_usage_error(capsys):
    assert main_dispatch(["frobnicate"]) == 2
    capsys.readouterr()


def test_missing_required_flag_is_usage_error(capsys):
    assert main_dispatch(["synth"]) == 2
    capsys.readouterr()


def test_help_exits_clean(capsys):
    assert main_dispatch(["--help"]) == 0
    assert "synth" in capsys.readouterr().out


def test_unknown_config_key_rejected(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_dialogues": 4, "learning_rate": 1.0}), encoding="utf-8")
    rc = main_dispatch(["synth", "--config", str(bad), "--out", str(tmp_path / "c.jsonl")])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("error:") and "learning_rate" in err


def test_flag_beats_config_file(ws, tmp_path, capsys):
    out = tmp_path / "six.jsonl"
    rc = main_dispatch(["synth", "--config", ws.config, "--n-dialogues", "6",
                        "--out", str(out)])
    assert rc == 0
    assert len(out.read_text(encoding="utf-8").splitlines()) == 6
    capsys.readouterr()


def test_env_seed_fallback(tmp_path, monkeypatch, capsys):
    a, b, c = (tmp_path / n for n in ("a.jsonl", "b.jsonl", "c.jsonl"))
    monkeypatch.setenv("COCON_SEED", "41")
    assert main_dispatch(["synth", "--n-dialogues", "6", "--out", str(a)]) == 0
    monkeypatch.setenv("COCON_SEED", "42")
    assert main_dispatch(["synth", "--n-dialogues", "6", "--out", str(b)]) == 0
    # explicit --seed wins over the environment
    assert main_dispatch(["synth", "--n-dialogues", "6", "--seed", "41",
                          "--out", str(c)]) == 0
    assert a.read_bytes() != b.read_bytes()
    assert a.read_bytes() == c.read_bytes()
    capsys.readouterr()


# --- synth ----------------------------------------------------------------


def test_synth_output_and_manifest(ws):
    lines = open(ws.corpus, encoding="utf-8").read().splitlines()
    assert len(lines) == TINY["n_dialogues"]
    manifest = json.loads(open(ws.corpus + ".manifest.json", encoding="utf-8").read())
    assert manifest["command"] == "synth"
    assert manifest["config"]["n_dialogues"] == TINY["n_dialogues"]
    assert ws.corpus in manifest["outputs"]


def test_synth_rerun_is_byte_identical(ws, tmp_path, capsys):
    out = tmp_path / "again.jsonl"
    assert main_dispatch(["synth", "--config", ws.config, "--out", str(out)]) == 0
    assert out.read_bytes() == open(ws.corpus, "rb").read()
    m1 = json.loads(open(ws.corpus + ".manifest.json", encoding="utf-8").read())
    m2 = json.loads((tmp_path / "again.jsonl.manifest.json").read_text(encoding="utf-8"))
    assert list(m1["outputs"].values()) == list(m2["outputs"].values())
    capsys.readouterr()


# --- training commands ------------------------------------------------------


def test_train_extractor_artifacts(ws, topic_ckpt, capsys):
    from pathlib import Path

    out = Path(topic_ckpt)
    history = json.loads((out / "history.json").read_text(encoding="utf-8"))
    assert 0.0 <= history["valid_accuracy"] <= 1.0
    assert len(history["history"]) <= TINY["max_epochs"]
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["extra"]["valid_accuracy"] == history["valid_accuracy"]
    assert ws.corpus in manifest["inputs"]


def test_train_generator_needs_matching_extractors(ws, topic_ckpt, tmp_path, capsys):
    rc = main_dispatch([
        "train-generator", "--config", ws.config, "--variant", "tp",
        "--extractors", topic_ckpt, "--data", ws.corpus,
        "--out", str(tmp_path / "gen"),
    ])
    assert rc == 1
    assert "topic,persona" in capsys.readouterr().err


def test_train_generator_artifacts(gen_ckpt):
    from pathlib import Path

    history = json.loads((Path(gen_ckpt) / "history.json").read_text(encoding="utf-8"))
    last = history["history"][-1]
    assert {"train_mle", "valid_mle", "valid_total", "tau"} <= set(last)


def test_fit_agg_rewrites_checkpoint(ws, gen_ckpt, tmp_path, capsys):
    out = tmp_path / "gen_refit"
    rc = main_dispatch(["fit-agg", "--config", ws.config, "--model", gen_ckpt,
                        "--data", ws.corpus, "--out", str(out)])
    assert rc == 0
    assert "aggregation weights" in capsys.readouterr().out
    from convofeat.generator import AggWeights

    payload = json.loads((out / "config.json").read_text(encoding="utf-8"))
    agg = AggWeights.from_dict(payload["agg"]["topic"])
    assert sum(agg.weights) == pytest.approx(1.0, abs=1e-6)


def test_missing_checkpoint_reports_error(ws, tmp_path, capsys):
    rc = main_dispatch(["generate", "--model", str(tmp_path / "nope"),
                        "--context", ws.corpus, "--out", str(tmp_path / "o.jsonl")])
    assert rc == 1
    assert "checkpoint not found" in capsys.readouterr().err


# --- inference commands -------------------------------------------------


def test_generate_writes_responses(ws, gen_ckpt, tmp_path, capsys):
    out = tmp_path / "resp.jsonl"
    rc = main_dispatch(["generate", "--model", gen_ckpt,
                        "--context", ws.corpus, "--out", str(out)])
    assert rc == 0
    records = [json.loads(l) for l in out.read_text(encoding="utf-8").splitlines()]
    assert len(records) == TINY["n_dialogues"]
    assert all(r["turns"][-1].get("generated") for r in records)
    assert all("features" in r["diagnostics"][0] for r in records)
    capsys.readouterr()


def test_session_roll_forward(ws, gen_ckpt, tmp_path, capsys):
    out = tmp_path / "sess.jsonl"
    rc = main_dispatch(["session", "--model", gen_ckpt, "--seed-turns", ws.corpus,
                        "--n-future", "2", "--toggle", "T-0=1", "--out", str(out)])
    assert rc == 0
    record = json.loads(out.read_text(encoding="utf-8").splitlines()[0])
    flags = [t.get("generated", False) for t in record["turns"]]
    assert flags[-2:] == [True, True] and not any(flags[:-2])
    capsys.readouterr()


def test_session_stdout_when_no_out(ws, gen_ckpt, capsys):
    rc = main_dispatch(["session", "--model", gen_ckpt, "--seed-turns", ws.corpus,
                        "--n-future", "1"])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == TINY["n_dialogues"]
    json.loads(lines[0])


def test_session_rejects_bad_toggle(ws, gen_ckpt, tmp_path, capsys):
    rc = main_dispatch(["session", "--model", gen_ckpt, "--seed-turns", ws.corpus,
                        "--n-future", "1", "--toggle", "T-0=0.7",
                        "--out", str(tmp_path / "s.jsonl")])
    assert rc == 1
    capsys.readouterr()


def test_chat_round_trip(gen_ckpt, monkeypatch, capsys):
    monkeypatch.setattr("sys.stdin", io.StringIO("hello there\n/features\n"))
    assert main_dispatch(["chat", "--model", gen_ckpt]) == 0
    out = capsys.readouterr().out
    assert len(out.strip().splitlines()) >= 2  # a reply plus the feature dump


# --- evaluate / analyze -------------------------------------------------


def test_evaluate_with_references(tmp_path, capsys):
    hyp = tmp_path / "hyp.txt"
    ref = tmp_path / "ref.txt"
    hyp.write_text("the cat sat on the mat\nbirds fly high above town\n", encoding="utf-8")
    ref.write_text("the cat sat on the mat\nbirds fly high above town\n", encoding="utf-8")
    out = tmp_path / "report.json"
    rc = main_dispatch(["evaluate", "--hyp", str(hyp), "--ref", str(ref),
                        "--out", str(out)])
    assert rc == 0
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["relevance"]["bleu"] == pytest.approx(100.0)
    assert "BLEU" in capsys.readouterr().out


def test_evaluate_without_references(tmp_path, capsys):
    hyp = tmp_path / "hyp.txt"
    hyp.write_text("a b c d e\nf g h i j\n", encoding="utf-8")
    out = tmp_path / "report.json"
    assert main_dispatch(["evaluate", "--hyp", str(hyp), "--out", str(out)]) == 0
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["relevance"]["bleu"] is None
    assert report["diversity"]["dist1"] > 0
    capsys.readouterr()


def test_analyze_export_tsv(ws, topic_ckpt, tmp_path, capsys):
    out = tmp_path / "features.tsv"
    rc = main_dispatch(["analyze", "export", "--model", topic_ckpt,
                        "--data", ws.corpus, "--out", str(out)])
    assert rc == 0
    header = out.read_text(encoding="utf-8").splitlines()[0].split("\t")
    assert header[0] == "id" and "T-0" in header
    capsys.readouterr()


def test_analyze_alignment_report(ws, topic_ckpt, tmp_path, capsys):
    out = tmp_path / "align.json"
    rc = main_dispatch(["analyze", "alignment", "--model", topic_ckpt,
                        "--data", ws.corpus, "--out", str(out)])
    assert rc == 0
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["best_feature"].startswith("T-")
    capsys.readouterr()


def test_analyze_toggle_requires_feature(ws, gen_ckpt, tmp_path, capsys):
    rc = main_dispatch(["analyze", "toggle", "--model", gen_ckpt,
                        "--data", ws.corpus, "--out", str(tmp_path / "t.json")])
    assert rc == 1
    assert "--feature" in capsys.readouterr().err


def test_train_extractor_rerun_matches(ws, topic_ckpt, tmp_path, capsys):
    out = tmp_path / "topic_again"
    rc = main_dispatch([
        "train-extractor", "--config", ws.config, "--kind", "topic",
        "--data", ws.corpus, "--out", str(out),
    ])
    assert rc == 0
    m1 = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    from pathlib import Path

    m2 = json.loads((Path(topic_ckpt) / "manifest.json").read_text(encoding="utf-8"))
    assert list(m1["outputs"].values()) == list(m2["outputs"].values())
    capsys.readouterr()
