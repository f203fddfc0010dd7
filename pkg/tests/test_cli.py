"""End-to-end CLI runs on tiny models: every subcommand, exit codes, and
seeded determinism of the emitted artifacts."""

import json

import pytest

from pmlm.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny corpus plus one bidirectional and one causal checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus.txt"
    assert main(["make-corpus", "--out", str(corpus), "--bytes", "3000", "--seed", "0"]) == 0
    small = [
        "--steps", "30", "--batch-size", "4", "--seed", "5", "--max-len", "16",
    ]
    config = root / "small.json"
    from pmlm.training import preset

    upmlm_cfg = preset(
        "upmlm", str(corpus), str(root / "upmlm.ckpt"),
        layers=1, heads=2, hidden_size=16, intermediate_size=32, max_len=16,
        steps=30, batch_size=4, seed=5,
    )
    config.write_text(json.dumps(upmlm_cfg.to_dict()), encoding="utf-8")
    assert main(["train", "--config", str(config), "--quiet"]) == 0
    assert (
        main(
            ["train", "--preset", "gpt-like", "--corpus", str(corpus),
             "--checkpoint", str(root / "gpt.ckpt"), *small, "--quiet"]
        )
        == 0
    )
    return root


def test_train_requires_config_or_preset():
    assert main(["train"]) == 2


def test_generate_random_order_with_trace(workspace, capsys):
    out = workspace / "gen.json"
    trace = workspace / "trace.jsonl"
    code = main([
        "generate", "--checkpoint", str(workspace / "upmlm.ckpt"),
        "--length", "8", "--order", "random", "--seed", "1",
        "--trace", str(trace), "--out", str(out),
    ])
    assert code == 0
    lines = trace.read_text(encoding="utf-8").strip().splitlines()
    assert len(lines) == 8
    rec = json.loads(lines[0])
    assert {"step", "position", "token", "snapshot_ids", "snapshot", "token_text"} <= set(rec)
    payload = json.loads(out.read_text(encoding="utf-8"))
    assert len(payload["tokens"]) == 8
    assert sorted(payload["order"]) == list(range(1, 9))


def test_generate_is_deterministic_per_seed(workspace):
    outs = []
    for tag in ("a", "b"):
        out = workspace / f"det_{tag}.json"
        assert main([
            "generate", "--checkpoint", str(workspace / "upmlm.ckpt"),
            "--length", "10", "--order", "random", "--seed", "42",
            "--sampler", "top_k", "--top-k", "5", "--out", str(out),
        ]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_generate_with_anchor_file(workspace):
    anchors = workspace / "anchors.txt"
    anchors.write_text("1:t\n4:a\n", encoding="utf-8")
    out = workspace / "anchored.json"
    assert main([
        "generate", "--checkpoint", str(workspace / "upmlm.ckpt"),
        "--length", "6", "--order", "ltr", "--seed", "0",
        "--anchors", str(anchors), "--out", str(out),
    ]) == 0
    payload = json.loads(out.read_text(encoding="utf-8"))
    assert payload["text"][0] == "t"
    assert payload["text"][3] == "a"


def test_malformed_anchor_line_reports_line_number(workspace, capsys):
    anchors = workspace / "bad_anchors.txt"
    anchors.write_text("1:t\nnope\n", encoding="utf-8")
    code = main([
        "generate", "--checkpoint", str(workspace / "upmlm.ckpt"),
        "--length", "6", "--order", "ltr", "--anchors", str(anchors),
    ])
    assert code == 2
    err = capsys.readouterr().err
    assert ":2:" in err


def test_anchor_token_must_be_in_vocabulary(workspace, capsys):
    anchors = workspace / "oov.txt"
    anchors.write_text("2:Z\n", encoding="utf-8")
    assert main([
        "generate", "--checkpoint", str(workspace / "upmlm.ckpt"),
        "--length", "4", "--order", "ltr", "--anchors", str(anchors),
    ]) == 2
    assert "vocabulary" in capsys.readouterr().err


def test_generate_explicit_order_file(workspace):
    order = workspace / "order.txt"
    order.write_text("3 1 2 4\n", encoding="utf-8")
    out = workspace / "ordered.json"
    assert main([
        "generate", "--checkpoint", str(workspace / "upmlm.ckpt"),
        "--length", "4", "--order", "file", "--order-file", str(order),
        "--seed", "0", "--out", str(out),
    ]) == 0
    payload = json.loads(out.read_text(encoding="utf-8"))
    assert payload["order"] == [3, 1, 2, 4]


def test_eval_ppl_sequential_bidirectional(workspace):
    out = workspace / "ppl.json"
    assert main([
        "eval-ppl", "--checkpoint", str(workspace / "upmlm.ckpt"),
        "--corpus", str(workspace / "corpus.txt"), "--mode", "sequential",
        "--out", str(out),
    ]) == 0
    payload = json.loads(out.read_text(encoding="utf-8"))
    assert payload["mode"] == "sequential"
    assert payload["ppl"] >= 1.0


def test_eval_ppl_random_mode_on_causal_checkpoint_fails(workspace, capsys):
    code = main([
        "eval-ppl", "--checkpoint", str(workspace / "gpt.ckpt"),
        "--corpus", str(workspace / "corpus.txt"), "--mode", "random",
    ])
    assert code != 0
    assert "unsupported" in capsys.readouterr().err


def test_eval_ppl_random_is_seed_deterministic(workspace):
    payloads = []
    for tag in ("a", "b"):
        out = workspace / f"ppl_{tag}.json"
        assert main([
            "eval-ppl", "--checkpoint", str(workspace / "upmlm.ckpt"),
            "--corpus", str(workspace / "corpus.txt"), "--mode", "random",
            "--seed", "9", "--out", str(out),
        ]) == 0
        payloads.append(out.read_bytes())
    assert payloads[0] == payloads[1]


def test_verify_equivalence_passes_and_writes_report(workspace, capsys):
    out = workspace / "equiv.json"
    code = main(["verify-equivalence", "--n", "4", "--seed", "7", "--out", str(out)])
    assert code == 0
    assert "PASS" in capsys.readouterr().out
    payload = json.loads(out.read_text(encoding="utf-8"))
    assert payload["passed"] is True
    assert payload["max_abs_gap"] < 1e-9
    assert payload["runs"][0]["constant_c"] == 120


def test_verify_equivalence_accepts_trained_checkpoint(workspace):
    code = main([
        "verify-equivalence", "--checkpoint", str(workspace / "upmlm.ckpt"),
        "--n", "3", "--seed", "1",
    ])
    assert code == 0


def test_bench_latency_emits_two_column_table(workspace, capsys):
    out = workspace / "bench.json"
    code = main([
        "bench-latency", "--count", "1", "--length", "4", "--seed", "0",
        "--layers", "1", "--hidden-size", "16", "--heads", "2",
        "--intermediate-size", "32", "--out", str(out),
    ])
    assert code == 0
    text = capsys.readouterr().out
    assert "Models" in text and "Cost Time" in text
    payload = json.loads(out.read_text(encoding="utf-8"))
    assert [r["model_kind"] for r in payload["reports"]] == ["causal", "bidirectional"]


def test_unreadable_checkpoint_is_reported(workspace, capsys):
    assert main(["generate", "--checkpoint", str(workspace / "missing.ckpt"), "--length", "4"]) == 2
