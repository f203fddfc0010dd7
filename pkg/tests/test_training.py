"""Run-config validation, the shipped presets, and short training smoke runs."""

import json

import numpy as np
import pytest

from pmlm.checkpoint import load_checkpoint
from pmlm.masking import MaskingPrior
from pmlm.training import RunConfig, TrainingSettings, preset, train


def small_overrides(steps=40):
    return dict(
        layers=1,
        heads=2,
        hidden_size=16,
        intermediate_size=32,
        max_len=16,
        steps=steps,
        batch_size=4,
        seed=7,
    )


@pytest.fixture()
def corpus_file(tmp_path):
    from pmlm.data import write_synthetic_corpus

    return write_synthetic_corpus(tmp_path / "corpus.txt", n_bytes=4_000, seed=1)


def test_causal_config_rejects_prior():
    with pytest.raises(ValueError, match="prior"):
        RunConfig(
            corpus_path="c.txt",
            checkpoint_path="m.ckpt",
            model={"attention_mode": "causal"},
            prior=MaskingPrior.uniform(),
        )


def test_bidirectional_config_requires_prior():
    with pytest.raises(ValueError, match="prior"):
        RunConfig(corpus_path="c.txt", checkpoint_path="m.ckpt", model={}, prior=None)


def test_seed_is_mandatory():
    with pytest.raises(ValueError, match="seed"):
        TrainingSettings(seed=None)


def test_unknown_model_field_rejected():
    with pytest.raises(ValueError, match="vocab_size"):
        RunConfig(
            corpus_path="c", checkpoint_path="m",
            model={"vocab_size": 10}, prior=MaskingPrior.uniform(),
        )


def test_presets_have_expected_shapes():
    up = preset("upmlm", "c.txt", "m.ckpt")
    assert up.prior.kind == "uniform"
    assert up.model["attention_mode"] == "bidirectional"
    bert = preset("bert-like", "c.txt", "m.ckpt")
    assert bert.prior.kind == "point_mass" and bert.prior.r0 == 0.15
    gpt = preset("gpt-like", "c.txt", "m.ckpt")
    assert gpt.prior is None and gpt.model["attention_mode"] == "causal"
    with pytest.raises(ValueError, match="preset"):
        preset("xlnet", "c.txt", "m.ckpt")


def test_config_json_round_trip(tmp_path):
    config = preset("upmlm", "c.txt", "m.ckpt", steps=10, layers=1)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(config.to_dict()), encoding="utf-8")
    loaded = RunConfig.from_json_file(path)
    assert loaded.to_dict() == config.to_dict()


@pytest.mark.parametrize("name", ["upmlm", "gpt-like"])
def test_short_training_reduces_loss(name, corpus_file, tmp_path):
    config = preset(name, str(corpus_file), str(tmp_path / f"{name}.ckpt"), **small_overrides(120))
    result = train(config, quiet=True)
    first = np.mean(result.losses[:10])
    last = np.mean(result.losses[-10:])
    assert last < first, (first, last)
    assert result.checkpoint_path.exists()


def test_training_is_deterministic(corpus_file, tmp_path):
    runs = []
    for tag in ("a", "b"):
        config = preset(
            "upmlm",
            str(corpus_file),
            str(tmp_path / f"{tag}.ckpt"),
            loss_log_path=str(tmp_path / f"{tag}.jsonl"),
            **small_overrides(30),
        )
        runs.append(train(config, quiet=True))
    assert runs[0].losses == runs[1].losses
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_checkpoint_carries_vocab_and_prior(corpus_file, tmp_path):
    config = preset("bert-like", str(corpus_file), str(tmp_path / "m.ckpt"), **small_overrides(5))
    result = train(config, quiet=True)
    _, header = load_checkpoint(result.checkpoint_path)
    assert header["vocab"] == result.corpus.vocab.to_list()
    assert header["prior"] == {"kind": "point_mass", "r0": 0.15}
    assert header["tokenizer"] == "char"


def test_divergence_aborts_and_retains_checkpoint(corpus_file, tmp_path, monkeypatch):
    import pmlm.training as training_mod
    from pmlm.tensor import Tensor
    from pmlm.training import TrainingDiverged

    real = training_mod.masked_batch_loss
    calls = {"n": 0}

    def poisoned(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 4:
            return Tensor(float("nan"))
        return real(*args, **kwargs)

    monkeypatch.setattr(training_mod, "masked_batch_loss", poisoned)
    ckpt = tmp_path / "diverged.ckpt"
    config = preset("upmlm", str(corpus_file), str(ckpt), **small_overrides(10))
    with pytest.raises(TrainingDiverged, match="non-finite loss at step 3"):
        train(config, quiet=True)
    model, _ = load_checkpoint(ckpt)
    assert all(np.all(np.isfinite(p.data)) for p in model.params.values())


def test_all_unmasked_prior_trains_at_zero_loss(corpus_file, tmp_path):
    # point mass at r=0 never masks anything; every step contributes zero
    config = preset(
        "upmlm", str(corpus_file), str(tmp_path / "m.ckpt"),
        prior=MaskingPrior.point_mass(0.0), **small_overrides(3),
    )
    result = train(config, quiet=True)
    assert result.losses == [0.0, 0.0, 0.0]
