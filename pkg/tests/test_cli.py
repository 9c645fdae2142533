import json

import pytest

from convasr.cli import COMMANDS, build_parser, main

SMALL = {"corpus": {"n_utts": 14, "T_range": [20, 40]},
         "lstm_schedule": {"epochs": 1, "learning_rate": 0.5, "batch_size": 8},
         "resnet_schedule": {"epochs": 1, "steps_per_epoch": 3, "batch_size": 8, "learning_rate": 0.03}}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "small.json").write_text(json.dumps(SMALL))
    assert run("synth", "--seed", 7, "--out", d / "run", "--nbest", 4, "--config", d / "small.json") == 0
    return d


def test_parser_offers_every_subcommand():
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    assert tuple(sub.choices) == COMMANDS


def test_synth_twice_gives_identical_manifests(tmp_path):
    assert run("synth", "--seed", 7, "--out", tmp_path / "a") == 0
    assert run("synth", "--seed", 7, "--out", tmp_path / "b") == 0
    a = (tmp_path / "a/corpus/manifest.json").read_bytes()
    assert a == (tmp_path / "b/corpus/manifest.json").read_bytes()
    assert (tmp_path / "a/config.json").read_bytes() == (tmp_path / "b/config.json").read_bytes()
    assert "created" in json.loads((tmp_path / "a/metadata.json").read_text())
    assert json.loads(a)["config"]["seed"] == 7


def test_config_file_overrides_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 3, "corpus": {"n_utts": 5}}))
    assert run("synth", "--seed", 9, "--out", tmp_path / "o", "--config", cfg) == 0
    manifest = json.loads((tmp_path / "o/corpus/manifest.json").read_text())
    assert manifest["config"]["seed"] == 3
    assert len(manifest["utterances"]) == 5
    recorded = json.loads((tmp_path / "o/config.json").read_text())
    assert recorded["experiment"]["seed"] == 3 and recorded["experiment"]["corpus"] == {"n_utts": 5}


def test_config_section_overrides_subcommand_flag(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"nbest": 3}, "corpus": {"n_utts": 6}}))
    assert run("synth", "--out", tmp_path / "o", "--config", cfg) == 0
    assert (tmp_path / "o/nbest.txt").exists()


def test_score_identity_reports_zero(tmp_path, capsys):
    trn = tmp_path / "r.trn"
    trn.write_text("the cat sat (utt1)\nuh huh yes (utt2)\n")
    assert run("score", "--ref", trn, "--hyp", trn) == 0
    out = capsys.readouterr().out
    assert "WER 0.0%" in out
    assert "subset=overall utts=2 n_ref=6 sub=0 del=0 ins=0 wer=0.00" in out


def test_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run("no-such-command")
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        run("score", "--ref", "x.trn")
    assert exc.value.code == 2
    assert run("score", "--ref", tmp_path / "missing.trn", "--hyp", tmp_path / "missing.trn") == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"synth": {"no_such_flag": 1}}))
    assert run("synth", "--out", tmp_path / "o", "--config", bad) == 2
    bad.write_text(json.dumps({"no_such_field": 1}))
    assert run("synth", "--out", tmp_path / "o", "--config", bad) == 1
    assert "unknown experiment config keys" in capsys.readouterr().err


def test_verify_exit_status_follows_checks(capsys):
    assert run("verify", "--only", "architecture", "normalization") == 0
    assert "2/2 checks passed" in capsys.readouterr().out
    assert run("verify", "--only", "no-such-check") == 1


def test_training_and_decoding_chain(workdir, capsys):
    d, corpus, small = workdir, workdir / "run/corpus", workdir / "small.json"
    for name in ("lstm_a", "lstm_b"):
        assert run("train-lstm", "--corpus", corpus, "--out", d / name, "--config", small) == 0
    # identical config and seed give identical model bytes
    assert (d / "lstm_a/model.ckpt").read_bytes() == (d / "lstm_b/model.ckpt").read_bytes()
    assert (d / "lstm_a/config.json").read_bytes() == (d / "lstm_b/config.json").read_bytes()
    assert run("train-resnet", "--corpus", corpus, "--out", d / "res", "--config", small) == 0
    assert run("dilate", "--model", d / "res/model.ckpt", "--out", d / "res/dense.ckpt") == 0
    for m in ("lstm_a", "res"):
        for split in ("dev", "eval"):
            assert run("decode", "--corpus", corpus, "--model", d / m / "model.ckpt", "--split", split,
                       "--out", d / f"{split}_{m}", "--config", small) == 0
    assert run("fuse", "--corpus", corpus, "--scores", d / "eval_lstm_a/scores", d / "eval_res/scores",
               "--tune-dev", d / "dev_lstm_a/scores", d / "dev_res/scores", "--out", d / "fused",
               "--config", small) == 0
    weights = json.loads((d / "fused/fusion.json").read_text())["weights"]
    assert abs(sum(weights) - 1) < 1e-12
    capsys.readouterr()
    assert run("report", "--ref", d / "eval_res/ref.trn", "--hyp", f"lstm={d / 'eval_lstm_a/hyp.trn'}",
               f"fused={d / 'fused/hyp.trn'}") == 0
    table = capsys.readouterr().out.splitlines()
    assert table[0].split() == ["system", "overall"] and [r.split()[0] for r in table[1:]] == ["lstm", "fused"]


def test_fuse_requires_weights_or_tuning(workdir):
    assert run("fuse", "--corpus", workdir / "run/corpus", "--scores", workdir / "x", "--out",
               workdir / "f") == 1


def test_lm_chain(workdir, capsys):
    d, corpus = workdir, workdir / "run/corpus"
    assert run("train-lm", "--corpus", corpus, "--kind", "ngram", "--out", d / "lm/ng.json") == 0
    assert run("train-lm", "--corpus", corpus, "--kind", "word_dcc", "--epochs", 1, "--out", d / "lm/dcc.ckpt") == 0
    assert run("tune-interp", "--lm", d / "lm/ng.json", d / "lm/dcc.ckpt", "--corpus", corpus,
               "--out", d / "lm/w.json") == 0
    w = json.loads((d / "lm/w.json").read_text())["weights"]
    assert len(w) == 2 and abs(sum(w) - 1) < 1e-9
    assert run("rescore", "--nbest", d / "run/nbest.txt", "--lm", d / "lm/ng.json", d / "lm/dcc.ckpt",
               "--weights", d / "lm/w.json", "--out", d / "resc") == 0
    assert (d / "resc/hyp.trn").read_text().count("\n") == (d / "run/nbest.txt").read_text().count("\n\n") + 1
    assert run("tune-interp", "--lm", d / "lm/ng.json", d / "lm/dcc.ckpt", "--out", d / "lm/x.json") == 2
