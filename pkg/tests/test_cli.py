"""CLI surface: config parsing, artifacts, exit codes, output formats."""

import json
import math

import jsonschema
import numpy as np
import pytest

from advlm import cli
from advlm.cli import (TRAIN_SCHEMA, main, parse_config, resolve_seed,
                       serialize_config, split_tokens)
from advlm.corpus import Vocab, batchify, read_tokens
from advlm.errors import ConfigError
from advlm.model import LMConfig, init_params, load_checkpoint, save_checkpoint
from advlm.train import LOG_HEADER, TrainLog, evaluate

WORDS = "alpha bravo charlie delta echo foxtrot golf hotel india juliet".split()


def make_corpus(path, num_lines=60, words_per_line=7, seed=0):
    rng = np.random.default_rng(seed)
    lines = []
    for _ in range(num_lines):
        picks = rng.integers(0, len(WORDS), size=words_per_line)
        lines.append(" ".join(WORDS[i] for i in picks))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


TRAIN_FLAGS = ["--embed-dim", "8", "--batch-size", "2", "--bptt-len", "4",
               "--learning-rate", "1.0", "--seed", "1"]


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """One small end-to-end training run shared by the read-only tests."""
    root = tmp_path_factory.mktemp("run")
    corpus = root / "corpus.txt"
    make_corpus(corpus)
    out = root / "out"
    rc = main(["train", "--corpus", str(corpus), "--out", str(out),
               "--adv", "adaptive:0.005", "--epochs", "5"] + TRAIN_FLAGS)
    assert rc == 0
    return {"corpus": corpus, "out": out}


class TestConfigParsing:
    def test_parse_types_comments_blanks(self):
        text = ("# full-line comment\n"
                "epochs = 3\n"
                "\n"
                "learning_rate = 2.5  # trailing comment\n"
                "adv = fixed:0.1\n")
        cfg = parse_config(text)
        assert cfg == {"epochs": 3, "learning_rate": 2.5, "adv": "fixed:0.1"}

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_config("epoochs = 3\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="bad value"):
            parse_config("epochs = three\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="expected 'key = value'"):
            parse_config("epochs 3\n")

    def test_round_trip_identity(self):
        text = ("corpus = data/tiny.txt\n"
                "adv = adaptive:0.005\n"
                "epochs = 7\n"
                "learning_rate = 0.1\n"
                "grad_clip = 0.25\n"
                "input_noise_start = 0.2\n")
        first = parse_config(text)
        second = parse_config(serialize_config(first))
        assert second == first

    def test_serialize_uses_schema_order(self):
        cfg = {"epochs": 2, "corpus": "a.txt"}
        lines = serialize_config(cfg).splitlines()
        assert lines == ["corpus = a.txt", "epochs = 2"]

    def test_every_key_has_default_and_round_trips(self):
        defaults = {k: opt.default for k, opt in TRAIN_SCHEMA.items()}
        assert parse_config(serialize_config(defaults)) == defaults


class TestSeedResolution:
    def test_explicit_wins_over_env(self, monkeypatch):
        monkeypatch.setenv("ADVLM_SEED", "99")
        assert resolve_seed(5) == 5

    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv("ADVLM_SEED", "42")
        assert resolve_seed(None) == 42

    def test_default_zero(self, monkeypatch):
        monkeypatch.delenv("ADVLM_SEED", raising=False)
        assert resolve_seed(None) == 0

    def test_bad_env_rejected(self, monkeypatch):
        monkeypatch.setenv("ADVLM_SEED", "lots")
        with pytest.raises(ConfigError, match="ADVLM_SEED"):
            resolve_seed(None)


class TestHelp:
    def test_train_help_documents_every_config_key(self, capsys):
        with pytest.raises(SystemExit):
            main(["train", "--help"])
        text = capsys.readouterr().out
        for key in TRAIN_SCHEMA:
            assert "--" + key.replace("_", "-") in text


class TestTrainCommand:
    def test_writes_artifacts(self, trained_run):
        out = trained_run["out"]
        vocab = Vocab.load(str(out / "vocab.tsv"))
        params = load_checkpoint(str(out / "model.bin"))
        assert params.config.vocab_size == len(vocab)
        assert params.config.embed_dim == 8
        log = TrainLog.load(str(out / "log.csv"))
        assert len(log.rows) == 5
        assert all(math.isfinite(r.train_ppl) for r in log.rows)
        cfg = parse_config((out / "config.txt").read_text())
        assert cfg["epochs"] == 5 and cfg["adv"] == "adaptive:0.005"

    def test_progress_lines_on_stdout(self, tmp_path, capsys):
        corpus = tmp_path / "c.txt"
        make_corpus(corpus, num_lines=20)
        rc = main(["train", "--corpus", str(corpus), "--out",
                   str(tmp_path / "o"), "--epochs", "2"] + TRAIN_FLAGS)
        assert rc == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("vocab_size=")
        assert lines[1] == LOG_HEADER
        assert len(lines) == 2 + 2

    def test_off_equals_fixed_zero(self, tmp_path):
        corpus = tmp_path / "c.txt"
        make_corpus(corpus, num_lines=30)
        logs = []
        for adv in ("off", "fixed:0"):
            out = tmp_path / adv.replace(":", "_")
            rc = main(["train", "--corpus", str(corpus), "--out", str(out),
                       "--adv", adv, "--epochs", "3"] + TRAIN_FLAGS)
            assert rc == 0
            logs.append(TrainLog.load(str(out / "log.csv")))
        for off_row, zero_row in zip(logs[0].rows, logs[1].rows):
            assert off_row.train_ppl == zero_row.train_ppl
            assert off_row.valid_ppl == zero_row.valid_ppl

    def test_flags_override_config_file(self, tmp_path):
        corpus = tmp_path / "c.txt"
        make_corpus(corpus, num_lines=20)
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text(f"corpus = {corpus}\nepochs = 4\nembed_dim = 8\n"
                            "batch_size = 2\nbptt_len = 4\n")
        out = tmp_path / "o"
        rc = main(["train", "--config", str(cfg_file), "--out", str(out),
                   "--epochs", "2"])
        assert rc == 0
        assert len(TrainLog.load(str(out / "log.csv")).rows) == 2
        assert parse_config((out / "config.txt").read_text())["epochs"] == 2

    def test_corpus_and_train_conflict(self, tmp_path):
        corpus = tmp_path / "c.txt"
        make_corpus(corpus, num_lines=10)
        rc = main(["train", "--corpus", str(corpus), "--train", str(corpus),
                   "--valid", str(corpus), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_train_without_valid(self, tmp_path):
        corpus = tmp_path / "c.txt"
        make_corpus(corpus, num_lines=10)
        rc = main(["train", "--train", str(corpus),
                   "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_missing_corpus_file(self, tmp_path):
        rc = main(["train", "--corpus", str(tmp_path / "nope.txt"),
                   "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_bad_adv_spec(self, tmp_path):
        corpus = tmp_path / "c.txt"
        make_corpus(corpus, num_lines=10)
        rc = main(["train", "--corpus", str(corpus), "--adv", "sideways:1",
                   "--out", str(tmp_path / "o")] + TRAIN_FLAGS)
        assert rc == 2

    def test_separate_train_valid_files(self, tmp_path):
        train_file, valid_file = tmp_path / "tr.txt", tmp_path / "va.txt"
        make_corpus(train_file, num_lines=30, seed=0)
        make_corpus(valid_file, num_lines=10, seed=1)
        out = tmp_path / "o"
        rc = main(["train", "--train", str(train_file), "--valid",
                   str(valid_file), "--out", str(out), "--epochs", "1"]
                  + TRAIN_FLAGS)
        assert rc == 0
        assert len(TrainLog.load(str(out / "log.csv")).rows) == 1

    def test_env_seed_recorded(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ADVLM_SEED", "7")
        corpus = tmp_path / "c.txt"
        make_corpus(corpus, num_lines=20)
        out = tmp_path / "o"
        rc = main(["train", "--corpus", str(corpus), "--out", str(out),
                   "--epochs", "1", "--embed-dim", "8", "--batch-size", "2",
                   "--bptt-len", "4"])
        assert rc == 0
        assert parse_config((out / "config.txt").read_text())["seed"] == 7


def eval_ppl_from_stdout(capsys):
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1 and lines[0].startswith("perplexity=")
    return lines[0]


class TestEvalCommand:
    def test_zero_init_ppl_equals_vocab_size(self, tmp_path, capsys):
        corpus = tmp_path / "c.txt"
        make_corpus(corpus, num_lines=20)
        vocab_size = 12  # 10 words + <unk>, <eos>
        params = init_params(LMConfig(vocab_size, 8, init_range=0.0), 0)
        save_checkpoint(params, str(tmp_path / "model.bin"))
        from advlm.corpus import build_vocab
        build_vocab(read_tokens(str(corpus))).save(str(tmp_path / "vocab.tsv"))
        rc = main(["eval", "--checkpoint", str(tmp_path / "model.bin"),
                   "--corpus", str(corpus), "--batch-size", "2",
                   "--bptt-len", "4"])
        assert rc == 0
        ppl = float(eval_ppl_from_stdout(capsys).split("=")[1])
        assert abs(ppl - vocab_size) <= 0.01 * vocab_size

    def test_eval_twice_identical(self, trained_run, capsys):
        args = ["eval", "--checkpoint", str(trained_run["out"] / "model.bin"),
                "--corpus", str(trained_run["corpus"]), "--batch-size", "2",
                "--bptt-len", "4"]
        assert main(args) == 0
        first = eval_ppl_from_stdout(capsys)
        assert main(args) == 0
        assert eval_ppl_from_stdout(capsys) == first

    def test_matches_final_logged_valid_ppl(self, trained_run, capsys):
        out = trained_run["out"]
        logged = TrainLog.load(str(out / "log.csv")).final_valid_ppl
        params = load_checkpoint(str(out / "model.bin"))
        vocab = Vocab.load(str(out / "vocab.tsv"))
        _, tail = split_tokens(read_tokens(str(trained_run["corpus"])))
        lib_ppl = evaluate(params, batchify(vocab.encode(tail), 2, 4))
        assert abs(lib_ppl - logged) <= 1e-6 * logged
        rc = main(["eval", "--checkpoint", str(out / "model.bin"),
                   "--corpus", str(trained_run["corpus"]), "--split", "valid",
                   "--batch-size", "2", "--bptt-len", "4"])
        assert rc == 0
        assert eval_ppl_from_stdout(capsys) == f"perplexity={lib_ppl:.6g}"

    def test_corrupt_checkpoint_exit_4(self, trained_run, tmp_path, capsys):
        data = (trained_run["out"] / "model.bin").read_bytes()
        bad = tmp_path / "model.bin"
        bad.write_bytes(data[: len(data) // 2])
        rc = main(["eval", "--checkpoint", str(bad), "--vocab",
                   str(trained_run["out"] / "vocab.tsv"), "--corpus",
                   str(trained_run["corpus"])])
        assert rc == 4
        assert "error:" in capsys.readouterr().err

    def test_vocab_size_mismatch_exit_2(self, trained_run, tmp_path, capsys):
        small = Vocab(["<unk>", "<eos>", "alpha"])
        small.save(str(tmp_path / "vocab.tsv"))
        rc = main(["eval", "--checkpoint",
                   str(trained_run["out"] / "model.bin"), "--vocab",
                   str(tmp_path / "vocab.tsv"), "--corpus",
                   str(trained_run["corpus"])])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_eval_requires_corpus(self, trained_run, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--checkpoint",
                  str(trained_run["out"] / "model.bin")])
        assert exc.value.code == 2
        capsys.readouterr()


REPORT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["nn_distances", "singular_values_normalized", "sv_entropy",
                 "recognized_words"],
    "properties": {
        "nn_distances": {"type": "array", "items": {"type": "number"}},
        "singular_values_normalized":
            {"type": "array", "items": {"type": "number"}},
        "sv_entropy": {"type": "number"},
        "recognized_words": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["word_id", "probe_source", "epsilon",
                             "nn_distance"],
                "properties": {
                    "word_id": {"type": "integer"},
                    "probe_source": {"type": "string"},
                    "epsilon": {"type": "number"},
                    "nn_distance": {"type": "number"},
                },
            },
        },
    },
}


class TestAnalyzeCommand:
    def test_identity_embedding_report(self, tmp_path, capsys):
        params = init_params(LMConfig(6, 6, init_range=0.0), 0)
        params.embedding.values[:] = np.eye(6)
        ckpt = tmp_path / "model.bin"
        save_checkpoint(params, str(ckpt))
        out = tmp_path / "report"
        rc = main(["analyze", "--checkpoint", str(ckpt), "--out", str(out),
                   "--num-random", "20"])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        np.testing.assert_allclose(report["nn_distances"],
                                   np.sqrt(2.0), rtol=0, atol=1e-12)
        np.testing.assert_allclose(report["singular_values_normalized"],
                                   1.0, rtol=0, atol=1e-12)
        lines = (out / "nn_distances.csv").read_text().splitlines()
        assert lines[0] == "word,nn_distance"
        assert len(lines) == 1 + 6
        word, dist = lines[1].split(",")
        assert word == "0"
        np.testing.assert_allclose(float(dist), np.sqrt(2.0), atol=1e-9)
        capsys.readouterr()

    def test_report_validates_against_schema(self, trained_run, tmp_path,
                                             capsys):
        out = tmp_path / "report"
        rc = main(["analyze", "--checkpoint",
                   str(trained_run["out"] / "model.bin"), "--corpus",
                   str(trained_run["corpus"]), "--adv", "adaptive:0.05",
                   "--out", str(out), "--num-random", "50", "--batch-size",
                   "2", "--bptt-len", "4"])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        jsonschema.validate(report, REPORT_SCHEMA)
        sources = {e["probe_source"] for e in report["recognized_words"]}
        assert sources <= {"train", "random"}
        text = capsys.readouterr().out
        assert "median_nn_distance=" in text
        assert "sv_entropy=" in text

    def test_csv_uses_tokens_when_vocab_known(self, trained_run, tmp_path,
                                              capsys):
        out = tmp_path / "report"
        rc = main(["analyze", "--checkpoint",
                   str(trained_run["out"] / "model.bin"), "--corpus",
                   str(trained_run["corpus"]), "--out", str(out),
                   "--num-random", "10", "--batch-size", "2",
                   "--bptt-len", "4"])
        assert rc == 0
        lines = (out / "nn_distances.csv").read_text().splitlines()
        assert lines[1].split(",")[0] == "<unk>"
        assert lines[2].split(",")[0] == "<eos>"
        capsys.readouterr()

    def test_bad_adv_spec_exit_2(self, trained_run, tmp_path, capsys):
        rc = main(["analyze", "--checkpoint",
                   str(trained_run["out"] / "model.bin"), "--adv", "fixed:-1",
                   "--out", str(tmp_path / "r")])
        assert rc == 2
        capsys.readouterr()

    def test_corrupt_checkpoint_exit_4(self, tmp_path, capsys):
        bad = tmp_path / "model.bin"
        bad.write_bytes(b"not a checkpoint at all")
        rc = main(["analyze", "--checkpoint", str(bad),
                   "--out", str(tmp_path / "r")])
        assert rc == 4
        capsys.readouterr()


class TestVerifyCommand:
    def test_smoke_run_passes(self, capsys):
        rc = main(["verify", "--scale", "0.02", "--seed", "0"])
        out = capsys.readouterr().out
        assert rc == 0
        lines = [l for l in out.splitlines() if l]
        assert len(lines) == 6
        assert all(l.startswith("PASS ") for l in lines)
