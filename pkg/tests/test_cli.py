from __future__ import annotations

import csv
import json
import logging

import pytest

from xmg import cli
from xmg.codec import CodecConfig, read_tokens_csv
from xmg.config import ConfigError, RunConfig
from xmg.midi import read_midi
from xmg.model import NumericError, load_checkpoint

CYCLE_CONFIG = {
    "paths": {"corpus_dir": "tokens", "output_dir": "out", "checkpoint_dir": "ckpt"},
    "model": {"hidden": 16, "learning_rate": 0.02, "epochs": 150, "batch_size": 2},
    "generation": {"length": 40, "candidates": 4},
    "screening": {"window": 8},
    "seed": 0,
}


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


def read_losses(path):
    with open(path) as fh:
        return [float(r["loss"]) for r in csv.DictReader(fh)]


@pytest.fixture(scope="module")
def cycle_workspace(tmp_path_factory):
    """A trained cycle-corpus workspace shared by the generate tests."""
    root = tmp_path_factory.mktemp("cycle")
    (root / "run.json").write_text(json.dumps(CYCLE_CONFIG))
    with pytest.MonkeyPatch.context() as mp:
        mp.chdir(root)
        assert run("synth", "cycle", "tokens", "--count", 8, "--length", 32) == 0
        assert run("synth", "midi", "midi", "--count", 2, "--cycles", 1, "--length", 400) == 0
        assert run("calibrate", "midi", "--config", "run.json") == 0
        assert run("train", "--config", "run.json") == 0
    return root


class TestRunConfig:
    def test_defaults_round_trip(self):
        cfg = RunConfig()
        assert RunConfig.from_dict(json.loads(cfg.to_json())) == cfg
        assert cfg.model.hidden == 150 and cfg.model.layers == 2 and cfg.screening.window == 16

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="hiden"):
            RunConfig.from_dict({"model": {"hiden": 3}})
        with pytest.raises(ConfigError, match="modle"):
            RunConfig.from_dict({"modle": {}})

    def test_ranges(self):
        for bad in ({"model": {"hidden": 0}}, {"generation": {"temperature": 0}},
                    {"screening": {"regulation": -1}}, {"seed": -2},
                    {"generation": {"seed_token": [88, 0, 0, 0, 0]}},
                    {"model": {"epochs": 1.5}}):
            with pytest.raises(ConfigError):
                RunConfig.from_dict(bad)

    def test_overrides(self):
        cfg = RunConfig().with_overrides(["model.hidden=32", "seed=4", "paths.output_dir=x",
                                          "generation.seed_token=[1,2,3,4,0]"])
        assert (cfg.model.hidden, cfg.seed, cfg.paths.output_dir) == (32, 4, "x")
        assert cfg.generation.seed_token == (1, 2, 3, 4, 0)
        with pytest.raises(ConfigError):
            RunConfig().with_overrides(["model.nope=1"])
        with pytest.raises(ConfigError):
            RunConfig().with_overrides(["hidden"])

    def test_int_accepted_for_float(self):
        assert RunConfig.from_dict({"model": {"learning_rate": 1}}).model.learning_rate == 1.0


class TestExitCodes:
    def test_usage(self, capsys):
        assert run("frobnicate") == 1
        assert run("train", "--submodel", "q") == 1

    def test_bad_config(self, tmp_path):
        (tmp_path / "c.json").write_text("{not json")
        assert run("train", "--config", tmp_path / "c.json") == 1
        (tmp_path / "c.json").write_text('{"model": {"hiden": 2}}')
        assert run("train", "--config", tmp_path / "c.json") == 1

    def test_numeric_failure(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert run("synth", "cycle", "tokens", "--count", 2, "--length", 8) == 0

        def boom(*a, **k):
            raise NumericError("submodel n: non-finite loss at optimizer step 0")
        monkeypatch.setattr(cli, "train", boom)
        assert run("train", "tokens", "--set", "model.hidden=4") == 3

    def test_log_level_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("XMG_LOG_LEVEL", "nonsense")
        monkeypatch.chdir(tmp_path)
        assert run("synth", "cycle", "t", "--count", 2, "--length", 8) == 0


class TestCalibrate:
    def test_two_files(self, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        assert run("synth", "midi", "midi", "--count", 2, "--cycles", 0, "--length", 800) == 0
        assert run("calibrate", "midi", "--out", "a/codec.json") == 0
        cfg = CodecConfig.load(tmp_path / "a/codec.json")
        assert (cfg.time_shift_bins.num_classes, cfg.duration_bins.num_classes,
                cfg.velocity_change_bins.num_classes) == (105, 120, 47)
        out = capsys.readouterr().out
        assert "Weber violation" in out
        for f in ("t", "d", "v"):
            assert (tmp_path / f"a/histograms/{f}_classes.csv").exists()
            assert (tmp_path / f"a/histograms/{f}_classes.svg").read_text().startswith("<svg")
        assert run("calibrate", "midi", "--out", "b/codec.json") == 0
        assert (tmp_path / "a/codec.json").read_bytes() == (tmp_path / "b/codec.json").read_bytes()

    def test_empty_dir(self, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        assert run("calibrate", tmp_path / "empty", "--out", tmp_path / "c.json") == 2

    def test_unparsable_files_listed(self, tmp_path, capsys):
        (tmp_path / "bad.mid").write_bytes(b"garbage")
        assert run("calibrate", tmp_path, "--out", tmp_path / "c.json") == 2
        assert "bad.mid" in capsys.readouterr().err


class TestEncodeDecode:
    def test_batch_continues_past_failures(self, cycle_workspace, tmp_path, capsys):
        midi = cycle_workspace / "midi"
        (tmp_path / "broken.mid").write_bytes(b"MThd\x00\x00\x00\x06")
        codec = cycle_workspace / "out/codec.json"
        code = run("encode", midi / "cycle_00.mid", tmp_path / "broken.mid",
                   midi / "performance_00.mid", "--codec", codec, "--out", tmp_path / "tok")
        assert code == 2
        assert "broken.mid" in capsys.readouterr().err
        assert (tmp_path / "tok/cycle_00.csv").exists()
        assert (tmp_path / "tok/performance_00.csv").exists()

        assert run("decode", tmp_path / "tok", "--codec", codec, "--out", tmp_path / "mid") == 0
        assert run("encode", tmp_path / "mid", "--codec", codec, "--out", tmp_path / "tok2") == 0
        a = read_tokens_csv(tmp_path / "tok/cycle_00.csv")
        b = read_tokens_csv(tmp_path / "tok2/cycle_00.csv")
        assert a == b


class TestTrain:
    def test_cycle_preset_losses(self, cycle_workspace):
        for f in "ntdvp":
            losses = read_losses(cycle_workspace / f"ckpt/loss_{f}.csv")
            assert len(losses) == 150 and losses[-1] < 0.05
        assert (cycle_workspace / "ckpt/attention.csv").exists()
        assert (cycle_workspace / "ckpt/attention.svg").exists()

    def test_single_submodel(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        run("synth", "cycle", "tokens", "--count", 2, "--length", 12)
        assert run("train", "tokens", "--submodel", "d", "--set", "model.hidden=4",
                   "--set", "model.epochs=2") == 0
        assert sorted(p.name for p in (tmp_path / "checkpoints").glob("*.xmg")) == ["submodel_d.xmg"]
        assert not (tmp_path / "checkpoints/attention.csv").exists()

    def test_resume_continues_curve(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        run("synth", "cycle", "tokens", "--count", 6, "--length", 24)
        common = ["--submodel", "t", "--set", "model.hidden=8", "--set", "model.epochs=15",
                  "--set", "model.learning_rate=0.01", "--set", "model.batch_size=2"]
        assert run("train", "tokens", *common) == 0
        first = read_losses(tmp_path / "checkpoints/loss_t.csv")
        assert run("train", "tokens", "--resume", *common) == 0
        both = read_losses(tmp_path / "checkpoints/loss_t.csv")
        assert both[:15] == pytest.approx(first, abs=1e-6) and len(both) == 30
        assert both[15] <= 1.1 * both[14]
        assert load_checkpoint(tmp_path / "checkpoints/submodel_t.xmg").adam.step > 0

    def test_independent_flag(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        run("synth", "cycle", "tokens", "--count", 2, "--length", 12)
        assert run("train", "tokens", "--submodel", "v", "--independent",
                   "--set", "model.hidden=4", "--set", "model.epochs=1") == 0
        assert not load_checkpoint(tmp_path / "checkpoints/submodel_v.xmg").conditioned


class TestGenerate:
    def test_outputs_and_determinism(self, cycle_workspace, monkeypatch):
        monkeypatch.chdir(cycle_workspace)
        assert run("generate", "--config", "run.json") == 0
        scored = (cycle_workspace / "out/scored.csv").read_bytes()
        winner = (cycle_workspace / "out/winner.csv").read_bytes()
        assert len(list((cycle_workspace / "out/candidates").glob("*.csv"))) == 4
        for name in ("entropy_stats.csv", "entropy_stats.svg", "aesthetic.csv", "winner.mid"):
            assert (cycle_workspace / "out" / name).exists()
        assert len(read_midi(cycle_workspace / "out/winner.mid")) == 40
        assert run("generate", "--config", "run.json") == 0
        assert (cycle_workspace / "out/scored.csv").read_bytes() == scored
        assert (cycle_workspace / "out/winner.csv").read_bytes() == winner

    def test_single_candidate_is_emitted(self, cycle_workspace, monkeypatch):
        monkeypatch.chdir(cycle_workspace)
        assert run("generate", "--config", "run.json", "--set", "generation.candidates=1",
                   "--set", "paths.output_dir=\"one\"", "--codec", "out/codec.json") == 0
        assert ((cycle_workspace / "one/winner.csv").read_bytes()
                == (cycle_workspace / "one/candidates/candidate_000.csv").read_bytes())

    def test_missing_checkpoint(self, cycle_workspace, tmp_path, monkeypatch, caplog):
        monkeypatch.chdir(cycle_workspace)
        with caplog.at_level(logging.WARNING):
            code = run("generate", "--config", "run.json", "--set",
                       f"paths.checkpoint_dir=\"{tmp_path}\"")
        assert code == 2
