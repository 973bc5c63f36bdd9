"""Config parsing and the gen-data / train / eval / report command surface."""

import csv
import subprocess
import sys

import pytest

from scrl.config import (ConfigError, load_config, parse_config_text,
                         serialize_config)
from scrl.cli import main


# ---- config parsing ------------------------------------------------------------

BASE = "seed=7\ncorpus_dir={corpus}\nout_dir={out}\n"


def _cfg_text(corpus="c", out="o", extra=""):
    return BASE.format(corpus=corpus, out=out) + extra


def test_minimal_config_parses_with_defaults():
    cfg = parse_config_text(_cfg_text())
    assert cfg.seed == 7
    assert cfg.generator.seed == 7 and cfg.contrast.seed == 7
    assert cfg.contrast.temperature == 0.07
    assert cfg.model.n_tokens == 128


def test_unknown_key_rejected_with_key_named():
    with pytest.raises(ConfigError, match="contrast.tempurature"):
        parse_config_text(_cfg_text(extra="contrast.tempurature=0.1\n"))
    with pytest.raises(ConfigError, match="bogus"):
        parse_config_text(_cfg_text(extra="bogus=1\n"))


def test_missing_required_key_named():
    with pytest.raises(ConfigError, match="seed"):
        parse_config_text("corpus_dir=c\nout_dir=o\n")


def test_malformed_line_reports_line_number():
    with pytest.raises(ConfigError, match="line 4"):
        parse_config_text(_cfg_text(extra="not a key value\n"))


def test_section_overrides_and_comments():
    cfg = parse_config_text(_cfg_text(extra=(
        "# a comment\n"
        "generator.n_pairs=4\n"
        "contrast.temperature=0.2\n"
        "pretrain.epochs=3\n"
        "augment.flip_prob=0.0\n"
        "eval.mode=annotated\n")))
    assert cfg.generator.n_pairs == 4
    assert cfg.contrast.temperature == 0.2
    assert cfg.pretrain.epochs == 3
    assert cfg.contrast.policy.flip_prob == 0.0
    assert cfg.eval.mode == "annotated"


def test_bad_value_rejected():
    with pytest.raises(ConfigError, match="pretrain.epochs"):
        parse_config_text(_cfg_text(extra="pretrain.epochs=three\n"))


def test_serialize_round_trip():
    cfg = parse_config_text(_cfg_text(extra="contrast.temperature=0.11\n"))
    text = serialize_config(cfg)
    again = parse_config_text(text)
    assert serialize_config(again) == text
    assert again.contrast.temperature == 0.11


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.txt")


# ---- CLI ------------------------------------------------------------------------

TINY_TRAIN = ("generator.n_pairs=3\n"
              "generator.frames_per_video=240\n"
              "model.d_enc=16\nmodel.heads=2\nmodel.depth_enc=1\n"
              "model.d_dec=8\nmodel.depth_dec=1\nmodel.d_emb=8\n"
              "pretrain.epochs=1\npretrain.batch_size=8\n"
              "contrast.epochs=1\ncontrast.batch_size=8\n"
              "contrast.queue_capacity=16\n")


def _write_cfg(tmp_path, extra=TINY_TRAIN, name="cfg.txt"):
    p = tmp_path / name
    p.write_text(_cfg_text(corpus=str(tmp_path / "corpus"),
                           out=str(tmp_path / "out"), extra=extra))
    return p


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """One gen-data + train(both) + eval run shared by the CLI tests."""
    tmp_path = tmp_path_factory.mktemp("cli")
    cfg = _write_cfg(tmp_path)
    assert main(["gen-data", str(cfg)]) == 0
    assert main(["train", str(cfg), "--stage", "both"]) == 0
    return tmp_path, cfg


def test_gen_data_refuses_non_empty_dir(cli_run, capsys):
    tmp_path, cfg = cli_run
    before = sorted(p.name for p in (tmp_path / "corpus").iterdir())
    mtimes = {p.name: p.stat().st_mtime_ns for p in (tmp_path / "corpus").iterdir()}
    assert main(["gen-data", str(cfg)]) == 2
    after = sorted(p.name for p in (tmp_path / "corpus").iterdir())
    assert after == before
    assert all(p.stat().st_mtime_ns == mtimes[p.name]
               for p in (tmp_path / "corpus").iterdir())
    capsys.readouterr()


def test_gen_data_missing_seed_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("corpus_dir=c\nout_dir=o\n")
    assert main(["gen-data", str(bad)]) == 1
    assert "seed" in capsys.readouterr().err


def test_train_artifacts_present(cli_run):
    tmp_path, _ = cli_run
    out = tmp_path / "out"
    for name in ("pretrain_best.ckpt", "contrast_best.ckpt",
                 "pretrain_log.csv", "contrast_log.csv", "run_config.txt"):
        assert (out / name).exists(), name


def test_config_copy_reproduces_run_config(cli_run):
    tmp_path, cfg = cli_run
    copied = load_config(tmp_path / "out" / "run_config.txt")
    original = load_config(cfg)
    assert serialize_config(copied) == serialize_config(original)


def test_contrast_stage_without_checkpoint_exits_1(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    assert main(["gen-data", str(cfg)]) == 0
    assert main(["train", str(cfg), "--stage", "contrast"]) == 1
    assert "checkpoint" in capsys.readouterr().err
    # --from-scratch lifts the precondition
    assert main(["train", str(cfg), "--stage", "contrast",
                 "--from-scratch"]) == 0


def test_eval_prints_metrics_matching_csv(cli_run, capsys):
    tmp_path, cfg = cli_run
    ckpt = tmp_path / "out" / "contrast_best.ckpt"
    assert main(["eval", str(cfg), str(ckpt), "--mode", "sliding"]) == 0
    line = [l for l in capsys.readouterr().out.splitlines()
            if l.startswith("R@1=")][-1]
    with open(tmp_path / "out" / "retrieval_report_sliding.csv") as fh:
        agg = [r for r in csv.reader(fh) if r and r[0] == "AGGREGATE"][0]
    assert agg[4] == line
    assert (tmp_path / "out" / "retrieval_report_sliding.svg").exists()


def test_eval_both_modes_produce_reports(cli_run, capsys):
    tmp_path, cfg = cli_run
    ckpt = tmp_path / "out" / "contrast_best.ckpt"
    assert main(["eval", str(cfg), str(ckpt), "--mode", "annotated"]) == 0
    capsys.readouterr()
    assert (tmp_path / "out" / "retrieval_report_annotated.csv").exists()
    assert (tmp_path / "out" / "retrieval_report_sliding.csv").exists()


def test_eval_missing_checkpoint_exits_2(cli_run, capsys):
    tmp_path, cfg = cli_run
    assert main(["eval", str(cfg), str(tmp_path / "nope.ckpt")]) == 2
    capsys.readouterr()


def test_report_reprints_metric_line(cli_run, capsys):
    tmp_path, _ = cli_run
    csv_path = tmp_path / "out" / "retrieval_report_sliding.csv"
    assert main(["report", str(csv_path)]) == 0
    out = capsys.readouterr().out.strip()
    assert out.startswith("R@1=") and "mAP=" in out


def test_train_determinism_byte_identical_logs(tmp_path):
    # same config + seed in two separate processes -> identical logs/ckpts
    logs = []
    for run in ("r1", "r2"):
        sub = tmp_path / run
        sub.mkdir()
        cfg = _write_cfg(sub)
        env_cmd = [sys.executable, "-m", "scrl.cli"]
        assert subprocess.run(env_cmd + ["gen-data", str(cfg)],
                              capture_output=True).returncode == 0
        r = subprocess.run(env_cmd + ["train", str(cfg), "--stage", "both"],
                           capture_output=True,
                           env={"SCRL_THREADS": "1", "PATH": "/usr/bin:/bin"},
                           cwd="/root/pkg")
        assert r.returncode == 0, r.stderr
        logs.append(tuple((sub / "out" / n).read_bytes()
                          for n in ("pretrain_log.csv", "contrast_log.csv",
                                    "pretrain_best.ckpt",
                                    "contrast_best.ckpt")))
    assert logs[0] == logs[1]
