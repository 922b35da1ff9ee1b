"""
Tests for the command-line surface
"""
import json
import logging

import pytest

from htr.cli.commands import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, build_parser, parse_bool, run
from htr.main import configure_logging

TINY_FLAGS = [
    "--image-height", "32", "--max-width", "256", "--width-scale", "0.0625",
    "--d-model", "16", "--heads", "2", "--enc-layers", "1", "--dec-layers", "1",
    "--d-ff", "32", "--dropout", "0", "--max-target-len", "16", "--proj-depth", "1",
]


@pytest.fixture
def lexicon_file(tmp_path, lexicon):
    path = tmp_path / "lexicon.txt"
    path.write_text("\n".join(lexicon) + "\n\n", encoding="utf-8")
    return path


def synth(tmp_path, lexicon_file, *extra):
    return run(["synth", "--glyphs", "procedural", "--lexicon", str(lexicon_file),
                "--out", str(tmp_path / "corpus"), "--height", "32", *extra])


def manifest_rows(tmp_path):
    return (tmp_path / "corpus" / "manifest.tsv").read_text(encoding="utf-8").splitlines()


def test_usage_errors(capsys):
    """Test missing subcommands, unknown subcommands and missing options"""
    assert run([]) == EXIT_USAGE
    assert run(["bogus"]) == EXIT_USAGE
    assert run(["eval", "--ckpt", "x.htr"]) == EXIT_USAGE
    assert run(["gradcheck", "--points", "many"]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "--manifest is required" in err


def test_help_exits_cleanly(capsys):
    """Test --help"""
    assert run(["train", "--help"]) == EXIT_OK
    assert "--val-fraction" in capsys.readouterr().out


def test_parser_lists_every_subcommand():
    """Test the registered subcommands"""
    help_text = build_parser().format_help()
    for name in ("synth", "train", "eval", "predict", "gradcheck"):
        assert name in help_text


def test_parse_bool():
    """Test config-file booleans"""
    assert parse_bool("Yes") is True and parse_bool("0") is False
    with pytest.raises(ValueError):
        parse_bool("maybe")


def test_synth_writes_corpus(tmp_path, lexicon_file, capsys):
    """Test synthetic corpus generation with procedural glyphs"""
    assert synth(tmp_path, lexicon_file, "--count", "3") == EXIT_OK
    assert capsys.readouterr().out.strip().endswith("manifest.tsv")
    assert len(manifest_rows(tmp_path)) == 3


def test_config_file_and_flag_precedence(tmp_path, lexicon_file):
    """Test that flags beat file values and file values beat defaults"""
    config = tmp_path / "synth.env"
    config.write_text("count = 5\nseed = 4\n", encoding="utf-8")

    assert synth(tmp_path, lexicon_file, "--config", str(config)) == EXIT_OK
    assert len(manifest_rows(tmp_path)) == 5

    assert synth(tmp_path, lexicon_file, "--config", str(config), "--count", "2") == EXIT_OK
    assert len(manifest_rows(tmp_path)) == 2


def test_config_file_errors(tmp_path, lexicon_file):
    """Test unknown keys, bad values and missing files"""
    config = tmp_path / "bad.env"
    config.write_text("colour = blue\n", encoding="utf-8")
    assert synth(tmp_path, lexicon_file, "--config", str(config)) == EXIT_USAGE
    config.write_text("count = lots\n", encoding="utf-8")
    assert synth(tmp_path, lexicon_file, "--config", str(config)) == EXIT_USAGE
    assert synth(tmp_path, lexicon_file, "--config", str(tmp_path / "none.env")) == EXIT_USAGE


def test_runtime_errors_exit_2(tmp_path, lexicon_file, capsys):
    """Test missing inputs and corrupted checkpoints"""
    assert run(["synth", "--glyphs", "procedural", "--lexicon", str(tmp_path / "none.txt"),
                "--out", str(tmp_path)]) == EXIT_RUNTIME
    bogus = tmp_path / "bogus.htr"
    bogus.write_bytes(b"garbage")
    assert run(["predict", "--image", "x.png", "--ckpt", str(bogus)]) == EXIT_RUNTIME
    assert "error:" in capsys.readouterr().err


def test_invalid_training_settings_are_usage_errors(tmp_path, lexicon_file):
    """Test that configuration validation failures exit 1"""
    synth(tmp_path, lexicon_file, "--count", "2")
    manifest = str(tmp_path / "corpus" / "manifest.tsv")
    assert run(["train", "--manifest", manifest, "--out", str(tmp_path / "run"), "--lr", "-1"]) == EXIT_USAGE
    assert run(["train", "--manifest", manifest, "--out", str(tmp_path / "run"), "--image-height", "40"]) == EXIT_USAGE


def test_train_eval_predict(tmp_path, lexicon_file, capsys):
    """Test the end-to-end command flow on a tiny model"""
    assert synth(tmp_path, lexicon_file, "--count", "6") == EXIT_OK
    manifest = str(tmp_path / "corpus" / "manifest.tsv")
    run_dir = tmp_path / "run"
    capsys.readouterr()

    code = run(["train", "--manifest", manifest, "--out", str(run_dir), "--max-steps", "2",
                "--batch-size", "2", "--eval-every", "2", "--prefetch", "0", *TINY_FLAGS])
    assert code == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["step"] == 2
    assert (run_dir / "checkpoint.htr").is_file()

    ckpt = str(run_dir / "checkpoint.htr")
    assert run(["eval", "--manifest", manifest, "--ckpt", ckpt, "--json"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert len(report["samples"]) == 6
    assert {"corpus_cer", "corpus_wer"} <= set(report)
    assert "del" in report["samples"][0]["char_edits"]

    assert run(["eval", "--manifest", manifest, "--ckpt", ckpt, "--beam", "2"]) == EXIT_OK
    assert "corpus CER" in capsys.readouterr().out

    image = str(tmp_path / "corpus" / "line_00000.png")
    assert run(["predict", "--image", image, "--ckpt", ckpt]) == EXIT_OK
    assert run(["predict", "--image", str(tmp_path / "missing.png"), "--ckpt", ckpt]) == EXIT_RUNTIME


def test_gradcheck_command(capsys):
    """Test a selected gradient check and an unknown case name"""
    assert run(["gradcheck", "--only", "relu,softmax", "--points", "1"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "relu" in out and "ok" in out
    assert run(["gradcheck", "--only", "nope"]) == EXIT_USAGE


def test_configure_logging_levels():
    """Test HTR_LOG levels and the fallback for unknown values"""
    configure_logging("debug")
    assert logging.getLogger().level == logging.DEBUG
    configure_logging("chatty")
    assert logging.getLogger().level == logging.INFO
    configure_logging("error")
    assert logging.getLogger().level == logging.ERROR
    configure_logging("info")
