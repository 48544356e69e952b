import subprocess
import sys

import pytest

from ovc.cli import main


@pytest.fixture
def clips(tmp_path):
    out = tmp_path / "clips"
    assert main(["generate", "--seed", "4", "--scenario", "crossing", "--out", str(out)]) == 0
    return out


def test_generate_track_render(tmp_path, clips, capsys):
    out = tmp_path / "run"
    assert main(["track", "--in", str(clips), "--out", str(out), "--overlap", "1"]) == 0
    assert "crossing seed=4: id_switches=0" in capsys.readouterr().out
    csv = (out / "metrics.csv").read_text().splitlines()
    assert csv[0] == "scenario,seed,id_switches,assoc_acc,mean_iou" and len(csv) == 2
    assert "overlap=1" in (out / "config.txt").read_text()
    frames = tmp_path / "frames"
    assert main(["render", "--in", str(clips), "--tracks", str(out / "tracks.json"),
                 "--out", str(frames)]) == 0
    assert len(list(frames.glob("frame_*.ppm"))) == 13
    assert (frames / "trajectories.svg").exists()


def test_cli_override_beats_config_file(tmp_path, clips):
    cfg = tmp_path / "c.txt"
    cfg.write_text("beta2=0\noverlap=1\n")
    out = tmp_path / "run"
    assert main(["track", "--config", str(cfg), "--in", str(clips), "--out", str(out),
                 "--beta2", "0.5"]) == 0
    assert "beta2=0.5" in (out / "config.txt").read_text()


def test_losses(clips, capsys):
    assert main(["losses", "--in", str(clips), "--check-grads"]) == 0
    text = capsys.readouterr().out
    assert "clip 0:" in text and "grad giou" in text and "FAIL" not in text


def test_invalid_config_exits_1(tmp_path, clips):
    cfg = tmp_path / "c.txt"
    cfg.write_text("epsilon=1.5\n")
    assert main(["track", "--config", str(cfg), "--in", str(clips),
                 "--out", str(tmp_path / "o")]) == 1


def test_bad_arguments_exit_1():
    assert main(["generate", "--scenario", "nope", "--seed", "1", "--out", "x"]) == 1
    assert main([]) == 1


def test_truncated_record_exits_1(clips, tmp_path):
    f = clips / "clip_0000.json"
    f.write_text(f.read_text()[:40])
    assert main(["track", "--in", str(clips), "--out", str(tmp_path / "o")]) == 1


def test_missing_dir_exits_1(tmp_path):
    assert main(["track", "--in", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 1


def test_gap_only_for_disappear(tmp_path):
    assert main(["generate", "--seed", "1", "--scenario", "static", "--gap", "3",
                 "--out", str(tmp_path)]) == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "ovc", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "selftest" in res.stdout
