"""End-to-end CLI tests through dispatch, checking output and exit codes."""

import json
from pathlib import Path

import pytest

from ringkit.cli import main

SCN = "seed 9\nnoise off\n0 72 rest 25\n"


@pytest.fixture
def world(tmp_path):
    (tmp_path / "rest72.scn").write_text(SCN)
    env_file = tmp_path / "world.cfg"
    env_file.write_text(
        "[env]\n"
        "seed = 11\n"
        "[link]\n"
        "latency_up_ms = 2\n"
        "latency_up_jitter_ms = 0\n"
        "latency_down_ms = 2\n"
        "latency_down_jitter_ms = 0\n"
        "[ring alpha]\n"
        "scenario = rest72.scn\n"
        "rssi_dbm = -50\n"
        "[ring beta]\n"
        "scenario = rest72.scn\n"
        "rssi_dbm = -70\n"
        "rtc_offset_s = 5\n"
        "prelog_total_s = 4\n"
        "prelog_segment_s = 2\n"
    )
    return env_file


def run(env_file, *argv, capsys=None):
    return main(["--env", str(env_file), *argv])


def get_mac(env_file, name, capsys):
    assert run(env_file, "--format", "tsv", "sim") == 0
    for line in capsys.readouterr().out.splitlines()[1:]:
        cols = line.split("\t")
        if cols[0] == name:
            return cols[1]
    raise AssertionError(f"no ring named {name}")


def test_scan_two_rings_sorted(world, capsys):
    assert run(world, "--format", "tsv", "scan") == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "name\tmac\trssi_dbm\tbattery\tfw"
    assert len(lines) == 3
    rssi = [float(l.split("\t")[2]) for l in lines[1:]]
    assert rssi == sorted(rssi, reverse=True)
    assert lines[1].split("\t")[0] == "alpha"


def test_info_dashboard(world, capsys):
    mac = get_mac(world, "alpha", capsys)
    assert run(world, "--format", "tsv", "info", mac) == 0
    out = capsys.readouterr().out
    assert "health\tok" in out
    assert "battery\t100%" in out


def test_calibrate_offset_device(world, capsys):
    mac = get_mac(world, "beta", capsys)
    assert run(world, "calibrate", mac) == 0
    out = capsys.readouterr().out
    assert "converged" in out
    assert "2 iterations" in out


def test_stream_with_tags_exports(world, capsys, tmp_path):
    mac = get_mac(world, "alpha", capsys)
    out_dir = tmp_path / "sess"
    assert run(world, "stream", mac, "--duration", "5", "--tag", "2.0:walking",
               "--tag", "4.0:resting", "--out", str(out_dir)) == 0
    meta = json.loads((out_dir / "metadata.json").read_text())
    assert [a["tag"] for a in meta["annotations"]] == ["walking", "resting"]
    assert meta["gaps"] == []
    assert (out_dir / "ppg.csv").exists()


def test_stream_seed_reproducible(world, capsys, tmp_path):
    mac = get_mac(world, "alpha", capsys)
    outs = []
    for name in ("a", "b"):
        out_dir = tmp_path / name
        assert run(world, "--seed", "77", "stream", mac, "--duration", "3",
                   "--out", str(out_dir)) == 0
        outs.append(b"".join(
            p.read_bytes() for p in sorted(out_dir.iterdir())))
    assert outs[0] == outs[1]


def test_offline_wait_lists_segments(world, capsys):
    mac = get_mac(world, "alpha", capsys)
    assert run(world, "--format", "tsv", "offline", mac,
               "--total", "6", "--segment", "3", "--wait") == 0
    out = capsys.readouterr().out
    assert "armed: 2 segment(s) planned" in out
    rows = [l for l in out.splitlines() if l and l[0].isdigit()]
    assert len(rows) == 2


def test_files_from_prelog(world, capsys):
    mac = get_mac(world, "beta", capsys)
    assert run(world, "--format", "tsv", "files", mac) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3          # header + 2 prelogged segments
    assert all(int(l.split("\t")[2]) == 200 * 38 for l in lines[1:])


def test_fetch_clean(world, capsys, tmp_path):
    mac = get_mac(world, "beta", capsys)
    out = tmp_path / "logs"
    assert run(world, "fetch", mac, "1", "--out", str(out)) == 0
    assert "crc ok" in capsys.readouterr().out
    assert (out / "log_00001.bin").exists()


def test_fetch_corruption_exit_code(world, capsys):
    mac = get_mac(world, "beta", capsys)
    rc = run(world, "fetch", mac, "1", "--inject-corrupt-chunk", "1")
    assert rc == 4
    assert "CrcMismatch" in capsys.readouterr().err


def test_fetch_unknown_file(world, capsys):
    mac = get_mac(world, "alpha", capsys)
    assert run(world, "fetch", mac, "9") == 3
    assert "NoSuchFile" in capsys.readouterr().err


def test_unknown_mac_exit_code(world, capsys):
    assert run(world, "info", "00:00:00:00:00:00") == 3
    assert "UnknownDevice" in capsys.readouterr().err


def test_hr_eval_tsv(tmp_path, capsys):
    scn = tmp_path / "hr80.scn"
    scn.write_text("seed 5\nnoise off\n0 80 rest 25\n")
    out = tmp_path / "eval.tsv"
    assert main(["hr-eval", "--scenario", str(scn), "--duration", "30",
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "scenario\tnoise\tmae_bpm"
    name, noise, mae = lines[1].split("\t")
    assert name == "hr80" and noise == "off"
    assert float(mae) <= 1.0


def test_missing_env_file_is_device_error(capsys):
    assert main(["--env", "/nonexistent.cfg", "scan"]) == 3
