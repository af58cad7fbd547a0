"""Scenario script parsing and timeline semantics."""

import numpy as np
import pytest

from ringkit.ringsim.scenario import Scenario, ScenarioError, load_scenario

US = 1_000_000


def test_load_scenario_full(tmp_path):
    path = tmp_path / "walk90.scn"
    path.write_text(
        "# demo scenario\n"
        "name walk-demo\n"
        "seed 42\n"
        "noise snr 10\n"
        "gait_hz 1.8\n"
        "0     75  rest  25.0\n"
        "30    90  walk  25.0   # speeds up\n"
        "90    60  rest  22.5\n"
    )
    scn = load_scenario(path)
    assert scn.name == "walk-demo"
    assert scn.seed == 42
    assert scn.noise_on and scn.ppg_snr_db == 10.0
    assert scn.gait_hz == 1.8
    assert scn.hr_at(0) == 75
    assert scn.hr_at(31 * US) == 90
    assert scn.motion_at(45 * US) == "walk"
    assert scn.ambient_at(100 * US) == 22.5


def test_noise_off(tmp_path):
    path = tmp_path / "quiet.scn"
    path.write_text("seed 1\nnoise off\n0 60 rest 25\n")
    scn = load_scenario(path)
    assert not scn.noise_on


def test_beats_piecewise_exact():
    scn = Scenario(
        name="s", seed=0,
        boundaries_us=np.array([0, 60 * US]),
        hr_bpm=np.array([60.0, 120.0]),
        motion=["rest", "rest"],
        ambient_c=np.array([25.0, 25.0]),
    )
    # 60 beats in the first minute, then 2 per second
    assert scn.beats_at(np.array([60 * US]))[0] == pytest.approx(60.0)
    assert scn.beats_at(np.array([75 * US]))[0] == pytest.approx(60.0 + 30.0)


def test_hr_bounds_enforced():
    with pytest.raises(ScenarioError):
        Scenario.constant("s", seed=0, hr_bpm=250.0)
    with pytest.raises(ScenarioError):
        Scenario.constant("s", seed=0, hr_bpm=20.0)


def test_rows_required(tmp_path):
    path = tmp_path / "empty.scn"
    path.write_text("seed 3\n")
    with pytest.raises(ScenarioError):
        load_scenario(path)


def test_unknown_motion_rejected(tmp_path):
    path = tmp_path / "bad.scn"
    path.write_text("0 60 sprint 25\n")
    with pytest.raises(ScenarioError):
        load_scenario(path)
