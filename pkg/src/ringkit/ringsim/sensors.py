"""Synthetic sensor models: three-channel PPG, 6-axis IMU, three-point temperature.

Every output is an exact function of (scenario seed, channel lane, absolute
tick time), including the noise, which comes from a counter-style hash
rather than a sequential RNG.  That makes emissions bit-identical no matter
how a simulation run is partitioned into steps.
"""

from __future__ import annotations

import numpy as np

from ringkit.ringsim.scenario import (
    MOTION_TRACE,
    MOTION_WALK,
    Scenario,
)

US = 1_000_000

# ---- PPG front end ----------------------------------------------------
PPG_DARK_COUNTS = 2000.0        # ADC floor with LEDs off
PPG_DC_PER_CODE = 1500.0        # DC counts per LED drive code
PPG_AC_FRACTION = 0.025         # pulsatile amplitude relative to driven DC
PPG_CHANNEL_GAIN = (1.0, 0.85, 1.15)   # per-wavelength coupling
PPG_MAX = (1 << 24) - 1

PULSE_CENTERS = (0.20, 0.55)    # systolic and dicrotic positions in the cycle
PULSE_WIDTHS = (0.07, 0.12)
PULSE_AMPS = (1.0, 0.30)

WALK_ARTIFACT_REL = 0.18        # gait artifact amplitude relative to AC

# ---- IMU --------------------------------------------------------------
ACCEL_LSB_PER_G = 2048.0        # +/-16 g full scale in int16
GYRO_LSB_PER_DPS = 8.192        # +/-4000 dps full scale in int16
ACCEL_NOISE_G = 0.01
GYRO_NOISE_DPS = 0.5
WALK_ACCEL_AMP_G = 0.30

# ---- temperature ------------------------------------------------------
SKIN_TEMP_C = 33.0
INNER_TAU_S = 120.0
TEMP_NOISE_C = 0.05

# noise lanes, one per physical channel
LANE_PPG = (0, 1, 2)
LANE_ACCEL = (3, 4, 5)
LANE_GYRO = (6, 7, 8)
LANE_TEMP = (9, 10, 11)
LANE_JITTER = (12, 13, 14)      # per-modality sampling jitter


_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_U32 = np.uint64(0xFFFFFFFF)


def _splitmix(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64, copy=True)
    x ^= x >> np.uint64(30)
    x *= _M1
    x ^= x >> np.uint64(27)
    x *= _M2
    x ^= x >> np.uint64(31)
    return x


def _hash64(seed: int, lane: int, t_us: np.ndarray) -> np.ndarray:
    mask = 0xFFFFFFFFFFFFFFFF
    key = np.uint64(((seed & mask) * 0x9E3779B97F4A7C15 & mask)
                    ^ (lane * 0xC2B2AE3D27D4EB4F & mask))
    return _splitmix(np.asarray(t_us, dtype=np.uint64) * _GOLDEN ^ key)


def uniform_field(seed: int, lane: int, t_us: np.ndarray) -> np.ndarray:
    """Deterministic U[0,1) keyed by (seed, lane, time)."""
    return (_hash64(seed, lane, t_us) >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def gauss_field(seed: int, lane: int, t_us: np.ndarray) -> np.ndarray:
    """Deterministic standard normals keyed by (seed, lane, time)."""
    h = _hash64(seed, lane, t_us)
    u1 = ((h >> np.uint64(32)).astype(np.float64) + 1.0) / float(1 << 32)
    u2 = (h & _U32).astype(np.float64) / float(1 << 32)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def pulse_waveform(phase_frac: np.ndarray) -> np.ndarray:
    """Two-gaussian systolic/dicrotic pulse template over one cardiac cycle."""
    phase_frac = np.asarray(phase_frac, dtype=float)
    out = np.zeros_like(phase_frac)
    for c, w, a in zip(PULSE_CENTERS, PULSE_WIDTHS, PULSE_AMPS):
        out += a * np.exp(-0.5 * ((phase_frac - c) / w) ** 2)
    return out


_grid = np.arange(0.0, 1.0, 1e-4)
_tmpl = pulse_waveform(_grid)
PULSE_TEMPLATE_MEAN = float(_tmpl.mean())
PULSE_TEMPLATE_RMS = float(np.sqrt(np.mean((_tmpl - _tmpl.mean()) ** 2)))
del _grid, _tmpl


def ppg_synth(scn: Scenario, t_us: np.ndarray, led: tuple[int, int, int]) -> np.ndarray:
    """Three channels of 24-bit PPG counts at the given tick times, shape (n, 3)."""
    t_us = np.atleast_1d(np.asarray(t_us, dtype=np.int64))
    t_s = t_us / US
    beats = scn.beats_at(t_us)
    pulse = pulse_waveform(np.mod(beats, 1.0))
    walk = scn.motion_masks(t_us)[MOTION_WALK]
    gait = 0.0
    if walk.any():
        w = 2.0 * np.pi * scn.gait_hz * t_s
        gait = walk * (np.sin(w + 1.3) + 0.3 * np.sin(2.0 * w + 0.7))
    out = np.empty((len(t_us), 3), dtype=np.uint32)
    for ch in range(3):
        drive = PPG_DC_PER_CODE * led[ch] * PPG_CHANNEL_GAIN[ch]
        dc = PPG_DARK_COUNTS + drive
        ac = PPG_AC_FRACTION * drive
        sig = dc + ac * pulse + WALK_ARTIFACT_REL * ac * gait
        if scn.noise_on and scn.ppg_snr_db is not None:
            sigma = ac * PULSE_TEMPLATE_RMS / (10.0 ** (scn.ppg_snr_db / 20.0))
            sig = sig + sigma * gauss_field(scn.seed, LANE_PPG[ch], t_us)
        out[:, ch] = np.clip(np.rint(sig), 0, PPG_MAX).astype(np.uint32)
    return out


def imu_synth(scn: Scenario, t_us: np.ndarray) -> np.ndarray:
    """6-axis IMU counts (ax ay az gx gy gz) at the tick times, shape (n, 6) int16."""
    t_us = np.atleast_1d(np.asarray(t_us, dtype=np.int64))
    n = len(t_us)
    t_s = t_us / US
    accel = np.zeros((n, 3))
    accel[:, 2] = 1.0                      # gravity on z while worn
    gyro = np.zeros((n, 3))
    masks = scn.motion_masks(t_us)
    walk = masks[MOTION_WALK]
    if walk.any():
        w = 2.0 * np.pi * scn.gait_hz * t_s
        accel[:, 2] += walk * WALK_ACCEL_AMP_G * np.sin(w)
        accel[:, 0] += walk * 0.5 * WALK_ACCEL_AMP_G * np.sin(w + np.pi / 3)
        accel[:, 1] += walk * 0.25 * WALK_ACCEL_AMP_G * np.sin(w + 0.4)
        gyro[:, 0] += walk * 40.0 * np.sin(w + 0.5)
        gyro[:, 1] += walk * 25.0 * np.sin(w + 1.2)
        gyro[:, 2] += walk * 10.0 * np.sin(w + 2.0)
    traced = masks[MOTION_TRACE]
    if traced.any():
        rows = scn.trace.sample(t_us[traced])
        accel[traced] = rows[:, 0:3]
        gyro[traced] = rows[:, 3:6]
    if scn.noise_on:
        for ax in range(3):
            accel[:, ax] += ACCEL_NOISE_G * gauss_field(scn.seed, LANE_ACCEL[ax], t_us)
            gyro[:, ax] += GYRO_NOISE_DPS * gauss_field(scn.seed, LANE_GYRO[ax], t_us)
    out = np.empty((n, 6), dtype=np.int16)
    out[:, 0:3] = np.clip(np.rint(accel * ACCEL_LSB_PER_G), -32768, 32767)
    out[:, 3:6] = np.clip(np.rint(gyro * GYRO_LSB_PER_DPS), -32768, 32767)
    return out


def temp_synth(scn: Scenario, t_us: np.ndarray) -> np.ndarray:
    """Three temperatures (inner, inner, outer) in centi-degrees C, shape (n, 3) int16."""
    t_us = np.atleast_1d(np.asarray(t_us, dtype=np.int64))
    n = len(t_us)
    t_s = t_us / US
    amb0 = float(scn.ambient_at(np.array([0]))[0])
    inner = SKIN_TEMP_C + (amb0 - SKIN_TEMP_C) * np.exp(-t_s / INNER_TAU_S)
    outer = scn.ambient_at(t_us)
    cols = [inner, inner.copy(), outer.astype(float)]
    out = np.empty((n, 3), dtype=np.int16)
    for ch in range(3):
        sig = cols[ch]
        if scn.noise_on:
            sig = sig + TEMP_NOISE_C * gauss_field(scn.seed, LANE_TEMP[ch], t_us)
        out[:, ch] = np.clip(np.rint(sig * 100.0), -32768, 32767)
    return out


def jitter_us(scn: Scenario, modality: int, t_us: int, cap_us: int) -> int:
    """Per-modality sampling jitter in [0, cap_us], deterministic per tick."""
    u = float(uniform_field(scn.seed, LANE_JITTER[modality], np.array([t_us]))[0])
    return int(u * (cap_us + 1))
