"""Signal processing for the acquisition stack.

PPG heart-rate estimation (band-pass, adaptive peak picking, median
inter-beat interval), IMU activity counting, and the evaluation metric used
to score estimates against scenario ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, filtfilt, find_peaks

HR_BAND_HZ = (0.5, 4.0)         # 30..240 BPM
DETECT_BAND_HZ = (0.5, 10.0)    # peak picking keeps pulse harmonics
ACTIVITY_BAND_HZ = (0.5, 3.0)
BPM_MIN, BPM_MAX = 30.0, 240.0

PEAK_MAD_K = 2.0                # threshold = rolling median + k * rolling MAD
PEAK_REFRACTORY_S = 0.25
THRESHOLD_WIN_S = 8.0           # spans several beats even at 30 BPM

HR_WINDOW_S = 8.0
MIN_PEAKS = 3

ACTIVITY_HYSTERESIS_G = 0.05
GRAVITY_G = 1.0


@dataclass(frozen=True)
class HrEstimate:
    window_start_us: int
    window_end_us: int
    bpm: float
    confidence: float


@dataclass(frozen=True)
class EvalResult:
    scenario_id: str
    mae_bpm: float
    errors_bpm: tuple[float, ...]


def _bandpass_coeffs(band, fs):
    lo, hi = band
    return butter(2, [lo / (fs / 2), hi / (fs / 2)], btype="band")


def bandpass(signal, fs: float, band=HR_BAND_HZ) -> np.ndarray:
    """Zero-phase band-pass (two second-order sections applied forward-backward)."""
    x = np.asarray(signal, dtype=float)
    if len(x) < 16:
        return x - x.mean() if len(x) else x
    b, a = _bandpass_coeffs(band, fs)
    return filtfilt(b, a, x)


def _rolling_median_mad(x: np.ndarray, win: int) -> tuple[np.ndarray, np.ndarray]:
    # centered windows; reflect-padded so edge windows keep real signal statistics.
    # Stats move slowly, so they are computed on a stride and held between points.
    win = max(3, min(win | 1, 2 * len(x) - 1))
    pad = win // 2
    padded = np.pad(x, pad, mode="reflect")
    view = np.lib.stride_tricks.sliding_window_view(padded, win)
    stride = max(1, win // 16)
    idx = np.arange(0, len(x), stride)
    sampled = view[idx]
    med_s = np.median(sampled, axis=1)
    mad_s = np.median(np.abs(sampled - med_s[:, None]), axis=1)
    reps = np.diff(np.append(idx, len(x)))
    return np.repeat(med_s, reps), np.repeat(mad_s, reps)


def detect_peaks(filtered, fs: float) -> np.ndarray:
    """Indices of local maxima above rolling median + k*MAD, 0.25 s refractory."""
    x = np.asarray(filtered, dtype=float)
    if len(x) < 3:
        return np.array([], dtype=int)
    med, mad = _rolling_median_mad(x, round(THRESHOLD_WIN_S * fs))
    height = med + PEAK_MAD_K * mad
    peaks, _ = find_peaks(x, height=height, distance=max(1, round(PEAK_REFRACTORY_S * fs)))
    return peaks


def _refine_peak_times_s(x: np.ndarray, peaks: np.ndarray, fs: float) -> np.ndarray:
    """Sub-sample peak instants via parabolic interpolation around each maximum."""
    times = peaks.astype(float)
    for j, p in enumerate(peaks):
        if 0 < p < len(x) - 1:
            denom = x[p - 1] - 2.0 * x[p] + x[p + 1]
            if denom < 0:
                times[j] = p + 0.5 * (x[p - 1] - x[p + 1]) / denom
    return times / fs


def estimate_hr(window, fs: float, *, window_start_us: int = 0) -> HrEstimate | None:
    """Heart rate over one window from a raw PPG channel; None when withheld.

    Peak picking runs on a wider zero-phase band than the display filter:
    above ~140 BPM the 4 Hz cut strips every harmonic and leaves a sinusoid,
    which the median+MAD threshold cannot separate from its own peaks.
    """
    x = np.asarray(window, dtype=float)
    filtered = bandpass(x, fs, band=DETECT_BAND_HZ)
    peaks = detect_peaks(filtered, fs)
    if len(peaks) < MIN_PEAKS:
        return None
    intervals = np.diff(_refine_peak_times_s(filtered, peaks, fs))
    ibi = float(np.median(intervals))
    if ibi <= 0:
        return None
    bpm = 60.0 / ibi
    if not BPM_MIN <= bpm <= BPM_MAX:
        return None
    dispersion = float(np.median(np.abs(intervals - ibi)) / ibi)
    end_us = window_start_us + round(len(x) / fs * 1e6)
    return HrEstimate(
        window_start_us=window_start_us,
        window_end_us=end_us,
        bpm=bpm,
        confidence=max(0.0, min(1.0, 1.0 - dispersion)),
    )


def activity_counts(accel_g, fs: float) -> int:
    """Movement count: hysteresis threshold crossings of band-passed |accel|-1g.

    accel_g is (n, 3) in g units.
    """
    a = np.asarray(accel_g, dtype=float)
    if a.ndim != 2 or a.shape[1] != 3 or len(a) < 16:
        return 0
    magnitude = np.sqrt((a ** 2).sum(axis=1)) - GRAVITY_G
    x = bandpass(magnitude, fs, band=ACTIVITY_BAND_HZ)
    count = 0
    armed = True
    for v in x:
        if armed and v >= ACTIVITY_HYSTERESIS_G:
            count += 1
            armed = False
        elif not armed and v < 0.0:
            armed = True
    return count


def mae(estimates_bpm, reference_bpm) -> float:
    """Mean absolute error between two aligned BPM series."""
    est = np.asarray(estimates_bpm, dtype=float)
    ref = np.asarray(reference_bpm, dtype=float)
    if est.shape != ref.shape:
        raise ValueError("series must be aligned to the same length")
    if est.size == 0:
        raise ValueError("empty series")
    return float(np.mean(np.abs(est - ref)))


def sliding_hr_series(signal, fs: float, *, start_us: int = 0,
                      window_s: float = HR_WINDOW_S, step_s: float = 1.0):
    """All HR estimates over a signal with a sliding window; skips withheld ones."""
    x = np.asarray(signal, dtype=float)
    win = round(window_s * fs)
    step = round(step_s * fs)
    out: list[HrEstimate] = []
    for i0 in range(0, len(x) - win + 1, step):
        est = estimate_hr(x[i0:i0 + win], fs,
                          window_start_us=start_us + round(i0 / fs * 1e6))
        if est is not None:
            out.append(est)
    return out


def evaluate_against_scenario(scn, signal, fs: float, *, start_us: int = 0) -> EvalResult:
    """Score the HR pipeline on a synthetic channel against its generating script."""
    ests = sliding_hr_series(signal, fs, start_us=start_us)
    if not ests:
        return EvalResult(scn.name, float("nan"), ())
    mids = np.array([(e.window_start_us + e.window_end_us) // 2 for e in ests])
    ref = scn.hr_at(mids)
    errs = tuple(float(abs(e.bpm - r)) for e, r in zip(ests, ref))
    return EvalResult(scn.name, float(np.mean(errs)), errs)
