"""Ground-truth scenario scripts that drive the synthetic sensors.

A scenario is a piecewise-constant timeline of heart rate, motion class and
ambient temperature plus a noise switch and seed.  It is the oracle the
signal-processing evaluation is scored against, so everything here is an
exact function of absolute time: no stateful integration, no hidden RNG
stream position.  The on-disk format is documented in docs/SCENARIO.md.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

US = 1_000_000

MOTION_REST = "rest"
MOTION_WALK = "walk"
MOTION_TRACE = "trace"

HR_MIN_BPM = 40.0
HR_MAX_BPM = 200.0


class ScenarioError(Exception):
    pass


class TraceExhausted(Exception):
    """A scripted IMU trace was sampled past its last row."""


@dataclass
class ImuTrace:
    """Timestamped 6-axis rows replayed as the IMU signal (zero-order hold)."""

    t_us: np.ndarray          # int64, strictly increasing
    values: np.ndarray        # float (n, 6): ax ay az [g], gx gy gz [dps]

    @classmethod
    def load(cls, path: str | Path) -> "ImuTrace":
        rows = np.loadtxt(path, delimiter=",", ndmin=2)
        if rows.shape[1] != 7:
            raise ScenarioError(f"{path}: IMU trace rows must be t_us,ax,ay,az,gx,gy,gz")
        t = rows[:, 0].astype(np.int64)
        if len(t) == 0 or np.any(np.diff(t) <= 0):
            raise ScenarioError(f"{path}: trace timestamps must be strictly increasing")
        return cls(t_us=t, values=rows[:, 1:])

    def sample(self, t_us: np.ndarray) -> np.ndarray:
        t_us = np.asarray(t_us, dtype=np.int64)
        if t_us.size and int(t_us.max()) > int(self.t_us[-1]):
            raise TraceExhausted(
                f"trace ends at {int(self.t_us[-1])} us, sampled at {int(t_us.max())} us")
        idx = np.searchsorted(self.t_us, t_us, side="right") - 1
        idx = np.clip(idx, 0, len(self.t_us) - 1)
        return self.values[idx]


@dataclass
class Scenario:
    """Seeded ground-truth script: hr(t), motion(t), ambient(t)."""

    name: str
    seed: int
    boundaries_us: np.ndarray       # int64 segment starts, boundaries_us[0] == 0
    hr_bpm: np.ndarray              # per segment
    motion: list[str]               # per segment: rest | walk | trace
    ambient_c: np.ndarray           # per segment
    noise_on: bool = True
    ppg_snr_db: float | None = None  # additive PPG noise level; None = no added noise
    gait_hz: float = 2.0
    trace: ImuTrace | None = None
    _beats_at: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.boundaries_us = np.asarray(self.boundaries_us, dtype=np.int64)
        self.hr_bpm = np.asarray(self.hr_bpm, dtype=float)
        self.ambient_c = np.asarray(self.ambient_c, dtype=float)
        n = len(self.boundaries_us)
        if n == 0 or self.boundaries_us[0] != 0:
            raise ScenarioError("timeline must start at t=0")
        if len(self.hr_bpm) != n or len(self.motion) != n or len(self.ambient_c) != n:
            raise ScenarioError("timeline columns must have equal length")
        if np.any(np.diff(self.boundaries_us) <= 0):
            raise ScenarioError("timeline rows must be strictly increasing in time")
        if np.any(self.hr_bpm < HR_MIN_BPM) or np.any(self.hr_bpm > HR_MAX_BPM):
            raise ScenarioError(f"hr must lie in [{HR_MIN_BPM:.0f}, {HR_MAX_BPM:.0f}] BPM")
        for m in self.motion:
            if m not in (MOTION_REST, MOTION_WALK, MOTION_TRACE):
                raise ScenarioError(f"unknown motion class {m!r}")
        if MOTION_TRACE in self.motion and self.trace is None:
            raise ScenarioError("motion 'trace' needs an IMU trace file")
        # cumulative beats at each boundary makes phase an exact function of t
        durs = np.diff(self.boundaries_us) / US
        beats = np.concatenate([[0.0], np.cumsum(durs * self.hr_bpm[:-1] / 60.0)])
        self._beats_at = beats

    @classmethod
    def constant(cls, name: str, seed: int, hr_bpm: float, motion: str = MOTION_REST,
                 ambient_c: float = 25.0, **kw) -> "Scenario":
        return cls(name=name, seed=seed, boundaries_us=np.array([0]),
                   hr_bpm=np.array([hr_bpm]), motion=[motion],
                   ambient_c=np.array([ambient_c]), **kw)

    def _segment(self, t_us) -> np.ndarray:
        t = np.asarray(t_us, dtype=np.int64)
        return np.clip(np.searchsorted(self.boundaries_us, t, side="right") - 1, 0, None)

    def hr_at(self, t_us) -> np.ndarray:
        return self.hr_bpm[self._segment(t_us)]

    def ambient_at(self, t_us) -> np.ndarray:
        return self.ambient_c[self._segment(t_us)]

    def motion_at(self, t_us: int) -> str:
        return self.motion[int(self._segment(t_us))]

    def motion_masks(self, t_us: np.ndarray) -> dict[str, np.ndarray]:
        seg = self._segment(t_us)
        codes = np.array([{MOTION_REST: 0, MOTION_WALK: 1, MOTION_TRACE: 2}[m]
                          for m in self.motion])
        at = codes[seg]
        return {MOTION_REST: at == 0, MOTION_WALK: at == 1, MOTION_TRACE: at == 2}

    def beats_at(self, t_us) -> np.ndarray:
        """Cumulative heart beats since t=0 (exact piecewise-linear phase)."""
        t = np.asarray(t_us, dtype=np.int64)
        seg = self._segment(t)
        dt_s = (t - self.boundaries_us[seg]) / US
        return self._beats_at[seg] + dt_s * self.hr_bpm[seg] / 60.0


def load_scenario(path: str | Path) -> Scenario:
    """Parse the plain-text scenario format (see docs/SCENARIO.md)."""
    path = Path(path)
    name = path.stem
    seed = 0
    noise_on = True
    snr: float | None = None
    gait = 2.0
    rows: list[tuple[float, float, str, float]] = []
    trace_path: Path | None = None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0].lower()
        if key == "name" and len(parts) == 2:
            name = parts[1]
        elif key == "seed" and len(parts) == 2:
            seed = int(parts[1])
        elif key == "gait_hz" and len(parts) == 2:
            gait = float(parts[1])
        elif key == "noise":
            if parts[1:] == ["off"]:
                noise_on = False
            elif parts[1:] == ["on"]:
                noise_on = True
            elif len(parts) == 3 and parts[1] == "snr":
                noise_on, snr = True, float(parts[2])
            else:
                raise ScenarioError(f"{path}:{lineno}: noise must be off|on|snr <dB>")
        elif key == "trace" and len(parts) == 2:
            trace_path = path.parent / parts[1]
        else:
            if len(parts) != 4:
                raise ScenarioError(
                    f"{path}:{lineno}: timeline rows are 't_s hr_bpm motion ambient_c'")
            t_s, hr, motion, amb = float(parts[0]), float(parts[1]), parts[2].lower(), float(parts[3])
            rows.append((t_s, hr, motion, amb))
    if not rows:
        raise ScenarioError(f"{path}: no timeline rows")
    rows.sort(key=lambda r: r[0])
    trace = ImuTrace.load(trace_path) if trace_path else None
    return Scenario(
        name=name,
        seed=seed,
        boundaries_us=np.array([round(r[0] * US) for r in rows], dtype=np.int64),
        hr_bpm=np.array([r[1] for r in rows]),
        motion=[r[2] for r in rows],
        ambient_c=np.array([r[3] for r in rows]),
        noise_on=noise_on,
        ppg_snr_db=snr,
        gait_hz=gait,
        trace=trace,
    )
