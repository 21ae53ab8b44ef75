"""Synthetic pressure traces for a propeller sweeping past a cylindrical sensor array.

The surrogate signal seen by one sensor is a Gaussian lateral envelope
centred on the sensor's lateral offset, scaled by an inverse-square law in
the longitudinal gap, plus a blade-rate pulsation riding on the same
envelope, plus white sensor noise. Sweep direction flips the temporal
trend, speed sets how fast the envelope is traversed and the lateral
position sets the relative magnitudes across sensors.
"""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DIRECTIONS = ("P", "N")


@dataclass(frozen=True)
class SensorGeometry:
    radius: float = 40.0  # mm
    angles: tuple[float, ...] = (-45.0, 0.0, 45.0)  # degrees

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        if self.radius <= 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not self.angles:
            raise ValueError("at least one sensor angle is required")
        if any(b <= a for a, b in zip(self.angles, self.angles[1:])):
            raise ValueError(f"sensor angles must be strictly increasing: {self.angles}")

    @property
    def count(self) -> int:
        return len(self.angles)

    def offsets(self) -> np.ndarray:
        """Lateral position of each sensor, ``radius * sin(angle)`` in mm."""
        return self.radius * np.sin(np.deg2rad(self.angles))


@dataclass(frozen=True)
class NoiseParams:
    pulsation_amp: float = 5.0  # Pa, at the envelope peak
    blade_rate: float = 25.0  # Hz
    gaussian_sigma: float = 1.0  # Pa
    bias_per_sensor: tuple[float, ...] = (980.0, 984.0, 977.0)  # Pa, still-water offsets

    def __post_init__(self):
        object.__setattr__(self, "bias_per_sensor", tuple(float(b) for b in self.bias_per_sensor))
        if min(self.pulsation_amp, self.blade_rate, self.gaussian_sigma) < 0:
            raise ValueError("noise amplitudes and blade rate must be non-negative")

    @classmethod
    def silent(cls, n_sensors: int = 3) -> "NoiseParams":
        return cls(0.0, 0.0, 0.0, (0.0,) * n_sensors)


@dataclass(frozen=True)
class WakeModel:
    amplitude: float = 30.0  # Pa, envelope peak at y_ref
    width: float = 60.0  # mm, lateral standard deviation of the envelope
    y_ref: float = 250.0  # mm

    def __post_init__(self):
        if self.amplitude < 0 or self.width <= 0 or self.y_ref <= 0:
            raise ValueError("wake amplitude must be >= 0, width and y_ref > 0")


@dataclass(frozen=True)
class Scenario:
    y: float  # mm, longitudinal gap
    v: float  # mm/s, lateral speed
    d: str  # "P" sweeps towards +x, "N" towards -x
    x_start: float | None = None  # mm; defaults to -175 for P, +175 for N
    x_end: float | None = None
    dt: float = 0.002  # s
    seed: int = 0
    noise: NoiseParams = field(default_factory=NoiseParams)
    wake: WakeModel = field(default_factory=WakeModel)
    still_samples: int = 100  # stationary, non-rotating lead-in used for debiasing

    def __post_init__(self):
        if self.d not in DIRECTIONS:
            raise ValueError(f"direction must be P or N, got {self.d!r}")
        sign = 1.0 if self.d == "P" else -1.0
        if self.x_start is None:
            object.__setattr__(self, "x_start", -175.0 * sign)
        if self.x_end is None:
            object.__setattr__(self, "x_end", 175.0 * sign)
        for name in ("y", "v", "dt", "x_start", "x_end"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.y <= 0 or self.v <= 0 or self.dt <= 0:
            raise ValueError("y, v and dt must be positive")
        if self.x_start == self.x_end:
            raise ValueError("x_start and x_end must differ")
        if math.copysign(1.0, self.x_end - self.x_start) != sign:
            raise ValueError(f"sweep {self.x_start} -> {self.x_end} disagrees with direction {self.d}")
        if self.still_samples < 0:
            raise ValueError("still_samples must be >= 0")

    @property
    def sweep_samples(self) -> int:
        duration = abs(self.x_end - self.x_start) / self.v
        return int(math.floor(duration / self.dt + 1e-9)) + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        d["noise"] = NoiseParams(**d.get("noise", {}))
        d["wake"] = WakeModel(**d.get("wake", {}))
        return cls(**d)


@dataclass
class PressureTrace:
    """One trial: ``frames[k]`` holds all sensor readings at ``times[k]``.

    ``x`` is the true lateral position (mm unless normalised), ``v`` the
    lateral speed (0 while the propeller is parked) and ``d`` the sweep
    direction label, all aligned with ``frames``.
    """
    times: np.ndarray
    frames: np.ndarray
    x: np.ndarray
    v: np.ndarray
    d: np.ndarray
    scenario: Scenario | None = None

    def __post_init__(self):
        n = len(self.times)
        if not (len(self.frames) == len(self.x) == len(self.v) == len(self.d) == n):
            raise ValueError("trace columns must have equal length")
        if self.frames.ndim != 2:
            raise ValueError("frames must be (samples, sensors)")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def n_sensors(self) -> int:
        return self.frames.shape[1]

    def subset(self, mask) -> "PressureTrace":
        return PressureTrace(self.times[mask], self.frames[mask], self.x[mask],
                             self.v[mask], self.d[mask], self.scenario)


def pressure_at(x_rel, y, sensor_angle, t, params: NoiseParams,
                rng: np.random.Generator | None = None, *, wake: WakeModel = WakeModel(),
                radius: float = 40.0, phase: float = 0.0):
    """Wake pressure (Pa, bias excluded) at one sensor for propeller position ``x_rel``.

    Array arguments broadcast. Gaussian noise is drawn from ``rng``, which
    is required whenever ``params.gaussian_sigma > 0``.
    """
    x_rel, y, t = (np.asarray(a, dtype=float) for a in (x_rel, y, t))
    if not (np.all(np.isfinite(x_rel)) and np.all(np.isfinite(y)) and np.all(np.isfinite(t))
            and math.isfinite(sensor_angle) and math.isfinite(phase)):
        raise ValueError("pressure_at inputs must be finite")
    if np.any(y <= 0):
        raise ValueError("longitudinal offset y must be positive")
    x_off = radius * math.sin(math.radians(sensor_angle))
    envelope = np.exp(-((x_rel - x_off) ** 2) / (2.0 * wake.width ** 2)) * (wake.y_ref / y) ** 2
    p = envelope * (wake.amplitude
                    + params.pulsation_amp * np.sin(2.0 * np.pi * params.blade_rate * t + phase))
    if params.gaussian_sigma > 0:
        if rng is None:
            raise ValueError("an rng is required when gaussian_sigma > 0")
        p = p + params.gaussian_sigma * rng.standard_normal(np.shape(p))
    return p


def simulate_trial(scenario: Scenario, geometry: SensorGeometry = SensorGeometry(),
                   min_sweep_samples: int = 128) -> PressureTrace:
    """Simulate one constant-speed sweep preceded by a parked, still-water segment.

    ``min_sweep_samples`` guards against sampling too coarse for windowing
    (twice the longest window used downstream).
    """
    noise = scenario.noise
    n_sensors = geometry.count
    bias = np.asarray(noise.bias_per_sensor, dtype=float)
    if bias.size == 0:
        bias = np.zeros(n_sensors)
    if bias.size != n_sensors:
        raise ValueError(f"bias_per_sensor has {bias.size} entries for {n_sensors} sensors")
    n_sweep = scenario.sweep_samples
    if n_sweep < min_sweep_samples:
        raise ValueError(f"dt={scenario.dt} gives {n_sweep} sweep samples, "
                         f"fewer than the required {min_sweep_samples}")
    rng = np.random.default_rng(scenario.seed)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    n_still = scenario.still_samples
    sign = 1.0 if scenario.d == "P" else -1.0

    k = np.arange(n_sweep)
    t_sweep = k * scenario.dt
    x_sweep = scenario.x_start + sign * scenario.v * t_sweep
    sweep = np.empty((n_sweep, n_sensors))
    for i, angle in enumerate(geometry.angles):
        sweep[:, i] = pressure_at(x_sweep, scenario.y, angle, t_sweep, noise, rng,
                                  wake=scenario.wake, radius=geometry.radius, phase=phase)
    still = np.zeros((n_still, n_sensors))
    if noise.gaussian_sigma > 0:
        still += noise.gaussian_sigma * rng.standard_normal(still.shape)

    frames = np.vstack([still, sweep]) + bias
    n = n_still + n_sweep
    times = np.arange(n) * scenario.dt
    x = np.concatenate([np.full(n_still, scenario.x_start), x_sweep])
    v = np.concatenate([np.zeros(n_still), np.full(n_sweep, float(scenario.v))])
    d = np.full(n, scenario.d)
    return PressureTrace(times, frames, x, v, d, scenario)


def scenario_grid(offsets: Iterable[float] = (250.0, 300.0),
                  speeds: Iterable[float] = (400.0, 500.0, 600.0, 700.0, 800.0),
                  directions: Iterable[str] = DIRECTIONS, **common) -> list[Scenario]:
    """Full factorial over offsets x speeds x directions."""
    return [Scenario(y=float(y), v=float(v), d=d, **common)
            for y, v, d in itertools.product(offsets, speeds, directions)]


def derive_seed(corpus_seed: int, scenario_index: int, repeat: int) -> int:
    ss = np.random.SeedSequence([corpus_seed, scenario_index, repeat])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def generate_corpus(scenarios: Sequence[Scenario], geometry: SensorGeometry = SensorGeometry(),
                    repeats: int = 10, seed: int = 0,
                    min_sweep_samples: int = 128) -> list[PressureTrace]:
    """``repeats`` independent trials per scenario, each with its own derived seed."""
    if not scenarios:
        raise ValueError("scenario list is empty")
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    traces = []
    for i, sc in enumerate(scenarios):
        for r in range(repeats):
            trial = replace(sc, seed=derive_seed(seed, i, r))
            traces.append(simulate_trial(trial, geometry, min_sweep_samples))
    return traces


# --------------------------------------------------------------------------
# files

def trace_to_csv(trace: PressureTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *(f"p{i}" for i in range(trace.n_sensors)), "x", "v", "d"])
    for k in range(len(trace)):
        w.writerow([repr(float(trace.times[k])), *(repr(float(p)) for p in trace.frames[k]),
                    repr(float(trace.x[k])), repr(float(trace.v[k])), str(trace.d[k])])
    return buf.getvalue()


def write_trace_csv(trace: PressureTrace, path) -> None:
    Path(path).write_text(trace_to_csv(trace))


def read_trace_csv(path, scenario: Scenario | None = None) -> PressureTrace:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n_sensors = sum(1 for h in header if h.startswith("p"))
    expected = ["t", *(f"p{i}" for i in range(n_sensors)), "x", "v", "d"]
    if header != expected:
        raise ValueError(f"{path}: unexpected header {header}")
    num = np.array([[float(c) for c in row[:-1]] for row in body]).reshape(len(body), n_sensors + 3)
    return PressureTrace(num[:, 0], num[:, 1:1 + n_sensors], num[:, -2], num[:, -1],
                         np.array([row[-1] for row in body]), scenario)


def write_corpus(traces: Sequence[PressureTrace], out_dir, geometry: SensorGeometry,
                 extra: dict | None = None) -> Path:
    """Write one CSV per trace plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    entries = []
    for idx, tr in enumerate(traces):
        sc = tr.scenario
        name = f"traces/trace_{idx:04d}_y{sc.y:g}_v{sc.v:g}_{sc.d}.csv"
        text = trace_to_csv(tr)
        (out / name).write_text(text)
        entries.append({"path": name, "seed": sc.seed, "scenario": sc.to_dict(),
                        "sha256": hashlib.sha256(text.encode()).hexdigest()})
    manifest = {"format": "wakesense-corpus/1", "geometry": asdict(geometry),
                "traces": entries, **(extra or {})}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_corpus(manifest_path) -> tuple[list[PressureTrace], SensorGeometry, dict]:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    geometry = SensorGeometry(**manifest["geometry"])
    traces = [read_trace_csv(manifest_path.parent / e["path"], Scenario.from_dict(e["scenario"]))
              for e in manifest["traces"]]
    return traces, geometry, manifest
