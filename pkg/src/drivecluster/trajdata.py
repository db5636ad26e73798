"""Trajectory data model: loading, validation, rectification and synthesis.

A maneuver is a set of trajectory samples sharing route intent, each sample
a 25 Hz sequence of pose plus longitudinal velocity/acceleration. Loading
derives timestamps from frame indices at exactly 25 Hz; wheelbase is derived
from vehicle length (0.6 x length, clamped to [1.5, 4.0] m) because track
tables do not carry it.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import serialize

FRAME_RATE = 25.0
DATA_DT = 1.0 / FRAME_RATE
WHEELBASE_RATIO = 0.6
WHEELBASE_MIN = 1.5
WHEELBASE_MAX = 4.0
MAX_GAP_FRAMES = 3
MIN_RECTIFIED_DURATION = 0.5
DEFAULT_GATE_RADIUS = 3.0
# Small negative speeds from detection noise are clamped; larger magnitudes
# mean actual reversing, which the motion model does not cover.
REVERSE_TOLERANCE = 0.05


class SchemaError(ValueError):
    """A required CSV column is missing or the schema is inconsistent."""


class DataError(ValueError):
    """Track data violates an invariant (monotonicity, reverse motion...)."""


class EmptyManeuverError(ValueError):
    """The input contains no trajectories."""


class ScenarioSpecError(ValueError):
    """A synthesis scenario is internally inconsistent."""


class RectifyWarning(UserWarning):
    """A trajectory was dropped or modified during rectification/loading."""


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return math.pi - (math.pi - angle) % (2.0 * math.pi)


@dataclass(frozen=True)
class TrajectoryPoint:
    """One observed instant: time (s), world position (m), heading (rad,
    wrapped to (-pi, pi]), longitudinal speed (m/s) and acceleration (m/s^2)."""

    t: float
    s_x: float
    s_y: float
    theta: float
    v_lon: float
    a_lon: float


@dataclass(frozen=True)
class Trajectory:
    """Ordered point sequence for one vehicle sample plus its wheelbase."""

    id: str
    points: tuple[TrajectoryPoint, ...]
    wheelbase: float

    def __post_init__(self):
        if len(self.points) < 2:
            raise DataError(f"trajectory {self.id!r} has fewer than 2 points")
        if self.wheelbase <= 0:
            raise DataError(f"trajectory {self.id!r} has non-positive wheelbase")
        ts = [p.t for p in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise DataError(f"trajectory {self.id!r} has non-increasing timestamps")
        if any(p.v_lon < 0 for p in self.points):
            raise DataError(f"trajectory {self.id!r} has negative speed")

    @property
    def duration(self) -> float:
        return self.points[-1].t - self.points[0].t

    @cached_property
    def times(self) -> np.ndarray:
        return np.array([p.t for p in self.points])

    @cached_property
    def xs(self) -> np.ndarray:
        return np.array([p.s_x for p in self.points])

    @cached_property
    def ys(self) -> np.ndarray:
        return np.array([p.s_y for p in self.points])

    @cached_property
    def thetas(self) -> np.ndarray:
        return np.array([p.theta for p in self.points])

    @cached_property
    def vs(self) -> np.ndarray:
        return np.array([p.v_lon for p in self.points])

    @cached_property
    def accs(self) -> np.ndarray:
        return np.array([p.a_lon for p in self.points])

    @cached_property
    def path(self):
        from .dynamics import SamplePath

        return SamplePath(self)

    def state_at(self, t: float) -> tuple[float, float, float, float]:
        """Interpolated (s_x, s_y, theta, v_lon) at time t; heading is
        interpolated along the shorter arc."""
        times = self.times
        if t <= times[0]:
            p = self.points[0]
            return p.s_x, p.s_y, p.theta, p.v_lon
        if t >= times[-1]:
            p = self.points[-1]
            return p.s_x, p.s_y, p.theta, p.v_lon
        i = int(np.searchsorted(times, t, side="right")) - 1
        a, b = self.points[i], self.points[i + 1]
        w = (t - a.t) / (b.t - a.t)
        theta = wrap_angle(a.theta + w * wrap_angle(b.theta - a.theta))
        return (
            a.s_x + w * (b.s_x - a.s_x),
            a.s_y + w * (b.s_y - a.s_y),
            theta,
            a.v_lon + w * (b.v_lon - a.v_lon),
        )


@dataclass(frozen=True)
class Gate:
    """Circular rectification gate: trajectories are trimmed to it."""

    x: float
    y: float
    radius: float

    def contains(self, x: float, y: float) -> bool:
        return math.hypot(x - self.x, y - self.y) <= self.radius


@dataclass(frozen=True)
class ManeuverSet:
    """All samples of one maneuver, optionally with rectification gates."""

    maneuver_id: str
    samples: tuple[Trajectory, ...]
    gates: tuple[Gate, Gate] | None = None

    def __post_init__(self):
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise DataError(f"duplicate sample ids in maneuver {self.maneuver_id!r}")

    def sample_by_id(self, sample_id: str) -> Trajectory:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise KeyError(sample_id)

    @property
    def sample_ids(self) -> list[str]:
        return [s.id for s in self.samples]


# ---------------------------------------------------------------------------
# CSV ingestion


@dataclass(frozen=True)
class ColumnSchema:
    """Mapping from logical fields to CSV column names."""

    frame: str = "frame"
    track_id: str = "track_id"
    x: str = "x"
    y: str = "y"
    heading: str = "heading"
    lon_velocity: str = "lon_velocity"
    lon_acceleration: str = "lon_acceleration"
    length: str = "length"
    heading_unit: str = "radians"  # "radians" or "degrees"

    def required_columns(self) -> list[str]:
        return [self.frame, self.track_id, self.x, self.y, self.heading,
                self.lon_velocity, self.lon_acceleration, self.length]


def derive_wheelbase(length: float) -> float:
    return min(max(WHEELBASE_RATIO * length, WHEELBASE_MIN), WHEELBASE_MAX)


def _interp_gaps(frames: np.ndarray, cols: dict[str, np.ndarray],
                 track: str) -> tuple[np.ndarray, dict[str, np.ndarray]] | None:
    """Fill missing frames by linear interpolation (angles along the shorter
    arc). Returns None when a gap exceeds MAX_GAP_FRAMES."""
    gaps = np.diff(frames)
    if np.all(gaps == 1):
        return frames, cols
    if np.any(gaps > MAX_GAP_FRAMES + 1):
        return None
    full = np.arange(frames[0], frames[-1] + 1)
    out = {}
    for name, values in cols.items():
        if name == "heading":
            values = np.unwrap(values)
        out[name] = np.interp(full, frames, values)
    return full, out


def load_csv(path: str | Path, schema: ColumnSchema | None = None,
             maneuver_id: str | None = None) -> ManeuverSet:
    """Load a track table into one trajectory per track id.

    Timestamps come from the frame index at exactly 25 Hz; headings are
    converted to radians and wrapped; speeds are stored as magnitudes.
    Tracks with frame gaps longer than 3 frames are dropped with a warning.
    """
    schema = schema or ColumnSchema()
    path = Path(path)
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise EmptyManeuverError(f"{path} is empty") from None
    missing = [c for c in schema.required_columns() if c not in df.columns]
    if missing:
        raise SchemaError(f"{path} is missing columns {missing}")
    if len(df) == 0:
        raise EmptyManeuverError(f"{path} contains no rows")
    if schema.heading_unit not in ("radians", "degrees"):
        raise SchemaError(f"unknown heading unit {schema.heading_unit!r}")

    samples = []
    for track_id, group in df.groupby(schema.track_id, sort=True):
        track = str(track_id)
        frames = group[schema.frame].to_numpy(dtype=np.int64)
        if np.any(np.diff(frames) <= 0):
            raise DataError(f"track {track}: frames are not strictly increasing")
        heading = group[schema.heading].to_numpy(dtype=float)
        if schema.heading_unit == "degrees":
            heading = np.deg2rad(heading)
        cols = {
            "x": group[schema.x].to_numpy(dtype=float),
            "y": group[schema.y].to_numpy(dtype=float),
            "heading": heading,
            "v": group[schema.lon_velocity].to_numpy(dtype=float),
            "a": group[schema.lon_acceleration].to_numpy(dtype=float),
        }
        filled = _interp_gaps(frames, cols, track)
        if filled is None:
            warnings.warn(f"track {track}: frame gap longer than "
                          f"{MAX_GAP_FRAMES} frames, track dropped", RectifyWarning)
            continue
        frames, cols = filled
        v = cols["v"]
        if np.any(v < -REVERSE_TOLERANCE):
            raise DataError(f"track {track}: negative longitudinal velocity "
                            "(reverse driving is not supported)")
        v = np.maximum(v, 0.0)
        t = (frames - frames[0]) / FRAME_RATE
        length = float(group[schema.length].iloc[0])
        points = tuple(
            TrajectoryPoint(float(t[i]), float(cols["x"][i]), float(cols["y"][i]),
                            wrap_angle(float(cols["heading"][i])),
                            float(v[i]), float(cols["a"][i]))
            for i in range(len(frames))
        )
        samples.append(Trajectory(track, points, derive_wheelbase(length)))
    if not samples:
        raise EmptyManeuverError(f"{path}: no usable tracks")
    return ManeuverSet(maneuver_id or path.stem, tuple(samples))


def write_csv(mset: ManeuverSet, path: str | Path,
              schema: ColumnSchema | None = None) -> None:
    """Write a maneuver set back to the track-table layout of load_csv."""
    schema = schema or ColumnSchema()
    rows = []
    for s in mset.samples:
        length = s.wheelbase / WHEELBASE_RATIO
        for p in s.points:
            heading = p.theta
            if schema.heading_unit == "degrees":
                heading = math.degrees(heading)
            rows.append({
                schema.frame: int(round(p.t * FRAME_RATE)),
                schema.track_id: s.id,
                schema.x: p.s_x,
                schema.y: p.s_y,
                schema.heading: heading,
                schema.lon_velocity: p.v_lon,
                schema.lon_acceleration: p.a_lon,
                schema.length: length,
            })
    pd.DataFrame(rows).to_csv(path, index=False, float_format="%.17g")


# ---------------------------------------------------------------------------
# JSON persistence


def maneuver_set_to_json(mset: ManeuverSet) -> str:
    gates = None
    if mset.gates is not None:
        gates = {
            "start": {"x": mset.gates[0].x, "y": mset.gates[0].y,
                      "radius": mset.gates[0].radius},
            "end": {"x": mset.gates[1].x, "y": mset.gates[1].y,
                    "radius": mset.gates[1].radius},
        }
    doc = {
        "maneuver_id": mset.maneuver_id,
        "gates": gates,
        "samples": [
            {
                "id": s.id,
                "wheelbase": s.wheelbase,
                "points": [[p.t, p.s_x, p.s_y, p.theta, p.v_lon, p.a_lon]
                           for p in s.points],
            }
            for s in mset.samples
        ],
    }
    return serialize.dumps(doc) + "\n"


def maneuver_set_from_json(text: str) -> ManeuverSet:
    doc = json.loads(text)
    gates = None
    if doc.get("gates"):
        g = doc["gates"]
        gates = (Gate(g["start"]["x"], g["start"]["y"], g["start"]["radius"]),
                 Gate(g["end"]["x"], g["end"]["y"], g["end"]["radius"]))
    samples = tuple(
        Trajectory(
            str(s["id"]),
            tuple(TrajectoryPoint(*map(float, row)) for row in s["points"]),
            float(s["wheelbase"]),
        )
        for s in doc["samples"]
    )
    return ManeuverSet(str(doc["maneuver_id"]), samples, gates)


def save_maneuver_json(mset: ManeuverSet, path: str | Path) -> None:
    Path(path).write_text(maneuver_set_to_json(mset))


def load_maneuver_json(path: str | Path) -> ManeuverSet:
    return maneuver_set_from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# Rectification


def _medoid_point(points: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    return points[int(np.argmin(d.sum(axis=1)))]


def default_gates(mset: ManeuverSet, radius: float = DEFAULT_GATE_RADIUS) -> tuple[Gate, Gate]:
    """Gates centered on the medoid of first points and of last points."""
    firsts = np.array([[s.points[0].s_x, s.points[0].s_y] for s in mset.samples])
    lasts = np.array([[s.points[-1].s_x, s.points[-1].s_y] for s in mset.samples])
    start = _medoid_point(firsts)
    end = _medoid_point(lasts)
    return Gate(float(start[0]), float(start[1]), radius), Gate(float(end[0]), float(end[1]), radius)


def _rezero(points: Sequence[TrajectoryPoint]) -> tuple[TrajectoryPoint, ...]:
    t0 = points[0].t
    return tuple(replace(p, t=p.t - t0) for p in points)


def rectify(mset: ManeuverSet, gates: tuple[Gate, Gate] | None = None) -> ManeuverSet:
    """Trim every sample to its first point inside the start gate through its
    last point inside the end gate, re-zeroing time.

    Samples that never intersect a gate, or that are shorter than 0.5 s after
    trimming, are dropped with a warning.
    """
    if gates is None:
        gates = mset.gates or default_gates(mset)
    start, end = gates
    kept = []
    for s in mset.samples:
        inside_start = [i for i, p in enumerate(s.points) if start.contains(p.s_x, p.s_y)]
        inside_end = [i for i, p in enumerate(s.points) if end.contains(p.s_x, p.s_y)]
        if not inside_start or not inside_end:
            warnings.warn(f"sample {s.id}: does not intersect both gates, dropped",
                          RectifyWarning)
            continue
        i0, i1 = inside_start[0], inside_end[-1]
        if i1 <= i0:
            warnings.warn(f"sample {s.id}: end gate is passed before the start gate, "
                          "dropped", RectifyWarning)
            continue
        pts = s.points[i0:i1 + 1]
        if pts[-1].t - pts[0].t < MIN_RECTIFIED_DURATION:
            warnings.warn(f"sample {s.id}: shorter than {MIN_RECTIFIED_DURATION} s "
                          "after rectification, dropped", RectifyWarning)
            continue
        kept.append(Trajectory(s.id, _rezero(pts), s.wheelbase))
    if not kept:
        raise EmptyManeuverError(f"maneuver {mset.maneuver_id!r}: no samples "
                                 "survive rectification")
    return ManeuverSet(mset.maneuver_id, tuple(kept), gates)


# ---------------------------------------------------------------------------
# Resampling


def resample_profile(traj: Trajectory, n: int) -> np.ndarray:
    """v_lon linearly interpolated at n uniform times spanning the sample."""
    if n < 2:
        raise ValueError("n must be >= 2")
    ts = np.linspace(traj.points[0].t, traj.points[-1].t, n)
    return np.interp(ts, traj.times, traj.vs)


# ---------------------------------------------------------------------------
# Synthesis


@dataclass(frozen=True)
class SpeedProfile:
    """Piecewise speed profile defined by knots with smooth or linear ramps.

    Smooth ramps use the cubic smoothstep, so v is C1 and a_lon = dv/dt is
    continuous; linear ramps give piecewise-constant acceleration.
    """

    knots: tuple[tuple[float, float], ...]  # (time, speed), increasing times
    ramp: str = "smooth"

    def __post_init__(self):
        ts = [k[0] for k in self.knots]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ScenarioSpecError("profile knot times must be increasing")
        if any(k[1] < 0 for k in self.knots):
            raise ScenarioSpecError("profile speeds must be non-negative")

    def _segment(self, t: float) -> tuple[float, float, float, float] | None:
        for (t0, v0), (t1, v1) in zip(self.knots, self.knots[1:]):
            if t0 <= t <= t1:
                return t0, v0, t1, v1
        return None

    def speed(self, t: float) -> float:
        if t <= self.knots[0][0]:
            return self.knots[0][1]
        if t >= self.knots[-1][0]:
            return self.knots[-1][1]
        t0, v0, t1, v1 = self._segment(t)
        u = (t - t0) / (t1 - t0)
        if self.ramp == "linear":
            return v0 + (v1 - v0) * u
        return v0 + (v1 - v0) * (3 * u * u - 2 * u ** 3)

    def accel(self, t: float) -> float:
        if t <= self.knots[0][0] or t >= self.knots[-1][0]:
            return 0.0
        t0, v0, t1, v1 = self._segment(t)
        u = (t - t0) / (t1 - t0)
        if self.ramp == "linear":
            return (v1 - v0) / (t1 - t0)
        return (v1 - v0) * (6 * u - 6 * u * u) / (t1 - t0)


def constant_profile(v0: float) -> SpeedProfile:
    return SpeedProfile(((0.0, v0),))


def slow_down_profile(v0: float, v_min: float, t_start: float = 1.5,
                      brake_rate: float = 2.5, hold: float = 1.0,
                      accel_rate: float = 2.0, ramp: str = "smooth") -> SpeedProfile:
    """Speed dip without stopping: v0 -> v_min -> v0."""
    t1 = t_start
    t2 = t1 + (v0 - v_min) / brake_rate
    t3 = t2 + hold
    t4 = t3 + (v0 - v_min) / accel_rate
    return SpeedProfile(((t1, v0), (t2, v_min), (t3, v_min), (t4, v0)), ramp)


def stop_and_go_profile(v0: float, t_start: float = 1.2, brake_rate: float = 3.0,
                        dwell: float = 1.5, accel_rate: float = 2.5,
                        ramp: str = "smooth") -> SpeedProfile:
    """Full stop before continuing: v0 -> 0 (dwell) -> v0."""
    t1 = t_start
    t2 = t1 + v0 / brake_rate
    t3 = t2 + dwell
    t4 = t3 + v0 / accel_rate
    return SpeedProfile(((t1, v0), (t2, 0.0), (t3, 0.0), (t4, v0)), ramp)


@dataclass(frozen=True)
class PathSpec:
    """Path template: a straight line or an approach + constant-radius turn.

    turn_angle is signed (negative = right turn). Per-sample lateral offsets
    shift the whole template sideways; for turns this changes the effective
    radius so each sample stays kinematically consistent on its own path.
    """

    kind: str = "turn"  # "straight" or "turn"
    approach: float = 14.0
    radius: float = 8.0
    turn_angle: float = -math.pi / 2

    def segments(self, lateral_offset: float) -> list[tuple[float, float]]:
        """(length, curvature) pieces for a path offset laterally by
        lateral_offset (positive left). The final piece is unbounded."""
        if self.kind == "straight":
            return [(math.inf, 0.0)]
        if self.kind != "turn":
            raise ScenarioSpecError(f"unknown path kind {self.kind!r}")
        # Right turns bend away from a leftward offset: radius grows with it.
        r = self.radius - math.copysign(lateral_offset, self.turn_angle)
        if r <= 1.0:
            raise ScenarioSpecError("lateral offset collapses the turn radius")
        kappa = math.copysign(1.0 / r, self.turn_angle)
        return [(self.approach, 0.0), (abs(self.turn_angle) * r, kappa), (math.inf, 0.0)]


@dataclass(frozen=True)
class ArchetypeSpec:
    """One behavior archetype: a label, sample count and profile factory
    parameters."""

    name: str
    count: int
    profile: str  # "constant", "slow_down", "stop_and_go"
    v0: float = 8.0
    v_min: float = 2.5
    params: tuple[tuple[str, float], ...] = ()

    def build_profile(self, rng: np.random.Generator, noise: "NoiseSpec") -> SpeedProfile:
        v0 = self.v0 + (rng.normal(0.0, noise.v0_sd) if noise.v0_sd > 0 else 0.0)
        v0 = max(v0, 0.5)
        shift = rng.normal(0.0, noise.timing_sd) if noise.timing_sd > 0 else 0.0
        extra = dict(self.params)
        if self.profile == "constant":
            return constant_profile(v0)
        if self.profile == "slow_down":
            t_start = max(0.2, extra.pop("t_start", 1.5) + shift)
            return slow_down_profile(v0, max(self.v_min, 0.3), t_start=t_start, **extra)
        if self.profile == "stop_and_go":
            t_start = max(0.2, extra.pop("t_start", 1.2) + shift)
            return stop_and_go_profile(v0, t_start=t_start, **extra)
        raise ScenarioSpecError(f"unknown profile kind {self.profile!r}")


@dataclass(frozen=True)
class NoiseSpec:
    """Per-sample randomization amplitudes; all zero gives identical copies."""

    v0_sd: float = 0.03
    timing_sd: float = 0.03
    smooth_amp: float = 0.1
    smooth_components: int = 3
    lateral_sd: float = 0.2


@dataclass(frozen=True)
class ScenarioSpec:
    """Full synthesis scenario: path, archetype mix, duration and noise."""

    maneuver_id: str = "synthetic"
    path: PathSpec = field(default_factory=PathSpec)
    archetypes: tuple[ArchetypeSpec, ...] = (
        ArchetypeSpec("direct", 10, "constant", v0=8.0),
        ArchetypeSpec("yield", 10, "slow_down", v0=8.0, v_min=2.0,
                      params=(("t_start", 0.8), ("brake_rate", 3.0),
                              ("hold", 1.2), ("accel_rate", 2.2))),
        ArchetypeSpec("stop", 10, "stop_and_go", v0=8.0,
                      params=(("t_start", 0.5), ("brake_rate", 3.5),
                              ("dwell", 2.0), ("accel_rate", 2.5))),
    )
    duration: float = 10.0
    dt: float = DATA_DT
    wheelbase: float = 2.5
    noise: NoiseSpec = field(default_factory=NoiseSpec)


class _NoisyProfile:
    """Speed profile plus a smooth sinusoidal perturbation that fades out
    below 1 m/s, keeping speeds non-negative and a_lon = dv/dt exact."""

    def __init__(self, base: SpeedProfile, rng: np.random.Generator, noise: NoiseSpec):
        self.base = base
        m = noise.smooth_components
        if noise.smooth_amp > 0 and m > 0:
            self.coeff = rng.normal(0.0, noise.smooth_amp / math.sqrt(m), m)
            self.omega = 2 * math.pi * rng.uniform(0.08, 0.5, m)
            self.phase = rng.uniform(0.0, 2 * math.pi, m)
        else:
            self.coeff = np.zeros(0)
            self.omega = np.zeros(0)
            self.phase = np.zeros(0)

    def _eta(self, t: float) -> tuple[float, float]:
        eta = float(np.sum(self.coeff * np.sin(self.omega * t + self.phase)))
        deta = float(np.sum(self.coeff * self.omega * np.cos(self.omega * t + self.phase)))
        return eta, deta

    def speed_accel(self, t: float) -> tuple[float, float]:
        v = self.base.speed(t)
        a = self.base.accel(t)
        if len(self.coeff) == 0:
            return v, a
        w = min(max(v, 0.0), 1.0)
        fade = 3 * w * w - 2 * w ** 3
        dfade = (6 * w - 6 * w * w) * a if 0.0 < v < 1.0 else 0.0
        eta, deta = self._eta(t)
        return v + fade * eta, a + dfade * eta + fade * deta

    def speed(self, t: float) -> float:
        return self.speed_accel(t)[0]


class _PathIntegrator:
    """Advance exactly along piecewise-constant-curvature segments."""

    def __init__(self, segments: list[tuple[float, float]], x0: float, y0: float,
                 theta0: float = 0.0):
        self.segments = segments
        self.seg_idx = 0
        self.remaining = segments[0][0]
        self.x, self.y, self.theta = x0, y0, theta0

    def _advance(self, ds: float, kappa: float) -> None:
        if abs(kappa) < 1e-12:
            self.x += ds * math.cos(self.theta)
            self.y += ds * math.sin(self.theta)
        else:
            t2 = self.theta + kappa * ds
            self.x += (math.sin(t2) - math.sin(self.theta)) / kappa
            self.y += (-math.cos(t2) + math.cos(self.theta)) / kappa
            self.theta = t2

    def advance(self, ds: float) -> None:
        while ds > 0:
            kappa = self.segments[self.seg_idx][1]
            if ds < self.remaining:
                self._advance(ds, kappa)
                self.remaining -= ds
                return
            self._advance(self.remaining, kappa)
            ds -= self.remaining
            self.seg_idx = min(self.seg_idx + 1, len(self.segments) - 1)
            self.remaining = self.segments[self.seg_idx][0]


_GL_NODES = np.array([-0.9061798459386640, -0.5384693101056831, 0.0,
                      0.5384693101056831, 0.9061798459386640])
_GL_WEIGHTS = np.array([0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                        0.4786286704993665, 0.2369268850561891])


def _arc_length(profile: _NoisyProfile, t0: float, t1: float) -> float:
    """Integral of speed over [t0, t1] by 5-point Gauss-Legendre."""
    mid = 0.5 * (t0 + t1)
    half = 0.5 * (t1 - t0)
    return half * sum(w * profile.speed(mid + half * xi)
                      for xi, w in zip(_GL_NODES, _GL_WEIGHTS))


def synthesize(spec: ScenarioSpec, seed: int) -> tuple[ManeuverSet, dict[str, str]]:
    """Generate a labeled maneuver set; deterministic for a fixed seed.

    Positions integrate the path-following kinematics driven by each
    sample's speed profile, and a_lon is the analytic derivative of v_lon,
    so every sample is dynamically self-consistent.
    """
    rng = np.random.default_rng(seed)
    samples = []
    labels: dict[str, str] = {}
    n_steps = int(round(spec.duration / spec.dt))
    for arch in spec.archetypes:
        for i in range(arch.count):
            profile = _NoisyProfile(arch.build_profile(rng, spec.noise), rng, spec.noise)
            offset = rng.normal(0.0, spec.noise.lateral_sd) if spec.noise.lateral_sd > 0 else 0.0
            integ = _PathIntegrator(spec.path.segments(offset), 0.0, offset)
            points = []
            for kstep in range(n_steps + 1):
                t = kstep * spec.dt
                v, a = profile.speed_accel(t)
                if v < 0:
                    raise ScenarioSpecError(
                        f"archetype {arch.name!r}: profile produces negative speed")
                points.append(TrajectoryPoint(t, integ.x, integ.y,
                                              wrap_angle(integ.theta), v, a))
                if kstep < n_steps:
                    integ.advance(_arc_length(profile, t, t + spec.dt))
            sid = f"{arch.name}-{i:02d}"
            samples.append(Trajectory(sid, tuple(points), spec.wheelbase))
            labels[sid] = arch.name
    if not samples:
        raise ScenarioSpecError("scenario has no archetypes")
    return ManeuverSet(spec.maneuver_id, tuple(samples)), labels
