"""Kinematic bicycle model, its Jacobian, and the lateral tracking controller.

The motion model is the no-slip front-wheel-drive bicycle:

    x'     = v * cos(theta) * cos(phi)
    y'     = v * sin(theta) * cos(phi)
    theta' = (v / l) * sin(phi)
    v'     = a_lon

with state [s_x, s_y, theta, v_lon], control [a_lon, phi] and wheelbase l.
Both position rates carry the cos(phi) projection of the front wheel.

Steering is produced by a Stanley-type controller that combines heading
error with the arctangent of the cross-track error, which has a stable
equilibrium on the reference line for v > 0.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .trajdata import Trajectory, TrajectoryPoint

# Steering saturation (about 35 degrees) and the speed floor that keeps the
# cross-track arctangent finite for stopped vehicles.
PHI_MAX = 0.61
V_FLOOR = 0.1


class State(NamedTuple):
    """Planar vehicle state: position (m), heading (rad), forward speed (m/s)."""

    s_x: float
    s_y: float
    theta: float
    v_lon: float


class Control(NamedTuple):
    """Longitudinal acceleration (m/s^2) and steering angle (rad)."""

    a_lon: float
    phi: float


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return math.pi - (math.pi - angle) % (2.0 * math.pi)


def step(x: State, u: Control, l: float, dt: float) -> State:
    """Advance the bicycle model one explicit Euler step of length dt.

    The resulting speed is clamped at zero (no reverse motion) and the
    heading is re-wrapped to (-pi, pi].
    """
    cos_phi = math.cos(u.phi)
    v = x.v_lon
    new_v = v + dt * u.a_lon
    return State(
        x.s_x + dt * v * math.cos(x.theta) * cos_phi,
        x.s_y + dt * v * math.sin(x.theta) * cos_phi,
        wrap_angle(x.theta + dt * (v / l) * math.sin(u.phi)),
        new_v if new_v > 0.0 else 0.0,
    )


def jacobian_state(x: State, u: Control, l: float, dt: float) -> np.ndarray:
    """Jacobian of step() with respect to the state, I + dt * df/dx."""
    cos_phi = math.cos(u.phi)
    sin_t = math.sin(x.theta)
    cos_t = math.cos(x.theta)
    v = x.v_lon
    return np.array(
        [
            [1.0, 0.0, -dt * v * sin_t * cos_phi, dt * cos_t * cos_phi],
            [0.0, 1.0, dt * v * cos_t * cos_phi, dt * sin_t * cos_phi],
            [0.0, 0.0, 1.0, dt * math.sin(u.phi) / l],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def stanley_from_direction(
    x: State,
    ref_x: float,
    ref_y: float,
    theta_tr: float,
    k: float,
    phi_max: float = PHI_MAX,
    v_floor: float = V_FLOOR,
) -> float:
    """Stanley steering toward the line through (ref_x, ref_y) with direction
    theta_tr: heading error plus arctan(k * d_lat / v), clamped to phi_max.

    d_lat is the signed lateral position of the reference line relative to
    the vehicle (positive when the line lies to the left), so positive
    steering always moves the vehicle toward the line.
    """
    ex = x.s_x - ref_x
    ey = x.s_y - ref_y
    # Leftward offset of the vehicle w.r.t. the line; d_lat is its negation.
    left_offset = math.cos(theta_tr) * ey - math.sin(theta_tr) * ex
    d_lat = -left_offset
    v = x.v_lon if x.v_lon > v_floor else v_floor
    phi = wrap_angle(theta_tr - x.theta) + math.atan2(k * d_lat, v)
    return min(max(phi, -phi_max), phi_max)


def stanley_phi(
    x: State,
    ref_cur: TrajectoryPoint,
    ref_next: TrajectoryPoint,
    k: float,
    phi_max: float = PHI_MAX,
    v_floor: float = V_FLOOR,
    prev_theta_tr: float | None = None,
) -> float:
    """Steering angle toward the reference segment ref_cur -> ref_next.

    The reference direction is the segment bearing; a degenerate segment
    (length below 1e-9 m, e.g. a stopped reference) falls back to
    prev_theta_tr supplied by the caller.
    """
    dx = ref_next.s_x - ref_cur.s_x
    dy = ref_next.s_y - ref_cur.s_y
    if math.hypot(dx, dy) < 1e-9:
        if prev_theta_tr is None:
            raise ValueError("degenerate reference segment and no previous direction")
        theta_tr = prev_theta_tr
    else:
        theta_tr = math.atan2(dy, dx)
    return stanley_from_direction(x, ref_cur.s_x, ref_cur.s_y, theta_tr, k,
                                  phi_max=phi_max, v_floor=v_floor)


class SamplePath:
    """Pre-indexed control source for one sample trajectory.

    Caches the arrays needed to interpolate a_lon and to look up the
    reference segment bracketing a query time, including stand-in segment
    directions across stopped (zero-length) stretches.
    """

    def __init__(self, sample: Trajectory):
        self.sample = sample
        self.times = sample.times
        self.accs = sample.accs
        pts = sample.points
        n_seg = len(pts) - 1
        dirs = np.empty(n_seg)
        last_dir = pts[0].theta  # fallback if the path starts stopped
        for i in range(n_seg):
            dx = pts[i + 1].s_x - pts[i].s_x
            dy = pts[i + 1].s_y - pts[i].s_y
            if math.hypot(dx, dy) >= 1e-9:
                last_dir = math.atan2(dy, dx)
            dirs[i] = last_dir
        self.segment_dirs = dirs

    def segment_index(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(i, 0), len(self.times) - 2)

    def a_lon(self, t: float) -> float:
        return float(np.interp(t, self.times, self.accs))

    def control(self, x: State, t: float, k: float,
                phi_max: float = PHI_MAX, v_floor: float = V_FLOOR) -> Control:
        if t < self.times[0] - 1e-9 or t > self.times[-1] + 1e-9:
            raise ValueError(f"time {t} outside sample span "
                             f"[{self.times[0]}, {self.times[-1]}]")
        i = self.segment_index(t)
        phi = stanley_phi(
            x,
            self.sample.points[i],
            self.sample.points[i + 1],
            k,
            phi_max=phi_max,
            v_floor=v_floor,
            prev_theta_tr=float(self.segment_dirs[i]),
        )
        return Control(self.a_lon(t), phi)


def controls_from_sample(sample: Trajectory, x: State, t: float, k: float) -> Control:
    """Control input at time t: the sample's interpolated a_lon plus the
    Stanley steering from state x toward the sample's path."""
    return sample.path.control(x, t, k)
