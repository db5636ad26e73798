"""EKF comparison between a sample trajectory and a cluster centroid.

The belief starts at the centroid's first state and is propagated with the
bicycle model at 10 ms steps, driven by controls derived from the *sample*
(interpolated a_lon plus Stanley steering toward the sample's path). Every
80 ms the centroid state acts as a full-state observation: right before the
correction, the squared Mahalanobis distance between the predicted belief
and the observed centroid state is converted into a membership probability
through the chi-squared(4) upper tail. After the correction the prediction
re-anchors on the sample's state at that instant, so the next window again
measures how far the centroid lies from where the sample's own dynamics
lead. Two trajectories with genuinely different longitudinal behavior drift
arbitrarily far apart, the probabilities collapse, and the summed negative
log-likelihood becomes +inf (any probability at or below the floor marks
"does not belong"); matching behaviors keep the gap near zero and the NLL
small and finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Control, State, step, jacobian_state, stanley_from_direction, wrap_angle
from .trajdata import Trajectory

COND_LIMIT = 1e12


class EkfNumericalError(RuntimeError):
    """The innovation covariance became numerically unusable."""


@dataclass(frozen=True)
class EkfConfig:
    """Noise levels, cadence and controller settings for the comparison."""

    r_diag: tuple[float, float, float, float] = (0.01, 0.01, 0.005, 0.01)
    q_diag: tuple[float, float, float, float] = (0.05, 0.05, 0.01, 0.1)
    dt_predict: float = 0.010
    update_period: float = 0.080
    k_gain: float = 2.5
    p_floor: float = 1e-15
    phi_max: float = 0.61
    v_floor: float = 0.1

    def __post_init__(self):
        if any(v <= 0 for v in self.r_diag) or any(v <= 0 for v in self.q_diag):
            raise ValueError("noise diagonals must be positive")
        if self.dt_predict <= 0 or self.update_period <= 0:
            raise ValueError("step sizes must be positive")
        for base, name in ((self.dt_predict, "dt_predict"), (0.040, "the 40 ms data step")):
            ratio = self.update_period / base
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ValueError(f"update_period must be an integer multiple of {name}")

    @property
    def steps_per_update(self) -> int:
        return int(round(self.update_period / self.dt_predict))

    @property
    def r_step(self) -> np.ndarray:
        return np.diag(self.r_diag)

    @property
    def q_matrix(self) -> np.ndarray:
        return np.diag(self.q_diag)


@dataclass
class BeliefState:
    """Gaussian belief over the vehicle state."""

    mu: State
    sigma: np.ndarray


@dataclass(eq=False)
class MembershipSeries:
    """Per-update membership record of one sample-vs-centroid comparison."""

    times: np.ndarray
    d2: np.ndarray
    probs: np.ndarray
    nll: float
    n_updates: int
    trace: np.ndarray | None = field(default=None, repr=False)


def ekf_predict(b: BeliefState, u: Control, l: float, cfg: EkfConfig) -> BeliefState:
    """One prediction step: propagate the mean through the bicycle model and
    the covariance through its Jacobian, adding the per-step process noise."""
    g = jacobian_state(b.mu, u, l, cfg.dt_predict)
    sigma = g @ b.sigma @ g.T + cfg.r_step
    return BeliefState(step(b.mu, u, l, cfg.dt_predict), sigma)


def ekf_update(b: BeliefState, z: State, cfg: EkfConfig) -> BeliefState:
    """Full-state observation update (H = identity) with wrapped heading
    innovation. Raises EkfNumericalError on an unusable innovation covariance."""
    s = b.sigma + cfg.q_matrix
    if not np.all(np.isfinite(s)) or np.linalg.cond(s) > COND_LIMIT:
        raise EkfNumericalError("innovation covariance is not invertible")
    k = b.sigma @ np.linalg.inv(s)
    innov = np.array([
        z.s_x - b.mu.s_x,
        z.s_y - b.mu.s_y,
        wrap_angle(z.theta - b.mu.theta),
        z.v_lon - b.mu.v_lon,
    ])
    delta = k @ innov
    mu = State(
        b.mu.s_x + delta[0],
        b.mu.s_y + delta[1],
        wrap_angle(b.mu.theta + delta[2]),
        max(b.mu.v_lon + delta[3], 0.0),
    )
    ikh = np.eye(4) - k
    sigma = ikh @ b.sigma @ ikh.T + k @ cfg.q_matrix @ k.T  # Joseph form, stays PSD
    sigma = 0.5 * (sigma + sigma.T)
    return BeliefState(mu, sigma)


def mahalanobis2(b: BeliefState, z: State) -> float:
    """Squared Mahalanobis distance of z from the (predicted) belief, with
    the heading residual wrapped. Singular covariance maps to +inf."""
    r = np.array([
        z.s_x - b.mu.s_x,
        z.s_y - b.mu.s_y,
        wrap_angle(z.theta - b.mu.theta),
        z.v_lon - b.mu.v_lon,
    ])
    try:
        sol = np.linalg.solve(b.sigma, r)
    except np.linalg.LinAlgError:
        return math.inf
    d2 = float(r @ sol)
    if not math.isfinite(d2):
        return math.inf
    return max(d2, 0.0)


def chi2_4_survival(d2: float) -> float:
    """Upper-tail probability of chi-squared with 4 degrees of freedom:
    S(x) = exp(-x/2) * (1 + x/2)."""
    if d2 < 0:
        raise ValueError("d2 must be non-negative")
    if math.isinf(d2):
        return 0.0
    half = 0.5 * d2
    try:
        return math.exp(-half) * (1.0 + half)
    except OverflowError:
        return 0.0


def _interp_states(traj: Trajectory, ts: np.ndarray) -> np.ndarray:
    """Centroid states at the given (trajectory-relative) times; headings are
    interpolated along the shorter arc."""
    rel = traj.times - traj.times[0]
    xs = np.interp(ts, rel, traj.xs)
    ys = np.interp(ts, rel, traj.ys)
    vs = np.interp(ts, rel, traj.vs)
    idx = np.clip(np.searchsorted(rel, ts, side="right") - 1, 0, len(rel) - 2)
    t0 = rel[idx]
    t1 = rel[idx + 1]
    w = np.clip((ts - t0) / (t1 - t0), 0.0, 1.0)
    th0 = traj.thetas[idx]
    th1 = traj.thetas[idx + 1]
    dth = np.pi - np.mod(np.pi - (th1 - th0), 2.0 * np.pi)
    thetas = th0 + w * dth
    thetas = np.pi - np.mod(np.pi - thetas, 2.0 * np.pi)
    return np.column_stack([xs, ys, thetas, vs])


def compare(sample: Trajectory, centroid: Trajectory, cfg: EkfConfig,
            with_trace: bool = False) -> MembershipSeries:
    """Run the pairwise comparison over the common time prefix.

    Returns the membership series; numerical failures never raise but yield
    zero-probability tail entries and an infinite nll.
    """
    t_ov = min(sample.duration, centroid.duration)
    if t_ov < cfg.update_period - 1e-9:
        raise ValueError("overlap shorter than one update period")
    dt = cfg.dt_predict
    spu = cfg.steps_per_update
    n_steps = int(math.floor(t_ov / dt + 1e-9))
    n_updates = n_steps // spu

    # Controls are queried on the sample's own timeline.
    t_grid = np.arange(n_steps) * dt
    s_rel = sample.times - sample.times[0]
    a_arr = np.interp(t_grid, s_rel, sample.accs)
    seg_idx = np.clip(np.searchsorted(s_rel, t_grid, side="right") - 1, 0, len(s_rel) - 2)
    ref_dirs = sample.path.segment_dirs
    ref_x = sample.xs
    ref_y = sample.ys

    update_times = (np.arange(1, n_updates + 1) * spu) * dt
    z_states = _interp_states(centroid, update_times)
    anchor_states = _interp_states(sample, update_times)

    p0 = centroid.points[0]
    belief = BeliefState(State(p0.s_x, p0.s_y, p0.theta, p0.v_lon), cfg.q_matrix.copy())
    l = sample.wheelbase

    d2_arr = np.empty(n_updates)
    prob_arr = np.empty(n_updates)
    trace_rows = [] if with_trace else None
    aborted = False
    j = 0
    for i in range(1, n_steps + 1):
        si = seg_idx[i - 1]
        phi = stanley_from_direction(
            belief.mu, float(ref_x[si]), float(ref_y[si]), float(ref_dirs[si]),
            cfg.k_gain, phi_max=cfg.phi_max, v_floor=cfg.v_floor,
        )
        belief = ekf_predict(belief, Control(float(a_arr[i - 1]), phi), l, cfg)
        if i % spu == 0:
            z = State(*z_states[j])
            d2 = mahalanobis2(belief, z)
            d2_arr[j] = d2
            prob_arr[j] = chi2_4_survival(d2)
            if trace_rows is not None:
                trace_rows.append([update_times[j], d2, prob_arr[j], *belief.mu, *z])
            try:
                belief = ekf_update(belief, z, cfg)
            except EkfNumericalError:
                j += 1
                aborted = True
                break
            # Re-anchor the prediction on the sample for the next window;
            # the corrected covariance carries over.
            belief = BeliefState(State(*anchor_states[j]), belief.sigma)
            j += 1
    if aborted:
        d2_arr[j:] = math.inf
        prob_arr[j:] = 0.0
    if n_updates and np.min(prob_arr) <= cfg.p_floor:
        nll = math.inf
    else:
        nll = float(np.sum(-np.log(prob_arr))) if n_updates else 0.0
    trace = np.array(trace_rows) if with_trace else None
    return MembershipSeries(update_times, d2_arr, prob_arr, nll, n_updates, trace)
