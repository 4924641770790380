"""Flight pipeline: Madgwick attitude filtering, rotation compensation,
pixel-to-metric velocity scaling, dead-reckoning and trajectory
evaluation.

Frame and sign conventions are declared in the sim module.  The
pixel-to-metric op reports the apparent ground velocity in camera axes
per the benchmark warp convention; run_vio negates and rotates it into
the world frame to obtain the vehicle velocity.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneracyError
from .estimators import (
    CascadeConfig,
    LucasKanadeEstimator,
    cascade_estimate,
    fft_translation,
)
from .image import ImagePlane, sample_bilinear, to_gray
from .sim import (
    CameraIntrinsics,
    GRAVITY,
    MAG_WORLD,
    R_BC,
    SensorLog,
    quat_conj,
    quat_mul,
    quat_normalize,
    quat_rotate,
    quat_to_rot,
)
from .warps import PixelWarp, WarpParams


@dataclass
class AttitudeState:
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    beta: float = 0.1
    t_last: float = 0.0


def madgwick_update(state: AttitudeState, gyro, accel, mag, dt: float) -> AttitudeState:
    """One 9-DoF Madgwick step: gyro integration plus a gradient-descent
    correction of size beta toward the accel/mag-consistent orientation.

    A zero-norm accel (or mag) degrades gracefully to a gyro-only (or
    6-DoF) update.  The returned quaternion is renormalized.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    q = state.q
    gyro = np.asarray(gyro, float)
    accel = np.asarray(accel, float)
    mag = np.asarray(mag, float)
    q_dot = 0.5 * quat_mul(q, np.array([0.0, *gyro]))

    a_n = np.linalg.norm(accel)
    if a_n > 0 and state.beta > 0:
        a = accel / a_n
        w, x, y, z = q
        # objective: rotate world gravity direction (0,0,1) into body and
        # match the normalized accelerometer reading
        f_g = np.array([
            2 * (x * z - w * y) - a[0],
            2 * (w * x + y * z) - a[1],
            2 * (0.5 - x * x - y * y) - a[2],
        ])
        j_g = np.array([
            [-2 * y, 2 * z, -2 * w, 2 * x],
            [2 * x, 2 * w, 2 * z, 2 * y],
            [0.0, -4 * x, -4 * y, 0.0],
        ])
        grad = j_g.T @ f_g
        m_n = np.linalg.norm(mag)
        if m_n > 0:
            m = mag / m_n
            # earth-frame field from the current estimate; reference has
            # horizontal component along +x and the estimated vertical part
            h = quat_rotate(q, m)
            bx = math.hypot(h[0], h[1])
            bz = h[2]
            f_m = np.array([
                2 * bx * (0.5 - y * y - z * z) + 2 * bz * (x * z - w * y) - m[0],
                2 * bx * (x * y - w * z) + 2 * bz * (w * x + y * z) - m[1],
                2 * bx * (w * y + x * z) + 2 * bz * (0.5 - x * x - y * y) - m[2],
            ])
            j_m = np.array([
                [-2 * bz * y, 2 * bz * z, -4 * bx * y - 2 * bz * w, -4 * bx * z + 2 * bz * x],
                [-2 * bx * z + 2 * bz * x, 2 * bx * y + 2 * bz * w,
                 2 * bx * x + 2 * bz * z, -2 * bx * w + 2 * bz * y],
                [2 * bx * y, 2 * bx * z - 4 * bz * x, 2 * bx * w - 4 * bz * y, 0.0],
            ])
            grad = grad + j_m.T @ f_m
        g_n = np.linalg.norm(grad)
        if g_n > 0:
            q_dot = q_dot - state.beta * grad / g_n
    q = quat_normalize(q + q_dot * dt)
    return AttitudeState(q=q, beta=state.beta, t_last=state.t_last + dt)


def _rotvec_quat(v):
    """Unit quaternion for a rotation vector (axis * angle)."""
    v = np.asarray(v, float)
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        return np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]])
    axis = v / angle
    half = 0.5 * angle
    return np.array([math.cos(half), *(math.sin(half) * axis)])


def derotate(q_t, q_t1, K: CameraIntrinsics) -> PixelWarp:
    """Compensation warp K R(camera t <- camera t+1) K^-1 applied to the
    frame at t+1 so the residual pair differs only by translation+scale."""
    r_wc_t = quat_to_rot(np.asarray(q_t, float)) @ R_BC
    r_wc_t1 = quat_to_rot(np.asarray(q_t1, float)) @ R_BC
    r_rel = r_wc_t.T @ r_wc_t1
    k = K.matrix()
    return PixelWarp(k @ r_rel @ np.linalg.inv(k), K.width, K.height)


def pixel_to_metric_velocity(h: WarpParams, z: float, K: CameraIntrinsics, dt: float,
                             patch_w: int = 128, patch_h: int = 128):
    """Apparent ground velocity from a patch warp at altitude z.

    Returns (vx, vy, vz): the in-plane components follow the pixel shift
    through the pinhole model, and vz = -z*s/((1+s)*dt) so zoom-in means
    approaching the plane (descent for a down-facing camera).
    """
    if z <= 0 or dt <= 0:
        raise ValueError("altitude and dt must be positive")
    tx_px = h.tx * patch_w / 2.0
    ty_px = h.ty * patch_h / 2.0
    vx = tx_px * z / (K.fx * dt)
    vy = ty_px * z / (K.fy * dt)
    vz = -z * h.s / ((1.0 + h.s) * dt)
    return vx, vy, vz


@dataclass
class OdometryState:
    position: np.ndarray
    t: float
    altitude: float


def dead_reckon(stream, origin=(0.0, 0.0, 0.0)):
    """Trapezoidal integration of a (t, world velocity) stream."""
    states = []
    pos = np.asarray(origin, float).copy()
    prev = None
    for t, v in stream:
        v = np.asarray(v, float)
        if prev is not None:
            t0, v0 = prev
            if t <= t0:
                raise ValueError("timestamps must be strictly increasing")
            pos = pos + 0.5 * (v0 + v) * (t - t0)
        states.append(OdometryState(pos.copy(), float(t), float(pos[2])))
        prev = (t, v)
    return states


def align_and_rmse(est, gt):
    """Rigid SE(3) alignment of est onto gt, then error statistics.

    est and gt are (N,4)/(M,4) arrays of (t, x, y, z); gt is resampled to
    the est timestamps.  Returns (per-axis mean |error|, rmse, gt path
    length).
    """
    est = np.asarray(est, float)
    gt = np.asarray(gt, float)
    if len(est) < 3 or len(gt) < 3:
        raise ValueError("need at least 3 samples in each trajectory")
    t = est[:, 0]
    if t[0] < gt[0, 0] - 1e-9 or t[-1] > gt[-1, 0] + 1e-9:
        raise ValueError("estimate time range not covered by ground truth")
    gt_i = np.column_stack([np.interp(t, gt[:, 0], gt[:, k]) for k in (1, 2, 3)])
    p = est[:, 1:4]
    mu_p, mu_g = p.mean(axis=0), gt_i.mean(axis=0)
    cov = (gt_i - mu_g).T @ (p - mu_p) / len(p)
    u, _, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    r = u @ np.diag([1.0, 1.0, d]) @ vt
    aligned = (r @ (p - mu_p).T).T + mu_g
    err = aligned - gt_i
    per_axis = np.abs(err).mean(axis=0)
    rmse = float(np.sqrt((err**2).sum(axis=1).mean()))
    length = float(np.linalg.norm(np.diff(gt[:, 1:4], axis=0), axis=1).sum())
    return per_axis, rmse, length


@dataclass
class VioConfig:
    stride: int = 4
    patch: int = 128
    cascade: str = "PSx1"
    beta: float = 0.1
    max_speed: float = 2.0  # plausibility gate on |v|, m/s


def run_vio(frames, log: SensorLog, K: CameraIntrinsics,
            cfg: VioConfig = VioConfig(), estimator=None):
    """Dead-reckon a trajectory from frames + IMU + altimeter.

    frames provides .times and .frame(i).  Per velocity step (every
    cfg.stride frames): derotate the later frame with the Madgwick
    attitudes, estimate the patch warp, scale to metric velocity with the
    attitude-adjusted altitude, rotate to world, integrate.  Estimator
    degeneracy holds the previous velocity and is tallied.

    Returns (trajectory rows (t, x, y, z), diagnostics dict).
    """
    times = np.asarray(frames.times, float)
    cascade = CascadeConfig.parse(cfg.cascade)
    est = estimator or LucasKanadeEstimator()

    # Madgwick pass over the IMU log; attitude interpolated per frame time
    # by nearest preceding filter state.
    imu = log.imu
    state = AttitudeState(beta=cfg.beta)
    # initialize from the first accel/mag sample (tilt + heading)
    state.q = _init_quat(imu[0, 4:7], imu[0, 7:10])
    att_t = [imu[0, 0]]
    att_q = [state.q]
    for i in range(1, len(imu)):
        dt = imu[i, 0] - imu[i - 1, 0]
        state = madgwick_update(state, imu[i, 1:4], imu[i, 4:7], imu[i, 7:10], dt)
        att_t.append(imu[i, 0])
        att_q.append(state.q)
    att_t = np.asarray(att_t)

    def attitude_at(t):
        i = int(np.searchsorted(att_t, t, side="right") - 1)
        return att_q[max(i, 0)]

    # Pure gyro integration for the short-baseline relative rotation used
    # in derotation: the Madgwick correction term jitters with accel/mag
    # noise, which leaks into the warp estimate, while the gyro is quiet
    # over a few frame intervals.  Fractional end segments use the next
    # sample's rate so frame times need not align with IMU times.
    gyro_q = [np.array([1.0, 0.0, 0.0, 0.0])]
    for i in range(1, len(imu)):
        dt = imu[i, 0] - imu[i - 1, 0]
        dq = _rotvec_quat(imu[i, 1:4] * dt)
        gyro_q.append(quat_normalize(quat_mul(gyro_q[-1], dq)))

    def gyro_at(t):
        i = int(np.clip(np.searchsorted(att_t, t, side="right") - 1, 0, len(imu) - 1))
        q = gyro_q[i]
        if i + 1 < len(imu):
            q = quat_mul(q, _rotvec_quat(imu[i + 1, 1:4] * (t - att_t[i])))
        return quat_normalize(q)

    def gyro_rel(t0, t1):
        return quat_mul(quat_conj(gyro_at(t0)), gyro_at(t1))

    alt_t, alt_z = log.alt[:, 0], log.alt[:, 1]
    if times[0] < alt_t[0] - 0.1 or times[-1] > alt_t[-1] + 0.1:
        raise ValueError("altimeter log does not cover the frame timestamps")

    vel_rows = [(times[0], np.zeros(3))]
    holds = 0
    v_prev = np.zeros(3)
    idx = list(range(0, len(times) - cfg.stride, cfg.stride))
    for i in idx:
        j = i + cfg.stride
        t0, t1 = times[i], times[j]
        dt = t1 - t0
        q0, q1 = attitude_at(t0), attitude_at(t1)
        q1_rel = quat_mul(q0, gyro_rel(t0, t1))
        f0 = frames.frame(i)
        f1 = sample_bilinear(frames.frame(j), derotate(q0, q1_rel, K))
        p0 = to_gray(f0).center_crop(cfg.patch, cfg.patch)
        p1 = to_gray(f1).center_crop(cfg.patch, cfg.patch)
        z_sonar = float(np.interp(t1, alt_t, alt_z))
        r_wb = quat_to_rot(q1)
        cr_cp = r_wb[2, 2]  # cos(roll)*cos(pitch)
        z_eff = max(z_sonar * cr_cp, 1e-3)
        try:
            # phase-correlation pre-alignment keeps LK out of wrong local
            # minima when the inter-frame shift is large (fast segments)
            tx0, ty0, _ = fft_translation(p0, p1)
            h0 = WarpParams(s=0.0, tx=2.0 * tx0 / cfg.patch, ty=2.0 * ty0 / cfg.patch)
            h = cascade_estimate(p0, p1, cascade, est, h0=h0)
            v_app = np.array(pixel_to_metric_velocity(h, z_eff, K, dt,
                                                      cfg.patch, cfg.patch))
            r_wc = quat_to_rot(q0) @ R_BC
            v_world = -(r_wc @ v_app)
            if np.linalg.norm(v_world) > cfg.max_speed:
                raise DegeneracyError("implausible velocity estimate")
        except DegeneracyError:
            v_world = v_prev
            holds += 1
        v_prev = v_world
        vel_rows.append((t1, v_world))
    states = dead_reckon(vel_rows)
    traj = np.array([[s.t, *s.position] for s in states])
    return traj, {"holds": holds, "steps": len(idx)}


def _init_quat(accel, mag):
    """Initial attitude from one accel/mag sample (tilt plus heading)."""
    a = np.asarray(accel, float)
    m = np.asarray(mag, float)
    if np.linalg.norm(a) == 0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    zb = a / np.linalg.norm(a)  # body-frame up (specific force at rest)
    me = m - np.dot(m, zb) * zb
    if np.linalg.norm(me) < 1e-9:
        me = np.array([1.0, 0.0, 0.0]) - zb[0] * zb
    xb = me / np.linalg.norm(me)  # body-frame direction of the world field
    yb = np.cross(zb, xb)
    # columns are the world axes in body coords, i.e. R_bw; the attitude
    # quaternion is world<-body so transpose first
    r_bw = np.column_stack([xb, yb, zb])
    from .sim import rot_to_quat

    return rot_to_quat(r_bw.T)


def trajectory_csv(traj) -> str:
    """Same schema as gt.csv; attitude columns carry the identity."""
    lines = ["t,x,y,z,qw,qx,qy,qz"]
    for row in np.asarray(traj, float):
        lines.append(",".join(f"{v:.9f}" for v in row[:4]) + ",1.000000000,0.000000000,0.000000000,0.000000000")
    return "\n".join(lines) + "\n"


def eval_csv(rows) -> str:
    """rows: list of (trajectory, err_x, err_y, err_z, rmse, length)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trajectory", "err_x", "err_y", "err_z", "rmse", "length_m", "rmse_pct"])
    for name, ex, ey, ez, rmse, length in rows:
        w.writerow([name, f"{ex:.6f}", f"{ey:.6f}", f"{ez:.6f}",
                    f"{rmse:.6f}", f"{length:.6f}", f"{100 * rmse / length:.4f}"])
    return buf.getvalue()
