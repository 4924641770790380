"""Synthetic flight generator: trajectory shapes, ground-plane rendering
and IMU/altimeter synthesis.

Conventions (shared with the fusion module): world frame is ENU with
gravity (0, 0, -9.81); the body frame is x-forward / z-up; the camera is
down-facing with R_bc = diag(1, -1, -1) (camera x = body x, camera y =
-body y, camera z = -body z, optical axis toward the ground).  The
ground texture is centered on the world origin with +x along columns and
+y up the rows (north up in the image).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .image import ImagePlane, _bilinear_gather

GRAVITY = np.array([0.0, 0.0, -9.81])
MAG_WORLD = np.array([1.0, 0.0, 0.0])  # synthetic field reference along world +x
R_BC = np.diag([1.0, -1.0, -1.0])  # camera axes in the body frame

IMU_RATE = 100.0
CAM_RATE = 90.0
ALT_RATE = 20.0


# --- quaternions (w, x, y, z), world<-body ------------------------------------


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q):
    n = np.linalg.norm(q)
    if n == 0:
        raise ValueError("zero-norm quaternion")
    return q / n


def quat_to_rot(q):
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(r):
    t = np.trace(r)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(1.0 + r[i, i] - r[j, j] - r[k, k], 0.0)) * 2
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    return quat_normalize(q)


def quat_rotate(q, v):
    return quat_to_rot(q) @ np.asarray(v, float)


# --- camera -------------------------------------------------------------------


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def default(cls) -> "CameraIntrinsics":
        """640x480 with ~22 degree diagonal field of view."""
        w, h = 640, 480
        diag = math.hypot(w, h)
        f = (diag / 2.0) / math.tan(math.radians(22.0) / 2.0)
        return cls(fx=f, fy=f, cx=w / 2.0, cy=h / 2.0, width=w, height=h)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    position: np.ndarray  # world, z = altitude above the plane
    attitude: np.ndarray  # unit quaternion world<-body (w, x, y, z)


# --- trajectory shapes ---------------------------------------------------------

SHAPES = ("circle", "moon", "line", "figure8", "square")


@dataclass(frozen=True)
class TrajectoryParams:
    shape: str = "circle"
    size: float = 1.5  # radius / half-extent in meters
    period: float | None = None  # seconds per lap; None = mean speed 0.5 m/s
    altitude: float = 2.0
    alt_amplitude: float = 0.3
    duration: float = 60.0
    tilt: bool = True  # roll/pitch consistent with accelerations

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown trajectory shape {self.shape!r}")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.altitude - abs(self.alt_amplitude) <= 0:
            raise ValueError("altitude must stay positive")


class Trajectory:
    """Analytic C1 trajectory; samples position and attitude at any time."""

    def __init__(self, params: TrajectoryParams):
        self.params = params
        if params.period is None:
            period = self._lap_length() / 0.5
        else:
            period = float(params.period)
        self.period = period
        peak = self.peak_speed()
        if peak > 1.5 + 1e-9:
            raise ConfigError(
                f"peak speed {peak:.2f} m/s exceeds the 1.5 m/s cap; increase the period")

    # planar path in lap phase u (one lap = u in [0, 1))
    def _xy(self, u):
        a = self.params.size
        ang = 2 * np.pi * u
        shape = self.params.shape
        if shape == "circle":
            return a * np.cos(ang), a * np.sin(ang)
        if shape == "moon":
            # 270-degree arc swept back and forth (crescent path)
            th = 0.75 * np.pi * (1.0 - np.cos(ang))
            return a * np.cos(th), a * np.sin(th)
        if shape == "line":
            return a * (1.0 - np.cos(ang)) - a, np.zeros_like(ang)
        if shape == "figure8":
            return a * np.sin(ang), a * np.sin(ang) * np.cos(ang)
        # square: smoothed (tanh-saturated circle), C-infinity closed curve
        k = 3.0
        return (a * np.tanh(k * np.cos(ang)) / math.tanh(k),
                a * np.tanh(k * np.sin(ang)) / math.tanh(k))

    def _lap_length(self) -> float:
        u = np.linspace(0, 1, 4096, endpoint=False)
        x, y = self._xy(u)
        dx = np.diff(np.append(x, x[0]))
        dy = np.diff(np.append(y, y[0]))
        return float(np.hypot(dx, dy).sum())

    def pos(self, ts):
        ts = np.atleast_1d(np.asarray(ts, float))
        u = ts / self.period
        x, y = self._xy(u)
        z = self.params.altitude + self.params.alt_amplitude * np.sin(
            2 * np.pi * ts / self.params.duration * 2.0)
        return np.stack([x, y, z], axis=-1)

    def vel(self, ts, eps: float = 1e-4):
        return (self.pos(np.asarray(ts, float) + eps) - self.pos(np.asarray(ts, float) - eps)) / (2 * eps)

    def acc(self, ts, eps: float = 1e-3):
        ts = np.asarray(ts, float)
        return (self.pos(ts + eps) - 2 * self.pos(ts) + self.pos(ts - eps)) / eps**2

    def peak_speed(self) -> float:
        ts = np.linspace(0, self.params.duration, 2048)
        return float(np.linalg.norm(self.vel(ts), axis=-1).max())

    def path_length(self) -> float:
        ts = np.linspace(0, self.params.duration, 8192)
        p = self.pos(ts)
        return float(np.linalg.norm(np.diff(p, axis=0), axis=-1).sum())

    def _heading(self, ts, eps: float = 1e-4):
        """Unit heading direction; follows the path tangent by parameter so
        it stays continuous through speed reversals (line, moon)."""
        ts = np.atleast_1d(np.asarray(ts, float))
        shape = self.params.shape
        if shape == "line":
            h = np.tile([1.0, 0.0], (len(ts), 1))
            return h
        u = ts / self.period
        x1, y1 = self._xy(u + eps)
        x0, y0 = self._xy(u - eps)
        dx, dy = np.asarray(x1) - np.asarray(x0), np.asarray(y1) - np.asarray(y0)
        if shape == "moon":
            # tangent w.r.t. arc angle (sign-free through reversals)
            th = 0.75 * np.pi * (1.0 - np.cos(2 * np.pi * u))
            dx, dy = -np.sin(th), np.cos(th)
        n = np.hypot(dx, dy)
        n = np.where(n == 0, 1.0, n)
        return np.stack([dx / n, dy / n], axis=-1)

    def attitude(self, t: float) -> np.ndarray:
        """World<-body quaternion: yaw follows heading, thrust-consistent tilt."""
        head = self._heading(t)[0]
        if self.params.tilt:
            f = self.acc(t)[0] - GRAVITY
        else:
            f = -GRAVITY
        zb = f / np.linalg.norm(f)
        h3 = np.array([head[0], head[1], 0.0])
        xb = h3 - np.dot(h3, zb) * zb
        xb = xb / np.linalg.norm(xb)
        yb = np.cross(zb, xb)
        return rot_to_quat(np.column_stack([xb, yb, zb]))

    def sample(self, t: float) -> TrajectorySample:
        return TrajectorySample(float(t), self.pos(t)[0], self.attitude(t))

    def sample_times(self, rate: float) -> np.ndarray:
        n = int(math.floor(self.params.duration * rate)) + 1
        return np.arange(n) / rate


def gen_trajectory(shape: str, size: float = 1.5, period: float | None = None,
                   altitude: float = 2.0, alt_amplitude: float = 0.3,
                   duration: float = 60.0, rate: float = IMU_RATE,
                   tilt: bool = True):
    """Sample one of the five trajectory shapes at the given rate."""
    traj = Trajectory(TrajectoryParams(shape, size, period, altitude,
                                       alt_amplitude, duration, tilt))
    return [traj.sample(t) for t in traj.sample_times(rate)]


# --- rendering ------------------------------------------------------------------


@dataclass(frozen=True)
class GroundPlane:
    """Ground texture with metric scale; centered on the world origin."""

    texture: ImagePlane
    m_per_px: float

    def __post_init__(self):
        if self.m_per_px <= 0:
            raise ValueError("m_per_px must be positive")


def render_view(ground: GroundPlane, pose: TrajectorySample,
                K: CameraIntrinsics) -> ImagePlane:
    """Render the camera view of the z=0 plane by exact ray casting."""
    r_wc = quat_to_rot(pose.attitude) @ R_BC
    p = pose.position
    if p[2] <= 0:
        raise ValueError("camera must be above the plane")
    u, v = np.meshgrid(np.arange(K.width, dtype=float), np.arange(K.height, dtype=float))
    d = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    dw = d @ r_wc.T
    if np.any(dw[:, :, 2] >= 0):
        raise ValueError("camera does not look at the ground plane")
    lam = -p[2] / dw[:, :, 2]
    gx = p[0] + lam * dw[:, :, 0]
    gy = p[1] + lam * dw[:, :, 1]
    tex = ground.texture
    col = gx / ground.m_per_px + tex.width / 2.0
    row = -gy / ground.m_per_px + tex.height / 2.0
    corners = [(0, 0), (K.width - 1, 0), (0, K.height - 1), (K.width - 1, K.height - 1)]
    for cx_, cy_ in corners:
        c, r = col[cy_, cx_], row[cy_, cx_]
        if not (0 <= c <= tex.width - 1 and 0 <= r <= tex.height - 1):
            raise ValueError(
                f"footprint outside texture at image corner ({cx_},{cy_}): "
                f"texture coords ({c:.1f},{r:.1f})")
    vals, _, _, valid = _bilinear_gather(tex.data, tex.mask, col, row)
    return ImagePlane(vals, valid)


class RenderedFrames:
    """Lazy frame source: renders poses on demand with a one-frame cache."""

    def __init__(self, traj: Trajectory, ground: GroundPlane, K: CameraIntrinsics,
                 times=None, window: int | None = None):
        """window crops the camera to a centered window x window view
        (principal point preserved); .K reflects the effective camera."""
        self.traj = traj
        self.ground = ground
        if window is not None:
            x0 = (K.width - window) / 2.0
            y0 = (K.height - window) / 2.0
            K = CameraIntrinsics(K.fx, K.fy, K.cx - x0, K.cy - y0, window, window)
        self.K = K
        self.times = np.asarray(times if times is not None
                                else traj.sample_times(CAM_RATE), float)
        self._cache = {}

    def __len__(self):
        return len(self.times)

    def frame(self, i: int) -> ImagePlane:
        if i not in self._cache:
            if len(self._cache) > 2:
                self._cache.clear()
            self._cache[i] = render_view(self.ground, self.traj.sample(self.times[i]), self.K)
        return self._cache[i]


# --- sensors --------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    gyro: float = 0.005  # rad/s
    accel: float = 0.05  # m/s^2
    mag: float = 0.01
    sonar: float = 0.02  # m
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    accel_bias: tuple = (0.0, 0.0, 0.0)

    @classmethod
    def zero(cls) -> "NoiseSpec":
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass
class SensorLog:
    imu: np.ndarray  # rows (t, gx, gy, gz, ax, ay, az, mx, my, mz)
    alt: np.ndarray  # rows (t, z)
    cam_t: np.ndarray  # camera timestamps


def _angular_rate(q0, q1, dt):
    """Body angular rate from consecutive attitudes (axis-angle of the
    relative quaternion over dt)."""
    dq = quat_mul(quat_conj(q0), q1)
    if dq[0] < 0:
        dq = -dq
    vec = dq[1:]
    n = np.linalg.norm(vec)
    if n < 1e-15:
        return np.zeros(3)
    angle = 2.0 * math.atan2(n, dq[0])
    return vec / n * angle / dt


def synth_imu(traj_samples, noise: NoiseSpec = NoiseSpec(), seed: int = 0) -> np.ndarray:
    """IMU rows at the trajectory sample rate.

    gyro = body angular rate + bias + noise; accel = body-frame specific
    force R_bw (a_world - g) + bias + noise; mag = body-frame world
    reference + noise.
    """
    samples = list(traj_samples)
    if len(samples) < 3:
        raise ValueError("need at least 3 trajectory samples")
    rng = np.random.default_rng(seed)
    ts = np.array([s.t for s in samples])
    pos = np.array([s.position for s in samples])
    n = len(samples)
    rows = np.empty((n, 10))
    rows[:, 0] = ts
    for i in range(n):
        j0, j1 = max(i - 1, 0), min(i + 1, n - 1)
        dt = ts[j1] - ts[j0]
        gyro = _angular_rate(samples[j0].attitude, samples[j1].attitude, dt)
        a_w = (pos[j1] - 2 * pos[i] + pos[j0]) / ((ts[1] - ts[0]) ** 2) if 0 < i < n - 1 \
            else np.zeros(3)
        r_bw = quat_to_rot(samples[i].attitude).T
        accel = r_bw @ (a_w - GRAVITY)
        mag = r_bw @ MAG_WORLD
        rows[i, 1:4] = gyro + np.asarray(noise.gyro_bias) + rng.normal(0, 1, 3) * noise.gyro
        rows[i, 4:7] = accel + np.asarray(noise.accel_bias) + rng.normal(0, 1, 3) * noise.accel
        rows[i, 7:10] = mag + rng.normal(0, 1, 3) * noise.mag
    return rows


def synth_altimeter(traj_samples, sigma: float = 0.02, seed: int = 0,
                    rate: float = ALT_RATE) -> np.ndarray:
    """Altimeter rows (t, z) at the given rate with Gaussian noise."""
    samples = list(traj_samples)
    ts = np.array([s.t for s in samples])
    zs = np.array([s.position[2] for s in samples])
    t_alt = np.arange(int(math.floor(ts[-1] * rate)) + 1) / rate
    z = np.interp(t_alt, ts, zs)
    rng = np.random.default_rng(seed)
    return np.column_stack([t_alt, z + rng.normal(0, 1, len(z)) * sigma])


def make_sensor_log(traj: Trajectory, noise: NoiseSpec = NoiseSpec(),
                    seed: int = 0) -> SensorLog:
    imu_samples = [traj.sample(t) for t in traj.sample_times(IMU_RATE)]
    imu = synth_imu(imu_samples, noise, seed)
    alt = synth_altimeter(imu_samples, noise.sonar, seed + 1)
    cam_t = traj.sample_times(CAM_RATE)
    return SensorLog(imu=imu, alt=alt, cam_t=cam_t)


# --- CSV interfaces --------------------------------------------------------------


def imu_csv(imu: np.ndarray) -> str:
    head = "t,gx,gy,gz,ax,ay,az,mx,my,mz"
    lines = [head] + [",".join(f"{v:.9f}" for v in row) for row in imu]
    return "\n".join(lines) + "\n"


def alt_csv(alt: np.ndarray) -> str:
    lines = ["t,z"] + [",".join(f"{v:.9f}" for v in row) for row in alt]
    return "\n".join(lines) + "\n"


def gt_csv(traj_samples) -> str:
    lines = ["t,x,y,z,qw,qx,qy,qz"]
    for s in traj_samples:
        vals = [s.t, *s.position, *s.attitude]
        lines.append(",".join(f"{v:.9f}" for v in vals))
    return "\n".join(lines) + "\n"


def frames_csv(cam_t) -> str:
    lines = ["index,t"] + [f"{i},{t:.9f}" for i, t in enumerate(cam_t)]
    return "\n".join(lines) + "\n"
