import numpy as np
import pytest

from prgflow.errors import ConfigError
from prgflow.image import multi_octave_texture
from prgflow.sim import (
    ALT_RATE,
    CAM_RATE,
    CameraIntrinsics,
    GroundPlane,
    IMU_RATE,
    NoiseSpec,
    Trajectory,
    TrajectoryParams,
    gen_trajectory,
    make_sensor_log,
    quat_to_rot,
    render_view,
    synth_altimeter,
    synth_imu,
)


def _ground(size=1024, seed=0, m_per_px=0.005):
    return GroundPlane(multi_octave_texture(size, seed), m_per_px)


def test_default_intrinsics_fov():
    K = CameraIntrinsics.default()
    assert (K.width, K.height) == (640, 480)
    diag = np.hypot(640, 480) / 2.0
    fov = 2 * np.degrees(np.arctan(diag / K.fx))
    assert abs(fov - 22.0) < 0.1


def test_circle_path_length():
    samples = gen_trajectory("circle", size=1.0, period=12.0, altitude=2.0,
                             alt_amplitude=0.0, duration=12.0)
    pos = np.array([s.position for s in samples])
    length = np.linalg.norm(np.diff(pos, axis=0), axis=1).sum()
    assert abs(length - 2 * np.pi) < 0.01


def test_line_constant_heading():
    samples = gen_trajectory("line", size=1.0, period=8.0, altitude=2.0,
                             alt_amplitude=0.0, duration=8.0, tilt=False)
    yaws = []
    for s in samples:
        r = quat_to_rot(s.attitude)
        yaws.append(np.arctan2(r[1, 0], r[0, 0]))
    assert np.ptp(yaws) < 1e-6
    pos = np.array([s.position for s in samples])
    assert np.ptp(pos[:, 1]) < 1e-9  # no lateral motion


def test_figure8_closed():
    traj = Trajectory(TrajectoryParams(shape="figure8", size=1.0, period=10.0,
                                       altitude=2.0, alt_amplitude=0.0, duration=10.0))
    a = traj.sample(0.0).position
    b = traj.sample(10.0).position
    assert np.linalg.norm(a - b) < 1e-6


def test_speed_limits():
    for shape in ("circle", "moon", "line", "figure8", "square"):
        traj = Trajectory(TrajectoryParams(shape=shape, size=1.5, duration=30.0))
        ts = traj.sample_times(IMU_RATE)
        pos = np.array([traj.sample(t).position for t in ts])
        speed = np.linalg.norm(np.diff(pos, axis=0), axis=1) * IMU_RATE
        assert speed.max() <= 1.5 + 1e-6
        assert 0.2 < speed.mean() < 0.8


def test_speed_cap_enforced():
    with pytest.raises(ConfigError):
        Trajectory(TrajectoryParams(shape="circle", size=2.0, period=4.0))


def test_unknown_shape():
    with pytest.raises(ConfigError):
        TrajectoryParams(shape="spiral")


def test_render_deterministic():
    ground = _ground()
    traj = Trajectory(TrajectoryParams(shape="circle", size=0.3, altitude=2.0,
                                       alt_amplitude=0.0, duration=10.0))
    pose = traj.sample(1.0)
    K = CameraIntrinsics.default()
    a = render_view(ground, pose, K)
    b = render_view(ground, pose, K)
    assert np.array_equal(a.data, b.data)


def test_render_altitude_scaling():
    """Doubling altitude halves the image-plane size of ground features."""
    from prgflow.estimators import fft_scale_translation
    from prgflow.sim import TrajectorySample

    ground = _ground(2048, 1, 0.002)
    K = CameraIntrinsics(500.0, 500.0, 64.0, 64.0, 128, 128)
    q = np.array([1.0, 0.0, 0.0, 0.0])
    lo = render_view(ground, TrajectorySample(0.0, np.array([0.0, 0.0, 1.0]), q), K)
    hi = render_view(ground, TrajectorySample(0.0, np.array([0.0, 0.0, 1.1]), q), K)
    h = fft_scale_translation(lo, hi)
    # content shrinks by 1/1.1: estimated forward warp scale s = -1 + 1/1.1
    assert abs(h.s - (1.0 / 1.1 - 1.0)) < 0.01


def test_render_translation_consistency():
    from prgflow.estimators import fft_translation
    from prgflow.sim import TrajectorySample

    ground = _ground(2048, 2, 0.002)
    K = CameraIntrinsics(500.0, 500.0, 64.0, 64.0, 128, 128)
    q = np.array([1.0, 0.0, 0.0, 0.0])
    z = 2.0
    d = 0.02  # meters
    a = render_view(ground, TrajectorySample(0.0, np.array([0.0, 0.0, z]), q), K)
    b = render_view(ground, TrajectorySample(0.0, np.array([d, 0.0, z]), q), K)
    tx, ty, _ = fft_translation(a, b)
    assert abs(abs(tx) - K.fx * d / z) < 0.2
    assert abs(ty) < 0.2


def test_render_footprint_error():
    ground = _ground(256, 3, 0.001)  # tiny texture
    from prgflow.sim import TrajectorySample

    q = np.array([1.0, 0.0, 0.0, 0.0])
    with pytest.raises(ValueError, match="corner"):
        render_view(ground, TrajectorySample(0.0, np.array([0.0, 0.0, 5.0]), q),
                    CameraIntrinsics.default())


def test_synth_imu_static():
    from prgflow.sim import TrajectorySample

    q = np.array([1.0, 0.0, 0.0, 0.0])
    samples = [TrajectorySample(t, np.array([0.0, 0.0, 2.0]), q)
               for t in np.arange(0, 2, 0.01)]
    imu = synth_imu(samples, NoiseSpec.zero(), seed=0)
    assert np.allclose(imu[:, 1:4], 0.0, atol=1e-9)          # gyro
    assert np.allclose(imu[:, 4:7], (0.0, 0.0, 9.81), atol=1e-6)  # accel
    mags = imu[:, 7:10]
    assert np.allclose(mags, mags[0], atol=1e-12)


def test_synth_imu_circle_gyro_z():
    period = 20.0
    traj = Trajectory(TrajectoryParams(shape="circle", size=1.0, period=period,
                                       altitude=2.0, alt_amplitude=0.0,
                                       duration=period, tilt=False))
    samples = [traj.sample(t) for t in traj.sample_times(IMU_RATE)]
    imu = synth_imu(samples, NoiseSpec.zero(), seed=0)
    gz = imu[5:-5, 3]
    assert np.allclose(gz, 2 * np.pi / period, atol=2e-3)


def test_synth_imu_deterministic():
    traj = Trajectory(TrajectoryParams(shape="circle", size=1.0, duration=5.0))
    samples = [traj.sample(t) for t in traj.sample_times(IMU_RATE)]
    a = synth_imu(samples, NoiseSpec(), seed=3)
    b = synth_imu(samples, NoiseSpec(), seed=3)
    assert np.array_equal(a, b)


def test_synth_altimeter():
    from prgflow.sim import TrajectorySample

    q = np.array([1.0, 0.0, 0.0, 0.0])
    samples = [TrajectorySample(t, np.array([0.0, 0.0, 2.0]), q)
               for t in np.arange(0, 500, 0.01)]
    rows = synth_altimeter(samples, sigma=0.0, seed=0)
    assert np.allclose(rows[:, 1], 2.0)
    noisy = synth_altimeter(samples, sigma=0.02, seed=1)
    sd = np.std(noisy[:, 1] - 2.0)
    assert 0.015 < sd < 0.025


def test_make_sensor_log_rates():
    traj = Trajectory(TrajectoryParams(shape="circle", size=1.0, duration=4.0))
    log = make_sensor_log(traj, NoiseSpec.zero(), seed=0)
    assert abs(1.0 / np.median(np.diff(log.imu[:, 0])) - IMU_RATE) < 1e-6
    assert abs(1.0 / np.median(np.diff(log.alt[:, 0])) - ALT_RATE) < 1e-6
    assert abs(1.0 / np.median(np.diff(log.cam_t)) - CAM_RATE) < 1e-6
