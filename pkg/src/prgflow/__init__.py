"""prgflow: pseudo-similarity ego-motion estimation with IMU/altimeter fusion."""

from .errors import ConfigError, DegeneracyError, ParameterDomainError
from .warps import (
    PixelWarp,
    WarpModel,
    WarpParams,
    compose,
    invert,
    matrix_to_params,
    params_to_pixel_warp,
    warp_points,
)
from .image import (
    AugmentParams,
    ImagePlane,
    augment,
    multi_octave_texture,
    preprocess,
    sample_bilinear,
    ssim_map,
    to_gray,
    warp_image,
    warp_jacobian,
)
from .losses import (
    LossSpec,
    LossTerm,
    MetricSpec,
    loss_distill,
    loss_projection,
    loss_supervised,
    loss_unsupervised,
    parse_loss_spec,
    photometric_distance,
)
from .estimators import (
    CascadeConfig,
    CnnEstimator,
    LkOptions,
    LucasKanadeEstimator,
    cascade_estimate,
    fft_scale_translation,
    fft_translation,
    lk_refine,
)
from .network import (
    ModelWeights,
    PRESETS,
    adam_step,
    count_params_flops,
    init_weights,
    load_weights,
    save_weights,
)
from .training import TrainConfig, train, train_student
from .bench import (
    BenchRecord,
    WarpRange,
    accuracy,
    gen_pair,
    identity_baseline,
    load_corpus,
    metric_errors,
    run_benchmark,
)
from .sim import (
    CameraIntrinsics,
    GroundPlane,
    NoiseSpec,
    RenderedFrames,
    SensorLog,
    Trajectory,
    TrajectoryParams,
    gen_trajectory,
    make_sensor_log,
    render_view,
    synth_altimeter,
    synth_imu,
)
from .fusion import (
    AttitudeState,
    VioConfig,
    align_and_rmse,
    dead_reckon,
    derotate,
    madgwick_update,
    pixel_to_metric_velocity,
    run_vio,
)

__version__ = "0.1.0"
