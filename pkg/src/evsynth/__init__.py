"""evsynth: synthetic event-camera streams with exact optical-flow ground truth.

Pipeline: procedural sprite scenes -> high-rate frame rendering ->
threshold-crossing event emulation (with configurable sensor noise) ->
dense flow ground truth -> interchange formats and evaluation metrics.
"""

from .events import (
    EmulatorConfig,
    Event,
    EventStream,
    LogFrame,
    PixelState,
    generate_events_pair,
    log_transform,
    simulate_sequence,
)
from .emulators import (
    NoiseModel,
    ThresholdMap,
    apply_refractory,
    brownian_crossing_times,
    inject_noise_events,
    make_emulator,
    sample_crossing_intervals,
    sample_threshold_map,
)
from .trajectory import (
    CollisionReport,
    Pose,
    PoseSpline,
    adaptive_timestamps,
    detect_and_cut,
    fit_pose_spline,
    query_pose,
    sample_poses,
    uniform_timestamps,
)
from .scene import (
    FlowField,
    Sprite,
    SpriteScene,
    build_scene,
    compute_flow_gt,
    load_scene,
    make_texture_pool,
    render_frame,
    rigid_motion_field,
    save_scene,
)
from .metrics import (
    EvalReport,
    aee,
    angular_error,
    endpoint_error,
    evaluate_sequence,
    npe,
    outlier_rate,
)
from .formats import (
    DatasetLayout,
    Evt1Error,
    VoxelGrid,
    read_events,
    read_flo,
    read_pfm,
    voxelize,
    write_events,
    write_flo,
    write_pfm,
)

__version__ = "0.1.0"
