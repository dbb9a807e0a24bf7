"""breathsync: distributed breathing simulation with SH lung deformation.

A server drives a parameterized pressure-volume breathing cycle and
broadcasts one compact parameter packet per cycle; clients reconstruct
identical 3D lung deformations locally via spherical-harmonic kernel
products, with clock-offset estimation keeping every participant's
normalized breathing volume in phase.
"""

__version__ = "0.1.0"

from .harmonics import (
    Direction,
    SHCoefficients,
    analyze,
    analyze_arrays,
    eval_real_sh,
    power_spectrum,
    synthesize,
    synthesize_arrays,
)
from .lung import (
    ElasticityKernel,
    PVParams,
    build_force_coeffs,
    default_elasticity_kernel,
    deform,
    gravity_force_field,
    interpolate_force_coeffs,
    normalized_volume,
    pressure_waveform,
    pv_volume,
)
from .mesh import LungMesh, MeshShape, enclosed_volume, load_off, make_test_lung, save_off
from .protocol import (
    ControlPacketObject,
    SyncKind,
    SyncMessage,
    decode_cpo,
    decode_sync,
    encode_cpo,
    encode_sync,
)
from .registration import Pose, apply_pose, estimate_rigid_pose
from .session import ClientState, NetworkConfig, ServerState, SimulatedSession
from .timesync import (
    BreathingSchedule,
    DelayEstimator,
    DriftReport,
    VolumeTrace,
    drift_per_cycle,
    four_timestamp_offset,
    local_cycle_start,
    update_delay_estimate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
