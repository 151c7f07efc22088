"""Grasp-pose-guided latent diffusion policy with a built-in kinematic
grasping simulator, synthetic demonstration factory, and evaluation suites."""

from .config import DEFAULTS, config_hash, resolve
from .diffusion import (
    LatentDiffusionPolicy,
    NoiseSchedule,
    ObservationBundle,
    build_schedule,
)
from .evaluation import PolicyRunner, TrialResult, grasp_frame_error, success_rate
from .geometry import DistanceWeights, Pose, se3_exp, se3_log, weighted_distance
from .graspsense import CameraModel, GraspCandidate, SurfaceCloud
from .selector import HeuristicPoseSelector
from .simworld import SceneSpec, World, spawn
from .vae import ActionChunkVAE

__version__ = "0.1.0"

__all__ = [
    "ActionChunkVAE",
    "CameraModel",
    "DEFAULTS",
    "DistanceWeights",
    "GraspCandidate",
    "HeuristicPoseSelector",
    "LatentDiffusionPolicy",
    "NoiseSchedule",
    "ObservationBundle",
    "PolicyRunner",
    "Pose",
    "SceneSpec",
    "SurfaceCloud",
    "TrialResult",
    "World",
    "build_schedule",
    "config_hash",
    "grasp_frame_error",
    "resolve",
    "se3_exp",
    "se3_log",
    "spawn",
    "success_rate",
    "weighted_distance",
]
