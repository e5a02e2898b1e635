"""2D lidar PoseSLAM over a sliding window of fully connected GICP factors."""
from .errors import SlamError
from .evaluation import Trajectory, ape, traj_stats
from .factor_graph import BetweenFactor, FactorGraph, LMConfig, NoiseModel, PriorFactor, Values, optimize
from .geometry import Pose2
from .mapping import GridMap, build_map, to_image
from .pipeline import PipelineConfig, SlamPipeline, run_offline
from .scan_matching import LaserScan, PointCloud2, RegistrationConfig, gicp_align, icp_point_to_point
from .simulator import SimConfig, World2D, generate_dataset, preset

__version__ = "0.1.0"

__all__ = [
    "BetweenFactor", "FactorGraph", "GridMap", "LMConfig", "LaserScan", "NoiseModel",
    "PipelineConfig", "PointCloud2", "Pose2", "PriorFactor", "RegistrationConfig",
    "SimConfig", "SlamError", "SlamPipeline", "Trajectory", "Values", "World2D", "ape",
    "build_map", "gicp_align", "generate_dataset", "icp_point_to_point", "optimize",
    "preset", "run_offline", "to_image", "traj_stats",
]
