"""Level-of-detail Gaussian scenes, subtree partitioning, streaming traversal,
divergence-free splatting, and a cycle-approximate accelerator model."""

from .errors import (
    ConfigError,
    ConstructionError,
    ImageFormatError,
    InvariantError,
    LodsplatError,
    ParameterError,
    SceneFormatError,
    SltFormatError,
)
from .scene import (
    Camera,
    Gaussian,
    LodNode,
    LodTree,
    Visibility,
    evaluate_view,
    frustum_test,
    gen_synthetic_tree,
    load_camera,
    load_scene,
    oracle_cut,
    orbit_camera,
    projected_size,
    save_camera,
    save_scene,
)
from .simarch import ArchConfig, SimReport, exhaustive_baseline, simulate_end_to_end, simulate_lod, simulate_splat
from .sltree import SLTree, Subtree, SubtreeNodeRecord, build_sltree, load_sltree, validate_sltree, write_sltree
from .splat import blend_grouped, blend_reference, image_metrics, read_image, render_image, write_image
from .traversal import Cut, WorkloadStats, compute_weights, traverse, traverse_static, workload_report

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "Camera",
    "ConfigError",
    "ConstructionError",
    "Cut",
    "Gaussian",
    "ImageFormatError",
    "InvariantError",
    "LodNode",
    "LodTree",
    "LodsplatError",
    "ParameterError",
    "SLTree",
    "SceneFormatError",
    "SimReport",
    "SltFormatError",
    "Subtree",
    "SubtreeNodeRecord",
    "Visibility",
    "WorkloadStats",
    "blend_grouped",
    "blend_reference",
    "build_sltree",
    "compute_weights",
    "evaluate_view",
    "exhaustive_baseline",
    "frustum_test",
    "gen_synthetic_tree",
    "image_metrics",
    "load_camera",
    "load_scene",
    "load_sltree",
    "oracle_cut",
    "orbit_camera",
    "projected_size",
    "read_image",
    "render_image",
    "save_camera",
    "save_scene",
    "simulate_end_to_end",
    "simulate_lod",
    "simulate_splat",
    "traverse",
    "traverse_static",
    "validate_sltree",
    "workload_report",
    "write_image",
    "write_sltree",
]
