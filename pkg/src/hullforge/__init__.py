"""Probabilistic visual hulls from few views, refined by a patch-wise 3-D autoencoder."""

from .calib import CameraCalibration, CameraRig, load_rig, project_voxel, save_rig, validate_rig, world_to_camera
from .matte import SoftMatte, load_matte, save_matte
from .mesh import TriangleMesh, export_obj, marching_cubes, select_threshold
from .metrics import EvalReport, psnr, reproject_silhouette, ssim, voxel_mse
from .patch import PatchSpec, extract_patches, reassemble
from .pvh import GridSpec, VoxelGrid, compute_pvh, load_grid, save_grid

__version__ = "0.1.0"

__all__ = [
    "CameraCalibration",
    "CameraRig",
    "EvalReport",
    "GridSpec",
    "PatchSpec",
    "SoftMatte",
    "TriangleMesh",
    "VoxelGrid",
    "compute_pvh",
    "export_obj",
    "extract_patches",
    "load_grid",
    "load_matte",
    "load_rig",
    "marching_cubes",
    "project_voxel",
    "psnr",
    "reassemble",
    "reproject_silhouette",
    "save_grid",
    "save_matte",
    "save_rig",
    "select_threshold",
    "ssim",
    "validate_rig",
    "voxel_mse",
    "world_to_camera",
]
