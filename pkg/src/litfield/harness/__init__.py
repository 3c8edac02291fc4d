"""Synthetic evaluation harness: analytic scenes, RGB-D rendering,
ground-truth environment maps, orbit trajectories, and quality metrics."""

from .metrics import psnr, ssim
from .scene import (FaceAppearance, SyntheticScene, Trajectory, default_scene,
                    ground_truth_envmap, load_scene, look_at, orbit_trajectory,
                    render_rgbd)

__all__ = [
    "FaceAppearance", "SyntheticScene", "Trajectory", "default_scene",
    "ground_truth_envmap", "load_scene", "look_at", "orbit_trajectory",
    "render_rgbd", "psnr", "ssim",
]
