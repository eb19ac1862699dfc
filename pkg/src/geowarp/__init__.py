"""Differentiable geometric warps (Lie-group transforms, pinhole
projection, per-pixel flow fields, bilinear sampling, robust losses) and
dense photometric alignment built on them."""

from .alignment import (
    AlignConfig,
    AlignmentProblem,
    AlignmentResult,
    annealed_align,
    align,
    coarse_to_fine_align,
    photometric_cost,
    photometric_gradient,
)
from .camera import CameraIntrinsics, grid_generator_3d, inverse_project, project, project_points
from .estimator import PhotometricAligner
from .grids import GridError, make_grid, reduce_sum
from .lie import (
    ParameterDomainError,
    euler_to_rotation,
    quat_to_rotation,
    se3_backward,
    se3_forward,
    sim3_backward,
    sim3_forward,
    so3_backward,
    so3_exp,
)
from .robust import RobustLoss
from .sampler import bilinear_sample, bilinear_sample_backward

__version__ = "0.1.0"
