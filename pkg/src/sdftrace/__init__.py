"""Differentiable sphere tracing for implicit signed distance fields."""

from .autodiff import Tape, Tensor, backward, finite_diff
from .bench import BenchRow, benchmark_field, default_scene, run_bench, \
    strategy_ladder
from .camera import Camera, Intrinsics, Pose, generate_rays, load_camera, \
    log_rotation, look_at, pose_gradient, project, rotation_matrix, save_camera, \
    unproject
from .fields import AttributeField, BoxField, NeuralField, PlaneField, \
    ScaleField, SphereField, TranslateField, UnionField, eval_field, \
    eval_field_taped, load_field, save_field, set_eval_threads
from .fitting import FamilyFitReport, FitReport, fit_attribute, fit_family, \
    fit_to_analytic, sample_sdf_points
from .imageio import read_pfm, read_pgm, write_pfm, write_pgm, write_png
from .losses import LossWeights, Observation, bilinear_sample, depth_loss, \
    latent_reg, normal_loss, photometric_loss, silhouette_loss, to_gray, \
    visibility_mask
from .optimize import AdamState, ChamferResult, OptimizationError, \
    OptimizeReport, adam_step, chamfer, complete_shape, recover_pose, \
    reconstruct_multiview, surface_point_cloud
from .shading import HeadBundle, RenderMaps, attribute_map, depth_map, \
    diff_heads, hard_mask, normal_map, ray_distance, render, soft_silhouette, \
    surface_points
from .tracer import CONVERGED, ESCAPED, EXHAUSTED, MARCHING, TraceConfig, \
    TraceResult, epsilon_bound, min_steps_bound, trace

__version__ = "0.1.0"
