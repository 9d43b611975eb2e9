"""Differentiable multi-frame body fitting with texture-consistency supervision."""

from .body_model import (BodyModel, HumanoidConfig, Mesh, PoseParams,
                         forward_kinematics, lbs, load_model,
                         make_procedural_humanoid, matrix_to_rot6d,
                         regress_joints, rot6d_identity, rot6d_to_matrix,
                         save_model, shaped_template, texel_positions)
from .camera import CameraParams, RigidTransform, apply_extrinsics, project, view_depth
from .losses import (FrameParams, LossReport, LossWeights, QuadraticPrior,
                     keypoint_2d, mesh_consistency, quadratic_prior,
                     shape_consistency, texture_consistency, total_loss)
from .metrics import (PoseMetrics, compute_pose_metrics, mpjpe, nmpjpe,
                      procrustes_rec_error, silhouette_metrics)
from .optim import (FitConfig, FitResult, ParamLayout, compute_visibility,
                    finite_difference_check, fit, gradient, loss_report)
from .render import (Image, RasterBuffers, TextureMap, extract_texture,
                     effective_texel_visibility, rasterize, read_ppm,
                     render_image, render_silhouette, sample_bilinear,
                     texel_visibility, write_ppm)
from .synth import (Frame, NoiseSpec, PerturbSpec, Scene, generate_scene,
                    generate_texture, perturb)

__version__ = "0.1.0"
