"""Supervision terms: texture, shape, keypoint, mesh consistency and the
quadratic pose/shape prior, plus their weighted composition over a batch.

Distances are per-element L2, averaged over whatever is visible (texels,
annotated joints, vertices) so magnitudes stay comparable across atlas and
image sizes. Pair terms average over the chosen frame pairs. Gradients flow
into both members of a pair and never into visibility masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .body_model import (BodyModel, Mesh, PoseParams, lbs, regress_joints,
                         rot6d_to_matrix, rot6d_to_matrix_batch)
from .camera import CameraParams, RigidTransform, project
from .errors import (AtlasMismatch, EmptyBatch, KeypointDimMismatch,
                     PriorDimMismatch, ShapeDimMismatch, VertexCountMismatch)
from .render import TextureMap, extract_texture


@dataclass
class LossWeights:
    """Nonnegative weights of the five loss terms."""

    texture: float = 10.0
    shape: float = 1.0
    prior: float = 0.1
    kp2d: float = 1.0
    mesh: float = 5.0

    def validate(self) -> None:
        vals = [self.texture, self.shape, self.prior, self.kp2d, self.mesh]
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be nonnegative")
        if not any(v > 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")

    def as_dict(self) -> dict:
        return {"texture": self.texture, "shape": self.shape,
                "prior": self.prior, "kp2d": self.kp2d, "mesh": self.mesh}


@dataclass
class LossReport:
    """Per-term values, their weighted total, counts, and (optionally) the
    gradient over all packed frame parameters."""

    terms: dict
    total: float
    counts: dict
    gradient: np.ndarray | None = None

    def to_json_dict(self, include_gradient: bool = False) -> dict:
        out = {"terms": {k: float(v) for k, v in self.terms.items()},
               "total": float(self.total),
               "counts": self.counts,
               "gradient_norm": (None if self.gradient is None
                                 else float(np.linalg.norm(self.gradient)))}
        if include_gradient and self.gradient is not None:
            out["gradient"] = [float(g) for g in self.gradient]
        return out


@dataclass
class QuadraticPrior:
    """Deterministic stand-in for a learned pose/shape prior.

    An exact quadratic in the packed parameters: diagonal Mahalanobis
    distance of each joint's 6D rotation encoding from its mean encoding,
    plus a diagonal quadratic on the shape coefficients. Zero at the mean,
    convex and smooth; as a bonus it keeps the 6D vectors near their
    canonical scale.
    """

    rot_mean: np.ndarray      # (J-1, 6)
    rot_inv_var: np.ndarray   # (J-1,)
    shape_mean: np.ndarray    # (S,)
    shape_inv_var: np.ndarray  # (S,)

    @staticmethod
    def rest_prior(num_joints: int, num_shape: int,
                   rot_inv_var: float = 0.05,
                   shape_inv_var: float = 0.5) -> "QuadraticPrior":
        from .body_model import rot6d_identity
        return QuadraticPrior(
            rot_mean=rot6d_identity(max(num_joints - 1, 0)),
            rot_inv_var=np.full(max(num_joints - 1, 0), rot_inv_var),
            shape_mean=np.zeros(num_shape),
            shape_inv_var=np.full(num_shape, shape_inv_var),
        )


def texture_consistency(a_i: TextureMap, a_j: TextureMap):
    """Mean color distance over texels visible in both maps (0 if none)."""
    vi = np.asarray(a_i.visible, dtype=bool)
    vj = np.asarray(a_j.visible, dtype=bool)
    if vi.shape != vj.shape:
        raise AtlasMismatch("texture maps use different atlas lengths")
    joint = vi & vj
    if not joint.any():
        return 0.0
    d = ad.norm(a_i.values[joint] - a_j.values[joint], axis=1)
    return ad.mean_(d)


def texture_overlap_count(a_i: TextureMap, a_j: TextureMap) -> int:
    return int((np.asarray(a_i.visible, bool) & np.asarray(a_j.visible, bool)).sum())


def shape_consistency(shape_i, shape_j):
    """L2 distance between two shape coefficient vectors."""
    si, sj = ad.value_of(shape_i), ad.value_of(shape_j)
    if si.shape != sj.shape:
        raise ShapeDimMismatch(f"{si.shape} vs {sj.shape}")
    return ad.norm(shape_i - shape_j)


def keypoint_2d(x, x_gt, conf):
    """Confidence-weighted mean pixel distance over annotated joints.

    A confidence of 0 removes a joint entirely; all-zero confidence gives 0.
    """
    xv, gv = ad.value_of(x), ad.value_of(x_gt)
    conf = np.asarray(conf, dtype=np.float64)
    if xv.shape != gv.shape or xv.ndim != 2 or xv.shape[1] != 2 or \
            conf.shape != (xv.shape[0],):
        raise KeypointDimMismatch(
            f"points {xv.shape}, ground truth {gv.shape}, conf {conf.shape}")
    total_conf = float(conf.sum())
    if total_conf <= 0.0:
        return 0.0
    d = ad.norm(x - ad.value_of(x_gt), axis=1)
    return ad.sum_(d * conf) / total_conf


def mesh_consistency(mesh_i: Mesh, mesh_j: Mesh,
                     rel: RigidTransform | None = None):
    """Mean per-vertex distance between two meshes.

    Without ``rel`` the meshes are compared directly (canonical orientation).
    With ``rel`` the inputs are expected in their own view frames and the
    second is rigidly mapped into the first view's frame before comparison.
    """
    vi, vj = mesh_i.vertices, mesh_j.vertices
    if ad.value_of(vi).shape != ad.value_of(vj).shape:
        raise VertexCountMismatch("meshes have different vertex counts")
    if rel is not None:
        vj = vj @ rel.rotation.T + rel.translation
    return ad.mean_(ad.norm(vi - vj, axis=1))


def quadratic_prior(pose: PoseParams, prior: QuadraticPrior):
    """Diagonal quadratic penalty on 6D rotation encodings and shape."""
    n_rot = ad.value_of(pose.body_rot6d).shape[0]
    sv = ad.value_of(pose.shape)
    if prior.rot_mean.shape[0] != n_rot or \
            prior.shape_mean.shape != sv.shape:
        raise PriorDimMismatch(
            f"prior sized for {prior.rot_mean.shape[0]} rotations / "
            f"{prior.shape_mean.shape} shape, pose has {n_rot} / {sv.shape}")
    ds = pose.shape - prior.shape_mean
    total = ad.sum_(prior.shape_inv_var * ds * ds)
    if n_rot:
        dr = pose.body_rot6d - prior.rot_mean
        total = total + ad.sum_(prior.rot_inv_var[:, None] * dr * dr)
    return total


@dataclass
class FrameParams:
    """Everything optimized for one frame."""

    pose: PoseParams
    camera: CameraParams


def frame_pairs(n: int) -> list[tuple[int, int]]:
    """All unordered pairs for small batches, consecutive pairs otherwise."""
    if n <= 5:
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    return [(i, i + 1) for i in range(n - 1)]


def total_loss(frames, params, model: BodyModel, weights: LossWeights,
               mode: str, prior: QuadraticPrior | None = None,
               visibility=None, use_extrinsics: bool = False) -> LossReport:
    """Weighted sum of all terms over a batch of frames (value only).

    ``frames`` items carry ``image``, optional ``keypoints``/``keypoint_conf``
    and optional ``extrinsics``; ``params`` is one FrameParams per frame.
    ``visibility`` may hold per-frame frozen texel masks; otherwise masks are
    computed from the current parameters.
    """
    total, terms, counts = compute_total(
        frames, params, model, weights, mode, prior=prior,
        visibility=visibility, use_extrinsics=use_extrinsics)
    return LossReport(terms=terms, total=float(ad.detach(total)),
                      counts=counts, gradient=None)


def compute_total(frames, params, model: BodyModel, weights: LossWeights,
                  mode: str, prior: QuadraticPrior | None = None,
                  visibility=None, use_extrinsics: bool = False):
    """Shared composition used by both value-only and gradient paths.

    Returns (total, terms, counts) where ``total`` is a Var when any input
    parameter is a Var.
    """
    if len(frames) == 0:
        raise EmptyBatch("need at least one frame")
    if mode not in ("monocular", "multiview"):
        raise ValueError(f"unknown mode {mode!r}")
    weights.validate()
    if prior is None:
        prior = QuadraticPrior.rest_prior(model.num_joints, model.num_shape)

    n = len(frames)
    rot_batches = [rot6d_to_matrix_batch(p.pose.body_rot6d)
                   if model.num_joints > 1 else None for p in params]
    meshes = [lbs(p.pose, model, rot_mats=rb)
              for p, rb in zip(params, rot_batches)]
    textures = []
    need_texture = weights.texture > 0 and n >= 2
    for i, (frame, p) in enumerate(zip(frames, params)):
        if need_texture:
            vis = None if visibility is None else visibility[i]
            textures.append(extract_texture(frame.image, meshes[i], p.camera,
                                            model, visible=vis))
        else:
            textures.append(None)

    pairs = frame_pairs(n)
    counts = {"pair_overlap": [], "visible_keypoints": []}

    tex_term = 0.0
    shape_term = 0.0
    mesh_term = 0.0
    if pairs and n >= 2:
        for (i, j) in pairs:
            if need_texture:
                tex_term = tex_term + texture_consistency(textures[i], textures[j])
                counts["pair_overlap"].append(
                    [i, j, texture_overlap_count(textures[i], textures[j])])
            if weights.shape > 0:
                shape_term = shape_term + shape_consistency(
                    params[i].pose.shape, params[j].pose.shape)
            if weights.mesh > 0 and mode == "multiview":
                if use_extrinsics and frames[i].extrinsics is not None \
                        and frames[j].extrinsics is not None:
                    rel = frames[i].extrinsics.compose(
                        frames[j].extrinsics.inverse())
                    view_i = Mesh(meshes[i].vertices @ ad.transpose(
                        rot6d_to_matrix(params[i].camera.rot6d)), model.faces)
                    view_j = Mesh(meshes[j].vertices @ ad.transpose(
                        rot6d_to_matrix(params[j].camera.rot6d)), model.faces)
                    mesh_term = mesh_term + mesh_consistency(view_i, view_j, rel)
                else:
                    mesh_term = mesh_term + mesh_consistency(meshes[i], meshes[j])
        npairs = float(len(pairs))
        tex_term = tex_term / npairs
        shape_term = shape_term / npairs
        mesh_term = mesh_term / npairs

    kp_term = 0.0
    kp_frames = 0
    prior_term = 0.0
    for i, (frame, p) in enumerate(zip(frames, params)):
        if weights.kp2d > 0 and getattr(frame, "keypoints", None) is not None:
            joints = regress_joints(meshes[i], model)
            pred = project(joints, p.camera)
            kp_term = kp_term + keypoint_2d(pred, frame.keypoints,
                                            frame.keypoint_conf)
            kp_frames += 1
            counts["visible_keypoints"].append(
                int((np.asarray(frame.keypoint_conf) > 0).sum()))
        if weights.prior > 0:
            prior_term = prior_term + quadratic_prior(p.pose, prior)
    if kp_frames:
        kp_term = kp_term / float(kp_frames)
    prior_term = prior_term / float(n)

    total = (weights.texture * tex_term + weights.shape * shape_term +
             weights.mesh * mesh_term + weights.kp2d * kp_term +
             weights.prior * prior_term)
    terms = {"texture": float(ad.detach(tex_term)),
             "shape": float(ad.detach(shape_term)),
             "mesh": float(ad.detach(mesh_term)),
             "kp2d": float(ad.detach(kp_term)),
             "prior": float(ad.detach(prior_term))}
    return total, terms, counts
