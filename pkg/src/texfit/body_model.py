"""Parametric body model: shape blendshapes, linear blend skinning over a
kinematic tree, joint regression, and a fixed per-face texel atlas.

The global orientation is deliberately NOT part of the body pose; it lives in
the camera, so meshes produced here are always in the canonical orientation.
There are no pose-dependent corrective blendshapes: shape displacements are
purely linear in the shape coefficients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import (ConfigOutOfRange, DegenerateRotation, DimMismatch,
                     MalformedModelFile, ShapeDimMismatch)

MODEL_FORMAT_VERSION = "texfit-model/1"

_EPS_PARALLEL = 1e-8


@dataclass(frozen=True)
class BodyModel:
    """Immutable model assets; all operations on it are pure functions.

    Attributes:
        template_vertices: (V, 3) canonical T-pose vertices, meters.
        faces: (F, 3) vertex indices, counterclockwise winding seen from
            outside.
        shape_dirs: (V, 3, S) per-unit displacement of each shape coefficient.
        skin_weights: (V, J) convex weights (rows sum to 1).
        joint_regressor: (J, V) linear map from vertices to joints (rows sum
            to 1).
        parent: (J,) parent joint indices, -1 for the root; parent[j] < j.
        atlas_faces: (T,) face index per texel.
        atlas_bary: (T, 3) barycentric coordinates per texel (fixed forever).
        seed: generation seed recorded for provenance.
    """

    template_vertices: np.ndarray
    faces: np.ndarray
    shape_dirs: np.ndarray
    skin_weights: np.ndarray
    joint_regressor: np.ndarray
    parent: np.ndarray
    atlas_faces: np.ndarray
    atlas_bary: np.ndarray
    seed: int = 0

    @property
    def num_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def num_joints(self) -> int:
        return self.joint_regressor.shape[0]

    @property
    def num_shape(self) -> int:
        return self.shape_dirs.shape[2]

    @property
    def num_texels(self) -> int:
        return self.atlas_faces.shape[0]

    def texels_of_face(self) -> np.ndarray:
        """(F, K) texel indices grouped by face; requires a uniform atlas."""
        order = np.argsort(self.atlas_faces, kind="stable")
        counts = np.bincount(self.atlas_faces, minlength=self.num_faces)
        if counts.min() != counts.max():
            raise MalformedModelFile("atlas is not uniform per face")
        return order.reshape(self.num_faces, counts[0])

    def validate(self) -> None:
        v, j = self.num_vertices, self.num_joints
        if self.faces.min(initial=0) < 0 or self.faces.max(initial=0) >= v:
            raise MalformedModelFile("faces: vertex index out of range")
        if self.skin_weights.shape != (v, j):
            raise MalformedModelFile("skin_weights: wrong shape")
        if np.any(self.skin_weights < -1e-12):
            raise MalformedModelFile("skin_weights: negative entry")
        if np.any(np.abs(self.skin_weights.sum(axis=1) - 1.0) > 1e-9):
            raise MalformedModelFile("skin_weights: row does not sum to 1")
        if np.any(np.abs(self.joint_regressor.sum(axis=1) - 1.0) > 1e-9):
            raise MalformedModelFile("joint_regressor: row does not sum to 1")
        if self.parent.shape != (j,) or self.parent[0] != -1:
            raise MalformedModelFile("parent: root must be joint 0")
        for k in range(1, j):
            if not 0 <= self.parent[k] < k:
                raise MalformedModelFile("parent: not a forward tree")
        if np.any(self.atlas_bary < -1e-12):
            raise MalformedModelFile("texel_atlas: negative barycentric")
        if np.any(np.abs(self.atlas_bary.sum(axis=1) - 1.0) > 1e-9):
            raise MalformedModelFile("texel_atlas: barycentric does not sum to 1")
        if self.atlas_faces.min(initial=0) < 0 or \
                self.atlas_faces.max(initial=0) >= self.num_faces:
            raise MalformedModelFile("texel_atlas: face index out of range")
        if not np.isfinite(self.template_vertices).all():
            raise MalformedModelFile("template_vertices: non-finite")
        if not np.isfinite(self.shape_dirs).all():
            raise MalformedModelFile("shape_dirs: non-finite")


@dataclass
class Mesh:
    """Posed vertices plus a shared reference to the model's faces.

    ``vertices`` may be a plain array or an autodiff Var when the mesh sits on
    a differentiable path.
    """

    vertices: object
    faces: np.ndarray

    @property
    def vertex_values(self) -> np.ndarray:
        return ad.detach(self.vertices)


@dataclass
class PoseParams:
    """Per-frame body parameters: per-joint 6D rotations and shape."""

    body_rot6d: object  # (J-1, 6)
    shape: object       # (S,)

    def num_joints(self) -> int:
        return ad.value_of(self.body_rot6d).shape[0] + 1


def rot6d_identity(n: int) -> np.ndarray:
    """(n, 6) stack of the canonical 6D encoding of the identity rotation."""
    r = np.zeros((n, 6))
    r[:, 0] = 1.0
    r[:, 4] = 1.0
    return r


def matrix_to_rot6d(r: np.ndarray) -> np.ndarray:
    """First two columns of a rotation matrix, flattened to 6 numbers."""
    r = np.asarray(r, dtype=np.float64)
    return np.concatenate([r[:, 0], r[:, 1]])


def rot6d_to_matrix(r):
    """Orthonormalize a 6D rotation (two 3-vectors) into a rotation matrix.

    Gram-Schmidt on the two vectors gives the first two columns, the third is
    their cross product. Invariant to positive rescaling of either vector and
    differentiable away from the degenerate set.

    Raises:
        DegenerateRotation: a vector is shorter than 1e-8 or the two vectors
            are parallel within 1e-8.
    """
    rv = ad.value_of(r)
    if rv.shape != (6,):
        raise DegenerateRotation(f"expected 6 numbers, got shape {rv.shape}")
    a, b = r[:3], r[3:]
    na = np.sqrt((rv[:3] ** 2).sum())
    nb = np.sqrt((rv[3:] ** 2).sum())
    if na < _EPS_PARALLEL or nb < _EPS_PARALLEL:
        raise DegenerateRotation("6D rotation vector too short")
    b1 = a / ad.norm(a)
    proj = ad.sum_(b * b1)
    u = b - proj * b1
    nu = float(np.sqrt((ad.detach(u) ** 2).sum()))
    if nu < _EPS_PARALLEL * nb:
        raise DegenerateRotation("6D rotation vectors are parallel")
    b2 = u / ad.norm(u)
    b3 = ad.cross3(b1, b2)
    return ad.stack([b1, b2, b3], axis=1)


def rot6d_to_matrix_batch(r):
    """Vectorized :func:`rot6d_to_matrix` over an (N, 6) stack."""
    rv = ad.value_of(r)
    if rv.ndim != 2 or rv.shape[1] != 6:
        raise DegenerateRotation(f"expected (N, 6), got shape {rv.shape}")
    na = np.sqrt((rv[:, :3] ** 2).sum(axis=1))
    nb = np.sqrt((rv[:, 3:] ** 2).sum(axis=1))
    if (na < _EPS_PARALLEL).any() or (nb < _EPS_PARALLEL).any():
        raise DegenerateRotation("6D rotation vector too short")
    a, b = r[:, :3], r[:, 3:]
    b1 = a / ad.reshape(ad.norm(a, axis=1), (-1, 1))
    proj = ad.sum_(b * b1, axis=1, keepdims=True)
    u = b - proj * b1
    nu = np.sqrt((ad.detach(u) ** 2).sum(axis=1))
    if (nu < _EPS_PARALLEL * nb).any():
        raise DegenerateRotation("6D rotation vectors are parallel")
    b2 = u / ad.reshape(ad.norm(u, axis=1), (-1, 1))
    b3 = ad.cross3(b1, b2)
    return ad.stack([b1, b2, b3], axis=2)


def shaped_template(shape, model: BodyModel):
    """Template vertices displaced linearly by the shape coefficients."""
    sv = ad.value_of(shape)
    if sv.shape != (model.num_shape,):
        raise ShapeDimMismatch(
            f"expected {model.num_shape} shape coefficients, got {sv.shape}")
    if model.num_shape == 0:
        return model.template_vertices.copy()
    dirs = model.shape_dirs.reshape(model.num_vertices * 3, model.num_shape)
    offset = ad.reshape(dirs @ shape, (model.num_vertices, 3))
    return model.template_vertices + offset


def rest_joints(shape, model: BodyModel):
    """Joint positions of the shaped template: regressor x vertices."""
    return model.joint_regressor @ shaped_template(shape, model)


def forward_kinematics(pose: PoseParams, model: BodyModel, rot_mats=None):
    """Per-joint rigid transforms from relative rotations along the tree.

    The root transform is the identity (global orientation belongs to the
    camera); joint j's rotation pivots about its rest joint and composes onto
    its parent transform. ``rot_mats`` may carry precomputed (J-1, 3, 3)
    relative rotations to avoid re-deriving them from the 6D encoding.

    Returns:
        (rotations, translations): lists of J items, (3, 3) and (3,).
    """
    j = model.num_joints
    joints = rest_joints(pose.shape, model)
    if rot_mats is None and j > 1:
        rot_mats = rot6d_to_matrix_batch(pose.body_rot6d)
    rots = [np.eye(3)]
    trans = [np.zeros(3)]
    for k in range(1, j):
        rk = rot_mats[k - 1]
        pk = joints[k]
        p = int(model.parent[k])
        # parent o rotate-about-pk:  x -> Rp (Rk (x - pk) + pk) + tp
        rot = rots[p] @ rk
        tr = rots[p] @ (pk - rk @ pk) + trans[p]
        rots.append(rot)
        trans.append(tr)
    return rots, trans


def lbs(pose: PoseParams, model: BodyModel, rot_mats=None) -> Mesh:
    """Linear blend skinning of the shaped template, canonical orientation."""
    verts = shaped_template(pose.shape, model)
    rots, trans = forward_kinematics(pose, model, rot_mats=rot_mats)
    out = None
    for j in range(model.num_joints):
        moved = verts @ ad.transpose(rots[j]) + trans[j]
        contrib = moved * model.skin_weights[:, j:j + 1]
        out = contrib if out is None else out + contrib
    return Mesh(vertices=out, faces=model.faces)


def regress_joints(mesh: Mesh, model: BodyModel):
    """Joint positions as the fixed linear map of mesh vertices."""
    n = ad.value_of(mesh.vertices).shape[0]
    if n != model.num_vertices:
        raise DimMismatch(
            f"mesh has {n} vertices, model expects {model.num_vertices}")
    return model.joint_regressor @ mesh.vertices


def texel_positions(mesh: Mesh, model: BodyModel):
    """Surface point of each texel: barycentric mix of its face's vertices."""
    tri = model.faces[model.atlas_faces]  # (T, 3)
    b = model.atlas_bary
    v = mesh.vertices
    return (b[:, 0:1] * v[tri[:, 0]] +
            b[:, 1:2] * v[tri[:, 1]] +
            b[:, 2:3] * v[tri[:, 2]])


# ---------------------------------------------------------------------------
# Model file I/O: one-line JSON header + raw little-endian arrays.
# ---------------------------------------------------------------------------

_ARRAY_ORDER = (
    ("template_vertices", "<f8"),
    ("faces", "<i8"),
    ("shape_dirs", "<f8"),
    ("skin_weights", "<f8"),
    ("joint_regressor", "<f8"),
    ("parent", "<i8"),
    ("atlas_faces", "<i8"),
    ("atlas_bary", "<f8"),
)


def save_model(model: BodyModel, path) -> None:
    """Write the self-describing model file (header + binary arrays)."""
    header = {
        "version": MODEL_FORMAT_VERSION,
        "units": "meters",
        "seed": int(model.seed),
        "counts": {"V": model.num_vertices, "F": model.num_faces,
                   "J": model.num_joints, "S": model.num_shape,
                   "T": model.num_texels},
        "arrays": [{"name": name, "dtype": dt,
                    "shape": list(getattr(model, name).shape)}
                   for name, dt in _ARRAY_ORDER],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for name, dt in _ARRAY_ORDER:
            f.write(np.ascontiguousarray(getattr(model, name),
                                         dtype=np.dtype(dt)).tobytes())


def load_model(path) -> BodyModel:
    """Read and validate a model file written by :func:`save_model`."""
    with open(path, "rb") as f:
        line = f.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise MalformedModelFile(f"unreadable header: {e}") from e
        if header.get("version") != MODEL_FORMAT_VERSION:
            raise MalformedModelFile(
                f"unsupported version {header.get('version')!r}")
        declared = {(a["name"]): a for a in header.get("arrays", [])}
        arrays = {}
        for name, dt in _ARRAY_ORDER:
            if name not in declared:
                raise MalformedModelFile(f"missing array {name}")
            shape = tuple(declared[name]["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(n * 8)
            if len(buf) != n * 8:
                raise MalformedModelFile(f"truncated array {name}")
            arrays[name] = np.frombuffer(buf, dtype=np.dtype(dt)).reshape(shape).copy()
    model = BodyModel(seed=int(header.get("seed", 0)), **arrays)
    model.validate()
    return model


# ---------------------------------------------------------------------------
# Procedural humanoid generation (stand-in for learned model assets).
# ---------------------------------------------------------------------------

@dataclass
class HumanoidConfig:
    """Knobs for the procedural capsule humanoid.

    ``detail`` scales ring counts (1.0 gives roughly 600 vertices); ``joints``
    is 12 for the articulated body or 1 for a single rigid capsule.
    """

    joints: int = 12
    shape_coeffs: int = 4
    texels_per_face: int = 6
    detail: float = 1.0
    seed: int = 0
    skin_sigma: float = 0.07
    regressor_sigma: float = 0.055


# joint index layout for the 12-joint body
_J12 = dict(pelvis=0, chest=1, neck=2, head=3, l_shoulder=4, l_elbow=5,
            r_shoulder=6, r_elbow=7, l_hip=8, l_knee=9, r_hip=10, r_knee=11)

_J12_PARENT = np.array([-1, 0, 1, 2, 1, 4, 1, 6, 0, 8, 0, 10])

_J12_POS = np.array([
    [0.00, 1.00, 0.0],   # pelvis
    [0.00, 1.25, 0.0],   # chest
    [0.00, 1.48, 0.0],   # neck
    [0.00, 1.58, 0.0],   # head
    [0.20, 1.42, 0.0],   # l_shoulder
    [0.47, 1.42, 0.0],   # l_elbow
    [-0.20, 1.42, 0.0],  # r_shoulder
    [-0.47, 1.42, 0.0],  # r_elbow
    [0.10, 0.95, 0.0],   # l_hip
    [0.10, 0.55, 0.0],   # l_knee
    [-0.10, 0.95, 0.0],  # r_hip
    [-0.10, 0.55, 0.0],  # r_knee
])

# bone segment of each joint: (joint, end point); used for capsule geometry
# and skinning falloff. Ends for leaf joints extend to hand/foot/head tips.
_J12_BONE_END = {
    0: np.array([0.00, 1.25, 0.0]),
    1: np.array([0.00, 1.48, 0.0]),
    2: np.array([0.00, 1.58, 0.0]),
    3: np.array([0.00, 1.76, 0.0]),
    4: np.array([0.47, 1.42, 0.0]),
    5: np.array([0.72, 1.42, 0.0]),
    6: np.array([-0.47, 1.42, 0.0]),
    7: np.array([-0.72, 1.42, 0.0]),
    8: np.array([0.10, 0.55, 0.0]),
    9: np.array([0.10, 0.12, 0.0]),
    10: np.array([-0.10, 0.55, 0.0]),
    11: np.array([-0.10, 0.12, 0.0]),
}

# capsules: (start joint index, radius, rings); the segment runs from the
# joint to its bone end above.
_J12_CAPSULES = [
    (0, 0.135, 5), (1, 0.120, 4), (2, 0.070, 2), (3, 0.090, 4),
    (4, 0.052, 4), (5, 0.045, 4), (6, 0.052, 4), (7, 0.045, 4),
    (8, 0.072, 5), (9, 0.055, 5), (10, 0.072, 5), (11, 0.055, 5),
]


def _capsule(start, end, radius, n_rings, n_around):
    """Vertices and faces of a closed capsule along a segment."""
    axis = end - start
    length = np.linalg.norm(axis)
    az = axis / length
    # orthonormal frame around the axis
    ref = np.array([1.0, 0.0, 0.0])
    if abs(az @ ref) > 0.9:
        ref = np.array([0.0, 0.0, 1.0])
    ax = np.cross(az, ref)
    ax /= np.linalg.norm(ax)
    ay = np.cross(az, ax)

    verts = []
    ts = np.linspace(0.0, 1.0, n_rings)
    angles = 2.0 * np.pi * np.arange(n_around) / n_around
    for t in ts:
        center = start + t * axis
        for ang in angles:
            verts.append(center + radius * (np.cos(ang) * ax + np.sin(ang) * ay))
    cap_lo = len(verts)
    verts.append(start - 0.9 * radius * az)
    cap_hi = len(verts)
    verts.append(end + 0.9 * radius * az)
    verts = np.array(verts)

    faces = []
    for r in range(n_rings - 1):
        for c in range(n_around):
            a = r * n_around + c
            b = r * n_around + (c + 1) % n_around
            a2 = a + n_around
            b2 = b + n_around
            faces.append([a, b, a2])
            faces.append([b, b2, a2])
    for c in range(n_around):
        a = c
        b = (c + 1) % n_around
        faces.append([cap_lo, b, a])
        a = (n_rings - 1) * n_around + c
        b = (n_rings - 1) * n_around + (c + 1) % n_around
        faces.append([cap_hi, a, b])
    faces = np.array(faces, dtype=np.int64)

    # orient every face outward from the capsule axis
    centers = verts[faces].mean(axis=1)
    t = np.clip((centers - start) @ az, 0.0, length)
    nearest = start + t[:, None] * az
    normals = np.cross(verts[faces[:, 1]] - verts[faces[:, 0]],
                       verts[faces[:, 2]] - verts[faces[:, 0]])
    flip = (normals * (centers - nearest)).sum(axis=1) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return verts, faces


def _segment_distance(points, a, b):
    """Distance from each point to segment [a, b]."""
    ab = b - a
    denom = float(ab @ ab)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0) if denom > 0 else 0.0
    proj = a + np.atleast_1d(t)[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def _texel_pattern(k: int) -> np.ndarray:
    """K interior barycentric samples from triangular lattices of rising degree."""
    pts = []
    degree = 3
    while len(pts) < k:
        for i in range(1, degree - 1):
            for j in range(1, degree - i):
                pts.append((i / degree, j / degree, (degree - i - j) / degree))
        degree += 1
    return np.array(pts[:k])


def _shape_fields(verts: np.ndarray, s: int) -> np.ndarray:
    """(V, 3, S) smooth displacement fields: girth, height, arms, legs, ..."""
    v = verts
    dirs = np.zeros((v.shape[0], 3, s))
    if s == 0:
        return dirs
    fields = []
    # girth: push out horizontally from the vertical body axis
    radial = v.copy()
    radial[:, 1] = 0.0
    rn = np.linalg.norm(radial, axis=1, keepdims=True)
    fields.append(0.04 * np.where(rn > 1e-9, radial / np.maximum(rn, 1e-9), 0.0))
    # height: stretch vertically about the pelvis line
    height = np.zeros_like(v)
    height[:, 1] = 0.08 * (v[:, 1] - 1.0)
    fields.append(height)
    # arm length: stretch along x away from the torso
    arm = np.zeros_like(v)
    arm[:, 0] = 0.06 * np.sign(v[:, 0]) * np.maximum(np.abs(v[:, 0]) - 0.18, 0.0)
    fields.append(arm)
    # leg length: stretch below the pelvis
    leg = np.zeros_like(v)
    leg[:, 1] = -0.08 * np.maximum(1.0 - v[:, 1], 0.0)
    fields.append(leg)
    freq = 2.0
    while len(fields) < s:
        wave = np.zeros_like(v)
        wave[:, 2] = 0.03 * np.sin(freq * v[:, 1])
        fields.append(wave)
        freq += 1.3
    for i in range(s):
        dirs[:, :, i] = fields[i]
    return dirs


def make_procedural_humanoid(config: HumanoidConfig | None = None) -> BodyModel:
    """Deterministic capsule humanoid passing all BodyModel invariants."""
    cfg = config or HumanoidConfig()
    if cfg.joints not in (1, 12):
        raise ConfigOutOfRange("joints must be 1 (rigid) or 12 (articulated)")
    if not 0 <= cfg.shape_coeffs <= 8:
        raise ConfigOutOfRange("shape_coeffs must be in [0, 8]")
    if not 1 <= cfg.texels_per_face <= 32:
        raise ConfigOutOfRange("texels_per_face must be in [1, 32]")
    if not 0.2 <= cfg.detail <= 3.0:
        raise ConfigOutOfRange("detail must be in [0.2, 3.0]")

    n_around = max(5, int(round(9 * np.sqrt(cfg.detail))))

    if cfg.joints == 1:
        joint_pos = _J12_POS[:1]
        parent = np.array([-1])
        capsules = [(0, 0.135, 6)]
        bone_end = {0: np.array([0.0, 1.76, 0.0])}
    else:
        joint_pos = _J12_POS
        parent = _J12_PARENT.copy()
        capsules = _J12_CAPSULES
        bone_end = _J12_BONE_END

    all_verts = []
    all_faces = []
    for j, radius, rings in capsules:
        n_rings = max(2, int(round(rings * np.sqrt(cfg.detail))) + 1)
        v, f = _capsule(joint_pos[j], bone_end[j], radius, n_rings, n_around)
        all_faces.append(f + sum(len(a) for a in all_verts))
        all_verts.append(v)
    verts = np.concatenate(all_verts)
    faces = np.concatenate(all_faces)

    j_count = len(joint_pos)
    # skinning: Gaussian falloff on distance to each joint's bone segment
    dists = np.stack([_segment_distance(verts, joint_pos[j], bone_end[j])
                      for j in range(j_count)], axis=1)
    w = np.exp(-(dists / cfg.skin_sigma) ** 2)
    if j_count > 4:
        # keep the 4 strongest influences per vertex
        cut = np.partition(w, -4, axis=1)[:, -4][:, None]
        w = np.where(w >= cut, w, 0.0)
    w = np.maximum(w, 1e-12)
    skin_weights = w / w.sum(axis=1, keepdims=True)

    # joint regressor: Gaussian falloff on distance to the joint location
    d2 = ((verts[None, :, :] - joint_pos[:, None, :]) ** 2).sum(axis=2)
    r = np.exp(-d2 / cfg.regressor_sigma ** 2)
    joint_regressor = r / r.sum(axis=1, keepdims=True)

    # fixed texel atlas: lattice pattern with a small seeded jitter per face
    rng = np.random.default_rng(cfg.seed + 12345)
    base = _texel_pattern(cfg.texels_per_face)
    f_count = faces.shape[0]
    jitter = rng.dirichlet(np.ones(3), size=(f_count, cfg.texels_per_face))
    bary = 0.8 * base[None, :, :] + 0.2 * jitter
    atlas_faces = np.repeat(np.arange(f_count, dtype=np.int64),
                            cfg.texels_per_face)
    atlas_bary = bary.reshape(-1, 3)

    model = BodyModel(
        template_vertices=verts,
        faces=faces,
        shape_dirs=_shape_fields(verts, cfg.shape_coeffs),
        skin_weights=skin_weights,
        joint_regressor=joint_regressor,
        parent=parent,
        atlas_faces=atlas_faces,
        atlas_bary=atlas_bary,
        seed=cfg.seed,
    )
    model.validate()
    return model
