"""Shared fixtures and independent geometry oracles for the test suite."""

import numpy as np
import pytest

import texfit as tf


@pytest.fixture(scope="session")
def small_model():
    """Reduced humanoid for gradient/oracle tests (a few hundred faces)."""
    return tf.make_procedural_humanoid(
        tf.HumanoidConfig(detail=0.45, texels_per_face=4))


@pytest.fixture(scope="session")
def default_model():
    return tf.make_procedural_humanoid()


@pytest.fixture(scope="session")
def rigid_model():
    return tf.make_procedural_humanoid(
        tf.HumanoidConfig(joints=1, shape_coeffs=2, texels_per_face=3,
                          detail=0.4))


def moller_trumbore(origins, direction, v0, v1, v2):
    """Batched ray-triangle intersection for a shared ray direction.

    Args:
        origins: (N, 3) ray origins.
        direction: (3,) shared direction.
        v0, v1, v2: (M, 3) triangle vertices.

    Returns:
        (N, M) hit mask and (N, M) ray parameter t (inf where no hit).
    """
    eps = 1e-12
    e1 = v1 - v0                        # (M, 3)
    e2 = v2 - v0
    pvec = np.cross(direction, e2)      # (M, 3)
    det = (e1 * pvec).sum(axis=1)       # (M,)
    ok = np.abs(det) > eps
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = origins[:, None, :] - v0[None, :, :]          # (N, M, 3)
    u = (tvec * pvec[None, :, :]).sum(axis=2) * inv_det  # (N, M)
    qvec = np.cross(tvec, e1[None, :, :])                # (N, M, 3)
    v = (qvec @ direction) * inv_det                     # (N, M)
    t = (qvec * e2[None, :, :]).sum(axis=2) * inv_det
    hit = ok[None, :] & (u >= 0) & (v >= 0) & (u + v <= 1)
    return hit, np.where(hit, t, np.inf)


def raycast_depth_at_points(mesh, cam, points2d):
    """Nearest front-facing surface depth under each 2D image point.

    Independent of the rasterizer: orthographic rays through the given image
    points are intersected with every triangle (Moller-Trumbore); front-facing
    means the camera-frame normal's z component is negative.
    """
    rot = tf.rot6d_to_matrix(np.asarray(cam.rot6d, dtype=np.float64))
    verts_cam = mesh.vertex_values @ rot.T
    tri = verts_cam[mesh.faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    front = n[:, 2] < 0.0

    s = float(cam.scale)
    t2 = np.asarray(cam.translation, dtype=np.float64)
    xy_cam = (np.asarray(points2d, dtype=np.float64) - t2) / s
    origins = np.concatenate([xy_cam, np.full((len(xy_cam), 1), -1e6)], axis=1)
    direction = np.array([0.0, 0.0, 1.0])

    f = mesh.faces[front]
    if f.shape[0] == 0:
        return np.full(len(xy_cam), np.inf)
    hit, t = moller_trumbore(origins, direction,
                             verts_cam[f[:, 0]], verts_cam[f[:, 1]],
                             verts_cam[f[:, 2]])
    depth = np.where(hit, t - 1e6, np.inf)   # ray param back to camera z
    return depth.min(axis=1)


def raycast_texel_visibility(mesh, cam, model, width, height):
    """Visibility oracle: same three rules as the z-buffer test, but the
    occlusion question is answered by exhaustive ray casting at each texel's
    rounded pixel center."""
    pos = np.asarray(tf.texel_positions(
        tf.Mesh(mesh.vertex_values, mesh.faces), model))
    p2d = np.asarray(tf.project(pos, cam))
    rot = tf.rot6d_to_matrix(np.asarray(cam.rot6d, dtype=np.float64))
    d = (pos @ rot.T)[:, 2]

    verts_cam = mesh.vertex_values @ rot.T
    tri = verts_cam[mesh.faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    front_face = n[:, 2] < 0.0
    front = front_face[model.atlas_faces]

    x, y = p2d[:, 0], p2d[:, 1]
    in_img = (x >= 0.0) & (x <= width - 1.0) & (y >= 0.0) & (y <= height - 1.0)
    px = np.clip(np.rint(x), 0, width - 1)
    py = np.clip(np.rint(y), 0, height - 1)
    centers = np.stack([px, py], axis=1)
    d_near = raycast_depth_at_points(mesh, cam, centers)
    eps = tf.render.depth_epsilon(mesh)
    return front & in_img & (d <= d_near + eps), np.abs(d - d_near)


def random_triangle_soup(rng, n_faces, spread=1.0):
    """Random disconnected triangles as a minimal BodyModel (trivial rig)."""
    centers = rng.uniform(-spread, spread, (n_faces, 3))
    verts = (centers[:, None, :] +
             rng.uniform(-0.35, 0.35, (n_faces, 3, 3))).reshape(-1, 3)
    faces = np.arange(3 * n_faces, dtype=np.int64).reshape(-1, 3)
    k = 3
    bary = rng.dirichlet(np.ones(3), size=(n_faces, k)).reshape(-1, 3)
    atlas_faces = np.repeat(np.arange(n_faces, dtype=np.int64), k)
    v = verts.shape[0]
    model = tf.BodyModel(
        template_vertices=verts,
        faces=faces,
        shape_dirs=np.zeros((v, 3, 0)),
        skin_weights=np.ones((v, 1)),
        joint_regressor=np.full((1, v), 1.0 / v),
        parent=np.array([-1]),
        atlas_faces=atlas_faces,
        atlas_bary=bary,
    )
    model.validate()
    return model


def soup_camera(rng, width, height, scale_lo=12.0, scale_hi=25.0):
    """Random camera framing the unit-ish soup inside a width x height image."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, 2 * np.pi)
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    rot = np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
    return tf.CameraParams(
        rot6d=tf.matrix_to_rot6d(rot),
        scale=rng.uniform(scale_lo, scale_hi),
        translation=np.array([(width - 1) / 2.0, (height - 1) / 2.0])
        + rng.uniform(-2, 2, 2))
