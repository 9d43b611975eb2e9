"""Body model: rotations, kinematics, skinning, texel atlas, model files."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import texfit as tf
from texfit import autodiff as ad
from texfit.errors import (ConfigOutOfRange, DegenerateRotation,
                           MalformedModelFile, ShapeDimMismatch)


def random_pose(model, rng, sigma=0.4):
    rot = tf.rot6d_identity(model.num_joints - 1)
    for j in range(model.num_joints - 1):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.normal(0, sigma)
        x, y, z = axis
        k = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]], dtype=np.float64)
        m = np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
        rot[j] = tf.matrix_to_rot6d(m)
    shape = rng.normal(0, 0.5, model.num_shape)
    return tf.PoseParams(body_rot6d=rot, shape=shape)


class TestRot6d:
    def test_canonical_identity(self):
        np.testing.assert_allclose(
            tf.rot6d_to_matrix(np.array([1, 0, 0, 0, 1, 0.0])), np.eye(3),
            atol=1e-15)

    def test_scale_invariance_example(self):
        np.testing.assert_allclose(
            tf.rot6d_to_matrix(np.array([2, 0, 0, 0, 3, 0.0])), np.eye(3),
            atol=1e-15)

    def test_quarter_turn_about_z(self):
        # Gram-Schmidt by hand: b1 = y, b2 = -x, b3 = b1 x b2 = z
        r = tf.rot6d_to_matrix(np.array([0, 1, 0, -1, 0, 0.0]))
        expected = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
        np.testing.assert_allclose(r, expected, atol=1e-15)
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-15)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_always_orthonormal_det_one(self, seed):
        rng = np.random.default_rng(seed)
        r6 = rng.normal(size=6)
        if np.linalg.norm(r6[:3]) < 1e-6 or np.linalg.norm(r6[3:]) < 1e-6:
            return
        try:
            r = tf.rot6d_to_matrix(r6)
        except DegenerateRotation:
            return
        np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-9)
        assert abs(np.linalg.det(r) - 1.0) < 1e-9

    @pytest.mark.parametrize("alpha", [0.5, 2.0, 10.0])
    def test_positive_scaling_invariance(self, alpha):
        rng = np.random.default_rng(3)
        r6 = rng.normal(size=6)
        r = tf.rot6d_to_matrix(r6)
        scaled = r6.copy()
        scaled[:3] *= alpha
        np.testing.assert_allclose(tf.rot6d_to_matrix(scaled), r, atol=1e-9)
        scaled = r6.copy()
        scaled[3:] *= alpha
        np.testing.assert_allclose(tf.rot6d_to_matrix(scaled), r, atol=1e-9)

    def test_degenerate_short_vector(self):
        with pytest.raises(DegenerateRotation):
            tf.rot6d_to_matrix(np.array([1e-9, 0, 0, 0, 1, 0.0]))

    def test_degenerate_parallel(self):
        with pytest.raises(DegenerateRotation):
            tf.rot6d_to_matrix(np.array([1, 0, 0, 2, 0, 0.0]))
        with pytest.raises(DegenerateRotation):
            tf.rot6d_to_matrix(np.array([1, 0, 0, 1, 1e-10, 0.0]))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(5)
        r6 = rng.normal(size=(7, 6))
        batch = tf.body_model.rot6d_to_matrix_batch(r6)
        for j in range(7):
            np.testing.assert_allclose(batch[j], tf.rot6d_to_matrix(r6[j]),
                                       atol=1e-14)

    def test_encode_decode_roundtrip(self):
        rng = np.random.default_rng(8)
        r = tf.rot6d_to_matrix(rng.normal(size=6))
        np.testing.assert_allclose(
            tf.rot6d_to_matrix(tf.matrix_to_rot6d(r)), r, atol=1e-12)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(9)
        r6 = rng.normal(size=6)
        w = rng.normal(size=(3, 3))
        leaf = ad.Var(r6)
        out = ad.sum_(tf.rot6d_to_matrix(leaf) * w)
        g = ad.grad(out, [leaf])[0]
        h = 1e-6
        for i in range(6):
            rp, rm = r6.copy(), r6.copy()
            rp[i] += h
            rm[i] -= h
            fd = (float((tf.rot6d_to_matrix(rp) * w).sum()) -
                  float((tf.rot6d_to_matrix(rm) * w).sum())) / (2 * h)
            assert abs(fd - g[i]) < 1e-5 * max(1.0, abs(fd))


class TestShapedTemplate:
    def test_zero_shape_is_template(self, small_model):
        v = tf.shaped_template(np.zeros(small_model.num_shape), small_model)
        np.testing.assert_array_equal(v, small_model.template_vertices)

    def test_unit_basis_adds_one_direction(self, small_model):
        e0 = np.zeros(small_model.num_shape)
        e0[0] = 1.0
        v = tf.shaped_template(e0, small_model)
        np.testing.assert_allclose(
            v, small_model.template_vertices + small_model.shape_dirs[:, :, 0],
            atol=1e-12)

    def test_linearity_doubling(self, small_model):
        e0 = np.zeros(small_model.num_shape)
        e0[0] = 1.0
        v1 = tf.shaped_template(e0, small_model) - small_model.template_vertices
        v2 = tf.shaped_template(2 * e0, small_model) - small_model.template_vertices
        np.testing.assert_allclose(v2, 2 * v1, atol=1e-12)

    def test_dim_mismatch(self, small_model):
        with pytest.raises(ShapeDimMismatch):
            tf.shaped_template(np.zeros(small_model.num_shape + 1), small_model)


class TestForwardKinematics:
    def test_identity_pose_gives_identity_transforms(self, small_model):
        pose = tf.PoseParams(tf.rot6d_identity(small_model.num_joints - 1),
                             np.zeros(small_model.num_shape))
        rots, trans = tf.forward_kinematics(pose, small_model)
        for r, t in zip(rots, trans):
            np.testing.assert_allclose(ad.detach(r), np.eye(3), atol=1e-12)
            np.testing.assert_allclose(ad.detach(t), np.zeros(3), atol=1e-12)

    def test_single_joint_rotation_pivots_about_rest_joint(self, small_model):
        model = small_model
        joints = np.asarray(tf.body_model.rest_joints(
            np.zeros(model.num_shape), model))
        k = 4  # l_shoulder
        rot = tf.rot6d_identity(model.num_joints - 1)
        quarter_x = np.array([[1, 0, 0], [0, 0, -1], [0, 1, 0.0]])
        rot[k - 1] = tf.matrix_to_rot6d(quarter_x)
        pose = tf.PoseParams(rot, np.zeros(model.num_shape))
        rots, trans = tf.forward_kinematics(pose, model)
        p = joints[k]
        probe = p + np.array([0.1, 0.02, -0.03])
        moved = ad.detach(rots[k]) @ probe + ad.detach(trans[k])
        np.testing.assert_allclose(moved, quarter_x @ (probe - p) + p,
                                   atol=1e-12)

    def test_rotation_affects_only_subtree(self, small_model):
        model = small_model
        children = {j: [] for j in range(model.num_joints)}
        for j in range(1, model.num_joints):
            children[int(model.parent[j])].append(j)

        def subtree(j):
            out = {j}
            for c in children[j]:
                out |= subtree(c)
            return out

        k = 8  # l_hip
        rng = np.random.default_rng(0)
        pose = random_pose(model, rng, sigma=0.0)
        rot = np.array(pose.body_rot6d)
        axis = np.array([0, 0, 1.0])
        m = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
        rot[k - 1] = tf.matrix_to_rot6d(m)
        moved = tf.forward_kinematics(
            tf.PoseParams(rot, pose.shape), model)
        base = tf.forward_kinematics(pose, model)
        inside = subtree(k)
        for j in range(model.num_joints):
            same = np.allclose(ad.detach(moved[0][j]), ad.detach(base[0][j]))
            assert same == (j not in inside)


def brute_force_lbs(pose, model):
    """Independent skinning: homogeneous 4x4 chains and per-vertex loops."""
    verts = np.asarray(tf.shaped_template(pose.shape, model))
    joints = model.joint_regressor @ verts
    mats = {0: np.eye(4)}
    for j in range(1, model.num_joints):
        r = tf.rot6d_to_matrix(np.asarray(pose.body_rot6d)[j - 1])
        p = joints[j]
        local = np.eye(4)
        local[:3, :3] = r
        local[:3, 3] = p - r @ p
        mats[j] = mats[int(model.parent[j])] @ local
    out = np.zeros_like(verts)
    for v in range(verts.shape[0]):
        acc = np.zeros(3)
        for j in range(model.num_joints):
            w = model.skin_weights[v, j]
            if w == 0.0:
                continue
            h = mats[j] @ np.array([*verts[v], 1.0])
            acc += w * h[:3]
        out[v] = acc
    return out


class TestLbs:
    def test_identity_pose_keeps_template(self, small_model):
        pose = tf.PoseParams(tf.rot6d_identity(small_model.num_joints - 1),
                             np.zeros(small_model.num_shape))
        mesh = tf.lbs(pose, small_model)
        np.testing.assert_allclose(mesh.vertex_values,
                                   small_model.template_vertices, atol=1e-12)

    def test_matches_brute_force(self, small_model):
        rng = np.random.default_rng(4)
        for _ in range(3):
            pose = random_pose(small_model, rng)
            mesh = tf.lbs(pose, small_model)
            np.testing.assert_allclose(mesh.vertex_values,
                                       brute_force_lbs(pose, small_model),
                                       atol=1e-9)

    def test_one_hot_vertex_moves_rigidly(self, small_model):
        model = small_model
        rng = np.random.default_rng(6)
        pose = random_pose(model, rng)
        v = int(np.argmax(model.skin_weights[:, 5]))
        w = model.skin_weights[v].copy()
        onehot = np.zeros_like(w)
        onehot[5] = 1.0
        model.skin_weights[v] = onehot
        try:
            mesh = tf.lbs(pose, model)
            rots, trans = tf.forward_kinematics(pose, model)
            verts = np.asarray(tf.shaped_template(pose.shape, model))
            expected = ad.detach(rots[5]) @ verts[v] + ad.detach(trans[5])
            np.testing.assert_allclose(mesh.vertex_values[v], expected,
                                       atol=1e-12)
        finally:
            model.skin_weights[v] = w

    def test_root_only_weights_mean_rigid_whole_mesh(self, rigid_model):
        # one-joint model: every vertex rides the identity root transform
        rng = np.random.default_rng(7)
        pose = tf.PoseParams(tf.rot6d_identity(0),
                             rng.normal(0, 0.5, rigid_model.num_shape))
        mesh = tf.lbs(pose, rigid_model)
        np.testing.assert_allclose(
            mesh.vertex_values,
            np.asarray(tf.shaped_template(pose.shape, rigid_model)),
            atol=1e-12)

    def test_linear_in_shape_at_fixed_pose(self, small_model):
        rng = np.random.default_rng(8)
        pose = random_pose(small_model, rng)
        beta = rng.normal(0, 0.5, small_model.num_shape)
        def verts_at(t):
            p = tf.PoseParams(pose.body_rot6d, t * beta)
            return tf.lbs(p, small_model).vertex_values
        v0, v1, v2 = verts_at(0.0), verts_at(1.0), verts_at(2.0)
        np.testing.assert_allclose(v2 - v1, v1 - v0, atol=1e-9)


class TestRegressAndTexels:
    def test_one_hot_regressor_row(self, small_model):
        model = small_model
        reg = model.joint_regressor.copy()
        onehot = np.zeros(model.num_vertices)
        onehot[17] = 1.0
        model.joint_regressor[0] = onehot
        try:
            mesh = tf.Mesh(model.template_vertices, model.faces)
            joints = np.asarray(tf.regress_joints(mesh, model))
            np.testing.assert_allclose(joints[0],
                                       model.template_vertices[17], atol=1e-15)
        finally:
            model.joint_regressor[0] = reg[0]

    def test_translation_equivariance(self, small_model):
        rng = np.random.default_rng(1)
        d = rng.normal(size=3)
        mesh = tf.Mesh(small_model.template_vertices, small_model.faces)
        shifted = tf.Mesh(small_model.template_vertices + d, small_model.faces)
        j0 = np.asarray(tf.regress_joints(mesh, small_model))
        j1 = np.asarray(tf.regress_joints(shifted, small_model))
        np.testing.assert_allclose(j1, j0 + d, atol=1e-9)

    def test_matches_naive_double_loop(self, small_model):
        rng = np.random.default_rng(2)
        verts = rng.normal(size=(small_model.num_vertices, 3))
        mesh = tf.Mesh(verts, small_model.faces)
        joints = np.asarray(tf.regress_joints(mesh, small_model))
        naive = np.zeros((small_model.num_joints, 3))
        for j in range(small_model.num_joints):
            for v in range(small_model.num_vertices):
                naive[j] += small_model.joint_regressor[j, v] * verts[v]
        np.testing.assert_allclose(joints, naive, atol=1e-9)

    def test_texel_corner_and_centroid(self, small_model):
        model = small_model
        mesh = tf.Mesh(model.template_vertices, model.faces)
        bary = model.atlas_bary.copy()
        model.atlas_bary[0] = [1.0, 0.0, 0.0]
        model.atlas_bary[1] = [1 / 3, 1 / 3, 1 / 3]
        try:
            pos = np.asarray(tf.texel_positions(mesh, model))
            f0 = model.faces[model.atlas_faces[0]]
            np.testing.assert_allclose(pos[0], model.template_vertices[f0[0]],
                                       atol=1e-15)
            f1 = model.faces[model.atlas_faces[1]]
            np.testing.assert_allclose(
                pos[1], model.template_vertices[f1].mean(axis=0), atol=1e-12)
        finally:
            model.atlas_bary[:2] = bary[:2]

    def test_texels_in_triangle_plane(self, small_model):
        model = small_model
        mesh = tf.Mesh(model.template_vertices, model.faces)
        pos = np.asarray(tf.texel_positions(mesh, model))
        tri = model.template_vertices[model.faces[model.atlas_faces]]
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        dist = np.abs(((pos - tri[:, 0]) * n).sum(axis=1))
        assert dist.max() < 1e-12


class TestGradients:
    def test_lbs_joints_texels_match_fd(self, small_model):
        model = small_model
        rng = np.random.default_rng(11)
        layout = tf.ParamLayout(model.num_joints, model.num_shape, 1)
        for _ in range(3):
            pose = random_pose(model, rng, sigma=0.3)
            rot6d = np.asarray(pose.body_rot6d)
            shape = np.asarray(pose.shape)
            w_mesh = rng.normal(size=(model.num_vertices, 3))
            w_tex = rng.normal(size=(model.num_texels, 3))
            w_j = rng.normal(size=(model.num_joints, 3))

            def objective(rv, sv):
                p = tf.PoseParams(rv, sv)
                mesh = tf.lbs(p, model)
                return (ad.sum_(mesh.vertices * w_mesh) +
                        ad.sum_(tf.texel_positions(mesh, model) * w_tex) +
                        ad.sum_(tf.regress_joints(mesh, model) * w_j))

            leaf_r = ad.Var(rot6d)
            leaf_s = ad.Var(shape)
            g_r, g_s = ad.grad(objective(leaf_r, leaf_s), [leaf_r, leaf_s])
            h = 1e-5
            flat = rot6d.ravel()
            idxs = rng.choice(flat.size, 8, replace=False)
            for i in idxs:
                rp, rm = flat.copy(), flat.copy()
                rp[i] += h
                rm[i] -= h
                fd = (float(ad.detach(objective(rp.reshape(rot6d.shape), shape)))
                      - float(ad.detach(objective(rm.reshape(rot6d.shape),
                                                  shape)))) / (2 * h)
                rel = abs(fd - g_r.ravel()[i]) / max(abs(fd), 1e-8)
                assert rel < 1e-4
            for i in range(shape.size):
                sp, sm = shape.copy(), shape.copy()
                sp[i] += h
                sm[i] -= h
                fd = (float(ad.detach(objective(rot6d, sp))) -
                      float(ad.detach(objective(rot6d, sm)))) / (2 * h)
                rel = abs(fd - g_s[i]) / max(abs(fd), 1e-8)
                assert rel < 1e-4


class TestProceduralModel:
    def test_default_passes_invariants(self, default_model):
        default_model.validate()
        assert 400 <= default_model.num_vertices <= 800
        assert default_model.num_joints == 12
        assert default_model.num_texels == \
            default_model.num_faces * 6

    def test_same_seed_identical_files(self, tmp_path):
        cfg = tf.HumanoidConfig(seed=42, detail=0.4)
        a = tf.make_procedural_humanoid(cfg)
        b = tf.make_procedural_humanoid(tf.HumanoidConfig(seed=42, detail=0.4))
        tf.save_model(a, tmp_path / "a.texfit")
        tf.save_model(b, tmp_path / "b.texfit")
        assert (tmp_path / "a.texfit").read_bytes() == \
            (tmp_path / "b.texfit").read_bytes()

    def test_single_joint_model_valid(self, rigid_model):
        rigid_model.validate()
        assert rigid_model.num_joints == 1
        assert rigid_model.parent.tolist() == [-1]

    def test_config_out_of_range(self):
        with pytest.raises(ConfigOutOfRange):
            tf.make_procedural_humanoid(tf.HumanoidConfig(joints=5))
        with pytest.raises(ConfigOutOfRange):
            tf.make_procedural_humanoid(tf.HumanoidConfig(texels_per_face=0))
        with pytest.raises(ConfigOutOfRange):
            tf.make_procedural_humanoid(tf.HumanoidConfig(detail=10.0))


class TestModelIO:
    def test_roundtrip_bit_exact(self, small_model, tmp_path):
        path = tmp_path / "m.texfit"
        tf.save_model(small_model, path)
        loaded = tf.load_model(path)
        for name in ("template_vertices", "faces", "shape_dirs",
                     "skin_weights", "joint_regressor", "parent",
                     "atlas_faces", "atlas_bary"):
            np.testing.assert_array_equal(getattr(loaded, name),
                                          getattr(small_model, name))
        path2 = tmp_path / "m2.texfit"
        tf.save_model(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_bad_skin_weight_sum_rejected(self, small_model, tmp_path):
        import dataclasses
        bad_w = small_model.skin_weights.copy()
        bad_w[0] *= 0.9
        bad = dataclasses.replace(small_model, skin_weights=bad_w)
        path = tmp_path / "bad.texfit"
        tf.save_model(bad, path)
        with pytest.raises(MalformedModelFile, match="skin_weights"):
            tf.load_model(path)

    def test_cyclic_parent_rejected(self, small_model, tmp_path):
        import dataclasses
        bad_p = small_model.parent.copy()
        bad_p[1] = 2  # parent index >= child
        bad = dataclasses.replace(small_model, parent=bad_p)
        path = tmp_path / "bad.texfit"
        tf.save_model(bad, path)
        with pytest.raises(MalformedModelFile, match="parent"):
            tf.load_model(path)

    def test_truncated_file_rejected(self, small_model, tmp_path):
        path = tmp_path / "m.texfit"
        tf.save_model(small_model, path)
        data = path.read_bytes()
        path.write_bytes(data[:len(data) // 2])
        with pytest.raises(MalformedModelFile):
            tf.load_model(path)

    def test_garbage_header_rejected(self, tmp_path):
        path = tmp_path / "junk.texfit"
        path.write_bytes(b"\x00\x01\x02 not json\n12345")
        with pytest.raises(MalformedModelFile):
            tf.load_model(path)
