"""Body model: shaped rest joints, forward kinematics, skinning."""
import numpy as np
import pytest
import torch

from crowdfit.body import (SkeletonTemplate, body_points, canonicalize_pose,
                           forward_kinematics, rodrigues,
                           shaped_rest_joints, skin_points)
from crowdfit.errors import ConfigurationError


def zero_pose(template):
    return torch.zeros(template.joint_count, 3, dtype=torch.float64)


def zero_shape(template):
    return torch.zeros(template.shape_dim, dtype=torch.float64)


class TestShapedRestJoints:
    def test_zero_shape_is_rest(self, template):
        j = shaped_rest_joints(template, zero_shape(template))
        assert np.allclose(j.numpy(), template.rest_joints, atol=0)

    def test_linearity(self, template):
        rng = np.random.default_rng(3)
        beta = torch.from_numpy(rng.normal(size=template.shape_dim))
        j0 = template.rest_joints
        j1 = shaped_rest_joints(template, beta).numpy() - j0
        j2 = shaped_rest_joints(template, 2.0 * beta).numpy() - j0
        assert np.allclose(j2, 2.0 * j1, atol=1e-12)

    def test_dense_matvec_oracle(self, template):
        rng = np.random.default_rng(4)
        beta = rng.normal(size=template.shape_dim)
        # naive elementwise dense multiply, no matrix ops
        offsets = np.zeros(3 * template.joint_count)
        for r in range(template.shape_basis.shape[0]):
            for c in range(template.shape_basis.shape[1]):
                offsets[r] += template.shape_basis[r, c] * beta[c]
        expected = template.rest_joints + offsets.reshape(-1, 3)
        got = shaped_rest_joints(template, torch.from_numpy(beta)).numpy()
        assert np.max(np.abs(got - expected)) < 1e-12

    def test_dimension_mismatch(self, template):
        with pytest.raises(ConfigurationError):
            shaped_rest_joints(template, torch.zeros(3))


class TestRodrigues:
    def test_orthonormality_random(self):
        rng = np.random.default_rng(5)
        aa = torch.from_numpy(rng.normal(size=(200, 3)) * 2.0)
        r = rodrigues(aa).numpy()
        err = np.abs(np.einsum("nij,nik->njk", r, r) - np.eye(3)).max()
        assert err < 1e-9

    def test_small_angle_branch_continuity(self):
        axis = np.array([0.0, 0.0, 1.0])
        below = rodrigues(torch.tensor(axis * 5e-7)).numpy()
        above = rodrigues(torch.tensor(axis * 2e-6)).numpy()
        exact = lambda a: np.array([[np.cos(a), -np.sin(a), 0],
                                    [np.sin(a), np.cos(a), 0],
                                    [0, 0, 1.0]])
        assert np.max(np.abs(below - exact(5e-7))) < 1e-12
        assert np.max(np.abs(above - exact(2e-6))) < 1e-12

    def test_quarter_turn(self):
        r = rodrigues(torch.tensor([0.0, 0.0, np.pi / 2])).numpy()
        assert np.allclose(r @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-12)


class TestForwardKinematics:
    def test_identity_pose(self, template):
        joints, _, _ = forward_kinematics(template, zero_pose(template),
                                          zero_shape(template))
        root = template.role_map["root"]
        expected = template.rest_joints - template.rest_joints[root]
        assert np.allclose(joints.numpy(), expected, atol=1e-12)

    def test_global_rotation_equivariance(self, template):
        theta = zero_pose(template)
        theta[0, 2] = np.pi / 2
        joints, _, _ = forward_kinematics(template, theta,
                                          zero_shape(template))
        base, _, _ = forward_kinematics(template, zero_pose(template),
                                        zero_shape(template))
        rz = rodrigues(torch.tensor([0.0, 0.0, np.pi / 2])).numpy()
        assert np.allclose(joints.numpy(), base.numpy() @ rz.T, atol=1e-9)

    def test_bone_lengths_random(self, template):
        rng = np.random.default_rng(6)
        for _ in range(20):
            theta = torch.from_numpy(rng.normal(size=(24, 3)) * 0.8)
            beta = torch.from_numpy(rng.normal(size=10) * 0.5)
            joints, _, rest = forward_kinematics(template, theta, beta)
            j, r = joints.numpy(), rest.numpy()
            for i, parent in enumerate(template.parents):
                if parent < 0:
                    continue
                got = np.linalg.norm(j[i] - j[parent])
                want = np.linalg.norm(r[i] - r[parent])
                assert abs(got - want) < 1e-9

    def test_batched_matches_loop(self, template):
        rng = np.random.default_rng(7)
        thetas = torch.from_numpy(rng.normal(size=(4, 24, 3)) * 0.5)
        betas = torch.from_numpy(rng.normal(size=(4, 10)) * 0.3)
        joints, _, _ = forward_kinematics(template, thetas, betas)
        for i in range(4):
            ji, _, _ = forward_kinematics(template, thetas[i], betas[i])
            assert torch.allclose(joints[i], ji, atol=1e-12)


class TestSkinPoints:
    def test_identity_pose(self, template):
        theta, beta = zero_pose(template), zero_shape(template)
        joints, points = body_points(template, theta, beta)
        root = template.role_map["root"]
        expected = template.point_positions - template.rest_joints[root]
        assert np.allclose(points.numpy(), expected, atol=1e-12)

    def test_global_rotation_equivariance(self, template):
        theta = zero_pose(template)
        theta[0] = torch.tensor([0.3, -0.4, 0.9])
        _, points = body_points(template, theta, zero_shape(template))
        _, base = body_points(template, zero_pose(template),
                              zero_shape(template))
        r = rodrigues(theta[0]).numpy()
        assert np.allclose(points.numpy(), base.numpy() @ r.T, atol=1e-9)

    def test_rigid_attachment_distance(self, template):
        rng = np.random.default_rng(8)
        theta = torch.from_numpy(rng.normal(size=(24, 3)) * 0.7)
        beta = torch.from_numpy(rng.normal(size=10) * 0.4)
        joints, rotations, rest = forward_kinematics(template, theta, beta)
        points = skin_points(template, joints, rotations, rest)
        j, p = joints.numpy(), points.numpy()
        rest_np = rest.numpy()
        for m, joint in enumerate(template.point_joints):
            want = np.linalg.norm(template.point_positions[m]
                                  - rest_np[joint])
            got = np.linalg.norm(p[m] - j[joint])
            assert abs(got - want) < 1e-9


class TestCanonicalize:
    def test_wraps_into_range(self):
        rng = np.random.default_rng(9)
        theta = rng.normal(size=72) * 8.0
        out = canonicalize_pose(theta).reshape(-1, 3)
        angles = np.linalg.norm(out, axis=-1)
        assert np.all(angles < 2.0 * np.pi)

    def test_rotation_preserved(self):
        aa = np.array([0.0, 0.0, 2.0 * np.pi + 0.3])
        out = canonicalize_pose(aa)
        r1 = rodrigues(torch.tensor(aa)).numpy()
        r2 = rodrigues(torch.from_numpy(out)).numpy()
        assert np.max(np.abs(r1 - r2)) < 1e-9


class TestTemplateValidation:
    def test_bad_parents_rejected(self, template):
        with pytest.raises(ConfigurationError):
            SkeletonTemplate(
                version="x", parents=np.array([-1, 2, 1]),
                rest_joints=np.zeros((3, 3)), shape_basis=np.zeros((9, 2)),
                point_positions=np.zeros((30, 3)),
                point_joints=np.zeros(30, dtype=np.int64), point_tags=[],
                role_map={"root": 0, "head_top": 1, "left_ankle": 2,
                          "right_ankle": 2})

    def test_head_must_differ_from_ankles(self, template):
        with pytest.raises(ConfigurationError):
            SkeletonTemplate(
                version="x", parents=np.array([-1, 0, 1]),
                rest_joints=np.zeros((3, 3)), shape_basis=np.zeros((9, 2)),
                point_positions=np.zeros((30, 3)),
                point_joints=np.zeros(30, dtype=np.int64), point_tags=[],
                role_map={"root": 0, "head_top": 2, "left_ankle": 2,
                          "right_ankle": 1})
