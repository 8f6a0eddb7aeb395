import numpy as np
import pytest

from conftest import random_pose
from egoreg.errors import DegenerateConfiguration, TooFewCorrespondences
from egoreg.evaluation import pose_errors
from egoreg.features import DESCRIPTOR_DIM, Keypoint
from egoreg.geometry import Intrinsics, PixelPoint, Pose, WorldPoint, project_many
from egoreg.matching import MatchPair
from egoreg.model import Model3D, ModelImage
from egoreg.registration import (
    Correspondence2D3D,
    RansacConfig,
    lift_matches,
    pnp_solve,
    ransac_pnp,
)


def make_kp(u, v):
    return Keypoint(PixelPoint(u, v), 2.0, 0.0, np.zeros(DESCRIPTOR_DIM, np.float32), None)


def scene_correspondences(rng, pose, intrinsics, n, noise_px=0.0, depth=(4.0, 8.0)):
    """Random points in the camera frustum with exact projections."""
    inv_r = pose.R.T
    cam_center = pose.center()
    pts = []
    while len(pts) < n:
        u = rng.uniform(20, intrinsics.width - 20)
        v = rng.uniform(20, intrinsics.height - 20)
        z = rng.uniform(*depth)
        cam = np.array([(u - intrinsics.cx) * z / intrinsics.fx,
                        (v - intrinsics.cy) * z / intrinsics.fy, z])
        pts.append(cam_center + inv_r @ cam if False else inv_r @ (cam - pose.t))
    xyz = np.stack(pts)
    uv, z = project_many(xyz, pose, intrinsics)
    assert np.all(z > 0)
    uv = uv + rng.normal(0.0, noise_px, size=uv.shape) if noise_px > 0 else uv
    return [
        Correspondence2D3D(uv[i].copy(), xyz[i].copy(), i, i, 0.0)
        for i in range(n)
    ]


# ------------------------------------------------------------ lift_matches


def lift_fixture(intrinsics):
    pts = [WorldPoint(i, np.array([float(i), 0.0, 5.0])) for i in range(4)]
    kps = [make_kp(10.0 * i, 5.0) for i in range(4)]
    # keypoints 0,1,2 linked to points 0,1,2; keypoint 3 unlinked
    img = ModelImage(7, Pose(np.eye(3), np.zeros(3)), intrinsics, kps,
                     {0: 0, 1: 1, 2: 2}, None)
    return Model3D(pts, [img])


def test_lift_matches_resolves_links(intrinsics):
    model = lift_fixture(intrinsics)
    query = [make_kp(100.0, 100.0), make_kp(110.0, 100.0)]
    matches = {7: [MatchPair(0, 1, 0.2, 0.5), MatchPair(1, 2, 0.3, 0.6)]}
    corrs, unlinked = lift_matches(matches, query, model)
    assert unlinked == 0
    assert [c.point_id for c in corrs] == [1, 2]
    assert [c.query_idx for c in corrs] == [0, 1]
    assert np.allclose(corrs[0].pixel, [100.0, 100.0])
    assert np.allclose(corrs[0].point, model.point(1).xyz)


def test_lift_matches_counts_unlinked(intrinsics):
    model = lift_fixture(intrinsics)
    query = [make_kp(0.0, 0.0)]
    matches = {7: [MatchPair(0, 3, 0.2, 0.5)]}
    corrs, unlinked = lift_matches(matches, query, model)
    assert corrs == []
    assert unlinked == 1


def test_lift_matches_dedups_by_embedded_distance(intrinsics):
    model = lift_fixture(intrinsics)
    query = [make_kp(0.0, 0.0), make_kp(10.0, 0.0)]
    # both queries claim point 0; the smaller embed_dist wins
    matches = {7: [MatchPair(0, 0, 0.9, 0.5), MatchPair(1, 0, 0.1, 0.5)]}
    corrs, _ = lift_matches(matches, query, model)
    assert len(corrs) == 1
    assert corrs[0].query_idx == 1
    # and one query cannot supply two correspondences
    matches = {7: [MatchPair(0, 0, 0.1, 0.5), MatchPair(0, 1, 0.2, 0.5)]}
    corrs, _ = lift_matches(matches, query, model)
    assert len(corrs) == 1
    assert corrs[0].point_id == 0


# --------------------------------------------------------------------- pnp


def test_pnp_noiseless_recovers_pose(rng, intrinsics):
    for _ in range(10):
        pose = random_pose(rng)
        corrs = scene_correspondences(rng, pose, intrinsics, 12)
        est = pnp_solve(corrs, intrinsics)
        pos, orient = pose_errors(est, pose)
        assert orient < 1e-5
        assert pos < 1e-6


def test_pnp_requires_six_points(rng, intrinsics):
    pose = random_pose(rng)
    corrs = scene_correspondences(rng, pose, intrinsics, 5)
    with pytest.raises(TooFewCorrespondences):
        pnp_solve(corrs, intrinsics)


def test_pnp_rejects_coincident_points(intrinsics):
    corrs = [Correspondence2D3D(np.array([100.0, 100.0]),
                                np.array([0.0, 0.0, 5.0]), i, i, 0.0)
             for i in range(8)]
    with pytest.raises(DegenerateConfiguration):
        pnp_solve(corrs, intrinsics)


# ------------------------------------------------------------------ ransac


def test_ransac_noiseless_all_inliers(rng, intrinsics):
    pose = random_pose(rng)
    corrs = scene_correspondences(rng, pose, intrinsics, 30)
    est = ransac_pnp(corrs, intrinsics, RansacConfig(seed=0))
    assert est.registered
    assert est.inlier_mask.all()
    pos, orient = pose_errors(est.pose, pose)
    assert orient < 1e-4
    assert pos < 1e-5


def test_ransac_rejects_planted_outliers(rng, intrinsics):
    pose = random_pose(rng)
    corrs = scene_correspondences(rng, pose, intrinsics, 40)
    # corrupt the last 12 pixels (30%) far beyond the inlier threshold
    bad = list(range(28, 40))
    for i in bad:
        corrs[i] = Correspondence2D3D(
            corrs[i].pixel + rng.uniform(30, 80, size=2) * rng.choice([-1, 1], size=2),
            corrs[i].point, corrs[i].point_id, corrs[i].query_idx, 0.0)
    est = ransac_pnp(corrs, intrinsics, RansacConfig(seed=1))
    assert est.registered
    assert not est.inlier_mask[bad].any()
    assert est.inlier_mask[:28].sum() >= 27  # at most one true inlier lost
    pos, orient = pose_errors(est.pose, pose)
    assert orient < 0.5


def test_ransac_below_min_inliers_raises(rng, intrinsics):
    pose = random_pose(rng)
    corrs = scene_correspondences(rng, pose, intrinsics, 8)
    with pytest.raises(TooFewCorrespondences):
        ransac_pnp(corrs, intrinsics, RansacConfig(min_inliers=12))


def test_ransac_fails_without_consensus(rng, intrinsics):
    # pixels decoupled from geometry: no pose explains 12 of them
    corrs = scene_correspondences(rng, random_pose(rng), intrinsics, 20)
    shuffled = [
        Correspondence2D3D(corrs[(i + 7) % 20].pixel, corrs[i].point, i, i, 0.0)
        for i in range(20)
    ]
    est = ransac_pnp(shuffled, intrinsics, RansacConfig(seed=2))
    assert not est.registered
    assert est.status == "failed"


def test_ransac_deterministic_for_fixed_seed(rng, intrinsics):
    pose = random_pose(rng)
    corrs = scene_correspondences(rng, pose, intrinsics, 25, noise_px=0.5)
    a = ransac_pnp(corrs, intrinsics, RansacConfig(seed=5))
    b = ransac_pnp(corrs, intrinsics, RansacConfig(seed=5))
    assert np.array_equal(a.pose.R, b.pose.R)
    assert np.array_equal(a.pose.t, b.pose.t)
    assert np.array_equal(a.inlier_mask, b.inlier_mask)
