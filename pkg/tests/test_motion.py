import math

import numpy as np
import pytest

from contact_analogy.curvature import Convexity, CurvatureEstimate, functional_estimate
from contact_analogy.errors import NoVerifiedCandidate
from contact_analogy.geometry import (BinaryMask, Point2, PoseVariant,
                                      Similarity2, extract_edges)
from contact_analogy.motion import (ContactFrame, Trajectory2D,
                                    VerificationScene, align_frames,
                                    build_frame, rank_and_verify,
                                    retarget_trajectory, transform_waypoints,
                                    verify_trajectory)
from contact_analogy.shapes import disk_mask, hook_mask
from contact_analogy.suite import (_demo_trajectory, _scene_masks, BEND_REF,
                                   DISK_REF, WALL_REF)

from oracles import pairwise_distance_matrix


def _estimate(point, normal, radius=10.0, sign=Convexity.CONCAVE, scale=10.0):
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    return CurvatureEstimate(point=point, a=1 / (2 * radius), kappa=1 / radius,
                             radius_of_curvature=radius, sign=sign,
                             normal=n, tangent=np.array([-n[1], n[0]]),
                             scale=scale, residual=0.0, support_count=9)


def _random_frame(rng):
    angle = rng.uniform(0, 2 * math.pi)
    n = np.array([math.cos(angle), math.sin(angle)])
    origin = Point2(float(rng.uniform(-40, 40)), float(rng.uniform(-40, 40)))
    return build_frame(_estimate(origin, n))


def _random_trajectory(rng, n=8):
    times = np.arange(n, dtype=float)
    poses = [Similarity2(rotation=float(rng.uniform(-1, 1)),
                         translation=(float(rng.uniform(-30, 30)),
                                      float(rng.uniform(-30, 30))))
             for _ in range(n)]
    return Trajectory2D(times=times, poses=poses)


class TestBuildFrame:
    def test_axis_convention(self):
        frame = build_frame(_estimate(Point2(0, 0), (0, -1)))
        assert np.allclose(frame.x_axis, [-1, 0])
        assert np.allclose(frame.y_axis, [0, -1])

    def test_determinism(self):
        e = _estimate(Point2(3, 4), (0.6, 0.8))
        f1, f2 = build_frame(e), build_frame(e)
        assert np.array_equal(f1.x_axis, f2.x_axis)
        assert f1.origin == f2.origin

    def test_quarter_turn_equivariance(self):
        hook, meta = hook_mask(200, (120, 100), 16, 6, 0.0)
        edges = extract_edges(hook)
        est = functional_estimate(edges, edges.nearest(meta["apex"]), hook)
        rot = BinaryMask(np.rot90(hook.cells, -1).copy())  # +90 in y-down coords
        redges = extract_edges(rot)
        h = hook.cells.shape[0]
        apex_r = Point2(h - 1 - meta["apex"].y, meta["apex"].x)
        est_r = functional_estimate(redges, redges.nearest(apex_r), rot)
        rotated_normal = np.array([-est.normal[1], est.normal[0]])
        assert np.abs(est_r.normal - rotated_normal).max() <= 1e-6


class TestRetarget:
    def test_identity_frames(self):
        rng = np.random.default_rng(0)
        frame = _random_frame(rng)
        traj = _random_trajectory(rng)
        out = retarget_trajectory(traj, frame, frame)
        for p, q in zip(traj.poses, out.poses):
            assert abs(p.rotation - q.rotation) <= 1e-9
            assert np.abs(np.asarray(p.translation) - q.translation).max() <= 1e-9

    def test_quarter_turn_conjugation(self):
        origin = Point2(10, 20)
        f_ref = build_frame(_estimate(origin, (0, -1)))
        f_tgt = build_frame(_estimate(origin, (1, 0)))  # normal rotated +90
        traj = Trajectory2D(times=np.array([0.0, 1.0]),
                            poses=[Similarity2(), Similarity2(translation=(5, 0))])
        out = retarget_trajectory(traj, f_ref, f_tgt)
        align = align_frames(f_ref, f_tgt)
        p = np.array([12.0, 25.0])
        expected = align.apply(traj.poses[1].apply(align.inverse().apply(p)))
        assert np.abs(out.poses[1].apply(p) - expected).max() <= 1e-9

    def test_contact_path_congruence(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            f_ref, f_tgt = _random_frame(rng), _random_frame(rng)
            traj = _random_trajectory(rng)
            out = retarget_trajectory(traj, f_ref, f_tgt)
            align = align_frames(f_ref, f_tgt)
            p_ref = f_ref.origin.as_array()
            ref_path = np.array([p.apply(p_ref) for p in traj.poses])
            tgt_path = np.array([q.apply(align.apply(p_ref)) for q in out.poses])
            d_ref = pairwise_distance_matrix(ref_path)
            d_tgt = pairwise_distance_matrix(tgt_path)
            assert np.abs(d_ref - d_tgt).max() <= 1e-6

    def test_relative_motion_preserved(self):
        rng = np.random.default_rng(9)
        f_ref, f_tgt = _random_frame(rng), _random_frame(rng)
        traj = _random_trajectory(rng)
        out = retarget_trajectory(traj, f_ref, f_tgt)
        align = align_frames(f_ref, f_tgt)
        probes = rng.uniform(-30, 30, (4, 2))
        for i in range(len(traj) - 1):
            rel_in = traj.poses[i + 1].compose(traj.poses[i].inverse())
            rel_out = out.poses[i + 1].compose(out.poses[i].inverse())
            assert abs(abs(rel_in.rotation) - abs(rel_out.rotation)) <= 1e-9
            # step displacements agree at corresponding material points
            for p in probes:
                d_in = np.linalg.norm(traj.poses[i + 1].apply(p) - traj.poses[i].apply(p))
                q = align.apply(p)
                d_out = np.linalg.norm(out.poses[i + 1].apply(q) - out.poses[i].apply(q))
                assert abs(d_in - d_out) <= 1e-9

    def test_timestamps_preserved(self):
        rng = np.random.default_rng(3)
        traj = _random_trajectory(rng)
        out = retarget_trajectory(traj, _random_frame(rng), _random_frame(rng))
        assert np.array_equal(out.times, traj.times)


class TestTransformWaypoints:
    def test_identity(self):
        rng = np.random.default_rng(1)
        frame = _random_frame(rng)
        pts = rng.uniform(-20, 20, (5, 2))
        out, dirs = transform_waypoints(pts, None, frame, frame)
        assert np.abs(out - pts).max() <= 1e-9
        assert dirs is None

    def test_translation_only(self):
        f_ref = build_frame(_estimate(Point2(0, 0), (0, -1)))
        f_tgt = build_frame(_estimate(Point2(10, 5), (0, -1)))
        pts = np.array([[1.0, 2.0]])
        dirs = np.array([[1.0, 0.0]])
        out, odirs = transform_waypoints(pts, dirs, f_ref, f_tgt)
        assert np.allclose(out, [[11.0, 7.0]])
        assert np.allclose(odirs, [[1.0, 0.0]])

    def test_quarter_turn_direction(self):
        f_ref = build_frame(_estimate(Point2(0, 0), (0, -1)))
        f_tgt = build_frame(_estimate(Point2(0, 0), (1, 0)))
        _, dirs = transform_waypoints(np.zeros((1, 2)), np.array([[1.0, 0.0]]),
                                      f_ref, f_tgt)
        assert np.abs(dirs - np.array([[0.0, 1.0]])).max() <= 1e-9

    def test_pairwise_distances_preserved(self):
        rng = np.random.default_rng(11)
        pts = rng.uniform(-30, 30, (8, 2))
        out, _ = transform_waypoints(pts, None, _random_frame(rng), _random_frame(rng))
        assert np.abs(pairwise_distance_matrix(pts) - pairwise_distance_matrix(out)).max() <= 1e-9


class TestVerifyTrajectory:
    def _free_scene(self):
        tool = disk_mask(96, (20, 20), 8)
        obstacle = disk_mask(96, (70, 70), 10)
        return tool, obstacle

    def test_free_space_passes(self):
        tool, obstacle = self._free_scene()
        traj = Trajectory2D(times=np.array([0.0, 1.0]),
                            poses=[Similarity2(), Similarity2(translation=(0, -5))])
        report = verify_trajectory(tool, obstacle, [], traj,
                                   (Point2(28, 20), Point2(60, 70)))
        assert report.passed
        assert report.min_clearance > 0

    def test_constructed_overlap_reported(self):
        tool, obstacle = self._free_scene()
        poses = [Similarity2(), Similarity2(translation=(10, 10)),
                 Similarity2(translation=(50, 50)), Similarity2(translation=(0, 40))]
        traj = Trajectory2D(times=np.arange(4.0), poses=poses)
        report = verify_trajectory(tool, obstacle, [], traj,
                                   (Point2(28, 20), Point2(60, 70)),
                                   step_limit=200.0)  # no subdivision: index is exact
        assert not report.passed
        assert report.first_violation.kind == "collision"
        assert report.first_violation.pose_index == 2

    def test_subdivision_never_unfails(self):
        tool, obstacle = self._free_scene()
        poses = [Similarity2(), Similarity2(translation=(100, 100))]
        traj = Trajectory2D(times=np.array([0.0, 1.0]), poses=poses)
        coarse = verify_trajectory(tool, obstacle, [], traj,
                                   (Point2(28, 20), Point2(60, 70)), step_limit=4.0)
        fine = verify_trajectory(tool, obstacle, [], traj,
                                 (Point2(28, 20), Point2(60, 70)), step_limit=1.0)
        assert not coarse.passed
        assert not fine.passed

    def test_contact_loss_detected(self):
        tool, obstacle = self._free_scene()
        traj = Trajectory2D(times=np.array([0.0, 1.0]),
                            poses=[Similarity2(), Similarity2(translation=(0, -4))],
                            contact_phase=(0, 1))
        report = verify_trajectory(tool, obstacle, [], traj,
                                   (Point2(28, 20), Point2(60, 70)))
        assert not report.passed
        assert report.first_violation.kind == "contact_loss"

    def test_static_obstacles_checked(self):
        tool, obstacle = self._free_scene()
        wall = disk_mask(96, (20, 60), 12)
        traj = Trajectory2D(times=np.array([0.0, 1.0]),
                            poses=[Similarity2(), Similarity2(translation=(0, 32))])
        report = verify_trajectory(tool, obstacle, [wall], traj,
                                   (Point2(28, 20), Point2(60, 70)))
        assert not report.passed
        assert report.first_violation.kind == "collision"


class TestRankAndVerify:
    def _candidates(self, n=4):
        from contact_analogy.matching import MatchCandidate
        out = []
        for i in range(n):
            est = _estimate(Point2(30 + i, 40), (0, -1))
            out.append(MatchCandidate(
                p_tool=est.point, p_object=Point2(50, 60),
                variant=PoseVariant(0), s_dino=1.0 - 0.1 * i, s_curv=0.0,
                combined=1.0 - 0.1 * i, tool_estimate=est, object_estimate=est))
        return out

    def _scene(self):
        return VerificationScene(tool_mask=disk_mask(96, (20, 20), 8),
                                 object_mask=disk_mask(96, (70, 70), 10))

    def _stub_verify(self, outcomes):
        from contact_analogy.motion import VerificationReport
        calls = []

        def fake(tool, obj, statics, traj, pair, **kw):
            calls.append(pair)
            ok = outcomes[len(calls) - 1]
            return VerificationReport(passed=ok, first_violation=None,
                                      min_clearance=1.0, max_contact_gap=0.0)
        return fake, calls

    def test_first_pass_single_run(self):
        demo_traj = Trajectory2D(times=np.array([0.0]), poses=[Similarity2()])
        ref_frame = build_frame(_estimate(Point2(0, 0), (0, -1)))
        fake, calls = self._stub_verify([True])
        result = rank_and_verify(self._candidates(), ref_frame, demo_traj,
                                 self._scene(), verify_fn=fake)
        assert result.verified and result.runs == 1 and result.rank == 0

    def test_third_candidate_passes(self):
        demo_traj = Trajectory2D(times=np.array([0.0]), poses=[Similarity2()])
        ref_frame = build_frame(_estimate(Point2(0, 0), (0, -1)))
        fake, calls = self._stub_verify([False, False, True])
        result = rank_and_verify(self._candidates(), ref_frame, demo_traj,
                                 self._scene(), verify_fn=fake)
        assert result.verified and result.runs == 3 and result.rank == 2

    def test_fallback_flags_unverified(self):
        demo_traj = Trajectory2D(times=np.array([0.0]), poses=[Similarity2()])
        ref_frame = build_frame(_estimate(Point2(0, 0), (0, -1)))
        fake, _ = self._stub_verify([False] * 10)
        result = rank_and_verify(self._candidates(), ref_frame, demo_traj,
                                 self._scene(), verify_fn=fake)
        assert not result.verified and result.rank == 0

    def test_no_fallback_raises(self):
        demo_traj = Trajectory2D(times=np.array([0.0]), poses=[Similarity2()])
        ref_frame = build_frame(_estimate(Point2(0, 0), (0, -1)))
        fake, _ = self._stub_verify([False] * 10)
        with pytest.raises(NoVerifiedCandidate):
            rank_and_verify(self._candidates(), ref_frame, demo_traj,
                            self._scene(), fallback=False, verify_fn=fake)


class TestHookDragScenario:
    def test_inner_bend_passes_outer_crest_fails(self):
        hook, ball, p_tool, p_object, meta = _scene_masks(BEND_REF, WALL_REF,
                                                          0.0, DISK_REF)
        traj = _demo_trajectory(0.0, meta["ball_center"])
        edges = extract_edges(hook)
        inner = functional_estimate(edges, edges.nearest(p_tool), hook)
        ref_frame = build_frame(inner)

        ok = verify_trajectory(hook, ball, [], retarget_trajectory(traj, ref_frame, ref_frame),
                               (p_tool, p_object),
                               contact_gap_max=6.0)
        assert ok.passed

        crest = functional_estimate(edges, edges.nearest(meta["crest"]), hook)
        crest_frame = build_frame(crest)
        bad_traj = retarget_trajectory(traj, ref_frame, crest_frame)
        bad = verify_trajectory(hook, ball, [], bad_traj,
                                (meta["crest"], p_object), contact_gap_max=6.0)
        assert not bad.passed
        assert bad.first_violation.kind == "contact_loss"
