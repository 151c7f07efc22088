import numpy as np
import pytest

from latentgrasp.config import resolve
from latentgrasp.datagen import (
    Episode,
    Rejected,
    TrainingWindows,
    debias_speed,
    debias_trajectory,
    generate_dataset,
    plan_episode,
    read_dataset,
    read_episode,
    read_manifest,
    roll_and_record,
    sample_targets,
    synthesize_trajectory,
    write_episode,
)
from latentgrasp.errors import CorruptFile, EmptyDataset, NoFeasibleGrasp
from latentgrasp.geometry import (
    DistanceWeights,
    Pose,
    rotation_angle,
    weighted_distance,
)
from latentgrasp.graspsense import GraspCandidate
from latentgrasp.primitives import Box, Sphere
from latentgrasp.simworld import GRIPPER_HOME, ObjectSpec, SceneSpec, spawn

CFG = resolve()


def box_shape(x=0.0, y=0.0):
    return Box(Pose(np.eye(3), [x, y, 0.02]), (0.04, 0.04, 0.04))


class TestSampleTargets:
    def test_box_has_distinct_face_pair_grasps(self):
        targets = sample_targets(box_shape(), n=48, seed=0, cfg=CFG)
        assert len(targets) >= 2
        axes = np.array([np.abs(t.pose.rotation[:, 0]) for t in targets])
        assert len(set(axes.argmax(axis=1))) >= 2

    def test_oversized_sphere_infeasible(self):
        sphere = Sphere(Pose(np.eye(3), [0, 0, 0.06]), 0.06)
        with pytest.raises(NoFeasibleGrasp):
            sample_targets(sphere, n=16, seed=0, cfg=CFG)

    def test_deterministic_per_seed(self):
        a = sample_targets(box_shape(), n=16, seed=9, cfg=CFG)
        b = sample_targets(box_shape(), n=16, seed=9, cfg=CFG)
        assert len(a) == len(b)
        for ca, cb in zip(a, b):
            assert np.array_equal(ca.pose.translation, cb.pose.translation)

    def test_diversity_bound_under_weighted_metric(self):
        targets = sample_targets(box_shape(), n=48, seed=3, cfg=CFG)
        weights = DistanceWeights(CFG["w_t"], CFG["w_r"])
        bound = min(np.sqrt(CFG["w_t"]) * CFG["nms_trans"],
                    np.sqrt(CFG["w_r"]) * CFG["nms_rot"])
        from latentgrasp.errors import NearPiRotation
        for i in range(len(targets)):
            for j in range(i + 1, len(targets)):
                try:
                    d = weighted_distance(targets[i].pose, targets[j].pose,
                                          weights)
                except NearPiRotation:
                    continue  # pi-separated pairs are maximally diverse
                assert d >= bound - 1e-9


class TestSynthesize:
    def grasp(self):
        R = np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]])
        return GraspCandidate(Pose(R, [0.05, 0.02, 0.02]), 0.9, 0.05)

    def test_endpoints_exact(self):
        traj = synthesize_trajectory(GRIPPER_HOME, self.grasp(), steps=15)
        assert np.array_equal(traj.poses[0].translation, GRIPPER_HOME.translation)
        g = traj.poses[traj.grasp_index]
        assert np.allclose(g.translation, self.grasp().pose.translation)
        assert np.allclose(g.rotation, self.grasp().pose.rotation)

    def test_rotation_angle_monotone_nonincreasing(self):
        traj = synthesize_trajectory(GRIPPER_HOME, self.grasp(), steps=21)
        target_R = self.grasp().pose.rotation
        angles = [rotation_angle(p.rotation, target_R)
                  for p in traj.poses[:traj.grasp_index + 1]]
        assert all(a >= b - 1e-9 for a, b in zip(angles, angles[1:]))

    def test_two_step_degenerates_to_endpoints(self):
        traj = synthesize_trajectory(GRIPPER_HOME, self.grasp(), steps=2)
        assert np.array_equal(traj.poses[0].translation, GRIPPER_HOME.translation)
        assert np.allclose(traj.poses[1].translation,
                           self.grasp().pose.translation)

    def test_gripper_schedule(self):
        traj = synthesize_trajectory(GRIPPER_HOME, self.grasp(), steps=10)
        assert (traj.grippers[:traj.grasp_index] == 1.0).all()
        assert (traj.grippers[traj.grasp_index:] == 0.0).all()
        lift = traj.poses[-1].translation[2] - self.grasp().pose.translation[2]
        assert lift == pytest.approx(0.12)


class TestDebias:
    def test_uniform_path_unchanged(self):
        poses = [Pose(np.eye(3), [0.01 * i, 0.0, 0.1]) for i in range(10)]
        out = debias_speed(poses)
        for a, b in zip(poses, out):
            assert np.allclose(a.translation, b.translation, atol=1e-9)

    def test_geometric_spacing_becomes_uniform(self):
        xs = np.cumsum(0.001 * 1.5 ** np.arange(10))
        poses = [Pose(np.eye(3), [float(x), 0.0, 0.1]) for x in xs]
        out = debias_speed(poses)
        steps = np.array([np.linalg.norm(b.translation - a.translation)
                          for a, b in zip(out[:-1], out[1:])])
        # cumulative-arclength oracle: same total length, equal per-step share
        assert steps.sum() == pytest.approx(xs[-1] - xs[0], abs=1e-12)
        assert steps.std() / steps.mean() < 0.01
        assert np.array_equal(out[0].translation, poses[0].translation)
        assert np.array_equal(out[-1].translation, poses[-1].translation)

    def test_two_pose_path_unchanged(self):
        poses = [Pose(np.eye(3), [0.0, 0.0, 0.1]),
                 Pose(np.eye(3), [0.05, 0.0, 0.1])]
        out = debias_speed(poses)
        assert len(out) == 2
        for a, b in zip(poses, out):
            assert np.array_equal(a.translation, b.translation)

    def test_rotation_speed_capped(self):
        from latentgrasp.geometry import so3_exp
        poses = [Pose(so3_exp([0, 0, 2.0 * i / 3]), [0.002 * i, 0.0, 0.1])
                 for i in range(4)]
        out = debias_speed(poses, rot_cap=np.radians(15))
        worst = max(rotation_angle(a.rotation, b.rotation)
                    for a, b in zip(out[:-1], out[1:]))
        assert worst <= np.radians(15) + 1e-9


class TestRollAndRecord:
    def world(self):
        spec = SceneSpec(objects=[ObjectSpec("box", (0.04, 0.04, 0.04),
                                             pos=(0.0, 0.0), yaw=0.0)])
        return spawn(spec, seed=1, cfg=CFG)

    def test_successful_roll_returns_episode(self):
        world = self.world()
        traj, grasp = plan_episode(world, CFG, choice_seed=5)
        result = roll_and_record(world, traj, grasp)
        assert isinstance(result, Episode)
        assert result.success
        assert len(result) == len(result.actions)
        assert result.wrist.shape[1:] == (64, 64, 2)
        assert result.proprio.shape == (len(result), 10)

    def test_short_trajectory_rejected(self):
        world = self.world()
        traj, grasp = plan_episode(world, CFG, choice_seed=5)
        # stop the approach 5 cm short of the grasp, then close and lift there
        short = Pose(grasp.pose.rotation,
                     grasp.pose.translation - 0.05 * grasp.pose.rotation[:, 2])
        shifted = GraspCandidate(short, grasp.score, grasp.width)
        traj2 = debias_trajectory(
            synthesize_trajectory(GRIPPER_HOME, shifted, steps=15))
        result = roll_and_record(world, traj2, shifted)
        assert isinstance(result, Rejected)

    def test_replay_determinism(self):
        world_a = self.world()
        traj, grasp = plan_episode(world_a, CFG, choice_seed=5)
        ep_a = roll_and_record(world_a, traj, grasp)
        world_b = self.world()
        ep_b = roll_and_record(world_b, traj, grasp)
        assert isinstance(ep_a, Episode) and isinstance(ep_b, Episode)
        assert np.array_equal(ep_a.wrist, ep_b.wrist)
        assert np.array_equal(ep_a.actions, ep_b.actions)


class TestDataset:
    def test_generate_and_read_round_trip(self, tmp_path):
        stored, rejected = generate_dataset(tmp_path / "ds", n_objects=2,
                                            n_episodes=2, seed=0, cfg=CFG)
        assert stored == 2
        episodes = read_dataset(tmp_path / "ds")
        assert len(episodes) == 2
        manifest = read_manifest(tmp_path / "ds")
        assert int(manifest["episodes"]) == 2
        for ep in episodes:
            assert ep.success

    def test_byte_identical_rerun(self, tmp_path):
        generate_dataset(tmp_path / "a", n_objects=1, n_episodes=1, seed=3, cfg=CFG)
        generate_dataset(tmp_path / "b", n_objects=1, n_episodes=1, seed=3, cfg=CFG)
        fa = sorted((tmp_path / "a").glob("episode_*.bin"))[0]
        fb = sorted((tmp_path / "b").glob("episode_*.bin"))[0]
        assert fa.read_bytes() == fb.read_bytes()

    def test_episode_file_round_trip(self, tmp_path):
        spec = SceneSpec(objects=[ObjectSpec("box", (0.04, 0.04, 0.04),
                                             pos=(0.0, 0.0), yaw=0.0)])
        world = spawn(spec, seed=1, cfg=CFG)
        traj, grasp = plan_episode(world, CFG, choice_seed=5)
        ep = roll_and_record(world, traj, grasp)
        path = tmp_path / "ep.bin"
        write_episode(path, ep)
        back = read_episode(path)
        assert np.array_equal(back.wrist, ep.wrist)
        assert np.array_equal(back.agent, ep.agent)
        assert np.array_equal(back.actions, ep.actions)
        assert back.success == ep.success
        assert np.array_equal(back.target_grasp.pose.rotation,
                              ep.target_grasp.pose.rotation)

    def test_truncated_episode_rejected(self, tmp_path):
        spec = SceneSpec(objects=[ObjectSpec("box", (0.04, 0.04, 0.04),
                                             pos=(0.0, 0.0), yaw=0.0)])
        world = spawn(spec, seed=1, cfg=CFG)
        traj, grasp = plan_episode(world, CFG, choice_seed=5)
        ep = roll_and_record(world, traj, grasp)
        path = tmp_path / "ep.bin"
        write_episode(path, ep)
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(CorruptFile):
            read_episode(path)

    def test_manifest_mismatch_rejected(self, tmp_path):
        generate_dataset(tmp_path / "ds", n_objects=1, n_episodes=1, seed=0, cfg=CFG)
        (tmp_path / "ds" / "episode_00000.bin").unlink()
        with pytest.raises(CorruptFile):
            read_dataset(tmp_path / "ds")

    def test_speed_debias_property(self, tmp_path):
        generate_dataset(tmp_path / "ds", n_objects=2, n_episodes=2, seed=0,
                         cfg=CFG)
        for ep in read_dataset(tmp_path / "ds"):
            deltas = np.linalg.norm(np.diff(ep.actions[:, :3], axis=0), axis=1)
            moving = deltas[deltas > 1e-4]
            assert moving.std() / moving.mean() < 0.05


class TestTrainingWindows:
    def make_episode(self, T=8):
        rng = np.random.default_rng(0)
        return Episode(
            wrist=rng.uniform(size=(T, 16, 16, 2)).astype(np.float32),
            agent=rng.uniform(size=(T, 16, 16, 2)).astype(np.float32),
            proprio=rng.uniform(size=(T, 10)).astype(np.float32),
            actions=rng.uniform(size=(T, 10)).astype(np.float32),
            target_grasp=GraspCandidate(Pose.identity(), 0.5, 0.04),
            success=True, object_id=0, seed=0)

    def test_window_count_and_shapes(self):
        ep = self.make_episode(T=8)
        win = TrainingWindows([ep], horizon=16, n_obs=2)
        assert len(win) == 8
        assert win.chunks.shape == (8, 16, 10)
        assert win.proprio.shape == (8, 2, 10)
        batch = win.raster_batch(np.array([0, 3]))
        assert batch.shape == (2, 8, 16, 16)
        cue = win.cue_batch(np.array([5]))
        assert cue.shape == (1, 2, 16, 16)

    def test_chunk_padding_repeats_last_action(self):
        ep = self.make_episode(T=4)
        win = TrainingWindows([ep], horizon=16, n_obs=2)
        chunk = win.chunks[3]
        assert np.array_equal(chunk[0], ep.actions[3])
        for t in range(1, 16):
            assert np.array_equal(chunk[t], ep.actions[3])

    def test_observation_history_pads_first_frame(self):
        ep = self.make_episode(T=4)
        win = TrainingWindows([ep], horizon=16, n_obs=2)
        assert np.array_equal(win.proprio[0, 0], win.proprio[0, 1])
        batch = win.raster_batch(np.array([0]))
        assert np.allclose(batch[0, :4], batch[0, 4:], atol=1e-3)

    def test_empty_rejected(self):
        with pytest.raises(EmptyDataset):
            TrainingWindows([], horizon=16, n_obs=2)
