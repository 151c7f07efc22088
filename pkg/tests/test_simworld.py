import numpy as np
import pytest

from latentgrasp.config import resolve
from latentgrasp.errors import EpisodeFinished, NoTarget, PlacementFailure
from latentgrasp.geometry import Pose, action_from_pose
from latentgrasp.primitives import bounding_radius, contains_points
from latentgrasp.scenes import NOVEL_OBJECTS, TRAIN_OBJECTS, get_suite
from latentgrasp.simworld import (
    GRIPPER_HOME,
    ObjectSpec,
    SceneSpec,
    World,
    spawn,
)

CFG = resolve()

DOWN = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


def single_box_spec(dims=(0.04, 0.04, 0.04), pos=(0.0, 0.0), yaw=0.0):
    return SceneSpec(objects=[ObjectSpec("box", tuple(dims), pos=pos, yaw=yaw)])


def hold(world, gripper=1.0):
    """Action that keeps the gripper where it is."""
    return action_from_pose(world.gripper_pose, gripper)


def drive_to(world, target: Pose, gripper=1.0, max_steps=60):
    """Step absolute-pose commands until the clamped gripper reaches target."""
    for _ in range(max_steps):
        world.step(action_from_pose(target, gripper))
        if np.allclose(world.gripper_pose.translation, target.translation,
                       atol=1e-9) and np.allclose(world.gripper_pose.rotation,
                                                  target.rotation, atol=1e-9):
            return
    raise AssertionError("gripper did not reach the target pose")


class TestSpawn:
    def test_same_seed_identical_world(self):
        spec = get_suite("in_domain").scene_spec(0)
        a = spawn(spec, seed=5, cfg=CFG)
        b = spawn(spec, seed=5, cfg=CFG)
        for oa, ob in zip(a.objects, b.objects):
            assert np.array_equal(oa.shape.pose.translation, ob.shape.pose.translation)
            assert np.array_equal(oa.shape.pose.rotation, ob.shape.pose.rotation)

    def test_cluttered_spawn_no_interpenetration(self):
        suite = get_suite("cluttered-4")
        spec = suite.scene_spec(0)
        assert len(spec.objects) == 8
        world = spawn(spec, seed=3, cfg=CFG)
        rng = np.random.default_rng(0)
        for i, a in enumerate(world.objects):
            ra = bounding_radius(a.shape)
            pts = a.shape.pose.translation + rng.uniform(-ra, ra, (5000, 3))
            pts = pts[contains_points(a.shape, pts)]
            for j, b in enumerate(world.objects):
                if i != j and len(pts):
                    assert not contains_points(b.shape, pts).any()

    def test_empty_spec_immediate_no_target(self):
        world = spawn(SceneSpec(objects=[]), seed=0, cfg=CFG)
        assert world.objects == []
        with pytest.raises(NoTarget):
            world.step(np.zeros(10))

    def test_placement_failure_reported(self):
        # two giant boxes cannot both fit in the workspace
        spec = SceneSpec(objects=[
            ObjectSpec("box", (0.3, 0.3, 0.05), pos=(0.0, 0.0)),
            ObjectSpec("box", (0.3, 0.3, 0.05), pos=(0.0, 0.0)),
        ])
        with pytest.raises(PlacementFailure):
            spawn(spec, seed=0, cfg=CFG)


class TestStep:
    def grasp_pose(self, world, height=None):
        t = world.objects[0].shape.pose.translation.copy()
        if height is not None:
            t[2] = height
        return Pose(DOWN, t)

    def test_free_space_close_attaches_nothing(self):
        world = spawn(single_box_spec(pos=(0.1, 0.1)), seed=0, cfg=CFG)
        world.step(hold(world, gripper=0.0))
        assert world.attached is None
        assert world.grasp_frame_index == 0

    def test_antipodal_grasp_and_lift_succeeds(self):
        world = spawn(single_box_spec(), seed=0, cfg=CFG)
        grasp = self.grasp_pose(world)
        drive_to(world, grasp, gripper=1.0)
        world.step(action_from_pose(grasp, 0.0))
        assert world.attached == 0
        assert world.width == pytest.approx(0.04, abs=1e-6)
        lifted = Pose(grasp.rotation, grasp.translation + [0.0, 0.0, 0.12])
        obj = world.objects[0]
        start_z = obj.shape.pose.translation[2]
        result = None
        for _ in range(10):
            result = world.step(action_from_pose(lifted, 0.0))
            if result.done:
                break
        assert result.success
        assert obj.shape.pose.translation[2] - start_z >= CFG["lift_height"] - 1e-9

    def test_offset_grasp_fails_contact_tolerance(self):
        world = spawn(single_box_spec(), seed=0, cfg=CFG)
        t = world.objects[0].shape.pose.translation + [0.004, 0.0, 0.0]
        grasp = Pose(DOWN, t)
        drive_to(world, grasp)
        world.step(action_from_pose(grasp, 0.0))
        assert world.attached is None

    def test_attached_object_tracks_rigidly(self):
        world = spawn(single_box_spec(), seed=0, cfg=CFG)
        grasp = self.grasp_pose(world)
        drive_to(world, grasp)
        world.step(action_from_pose(grasp, 0.0))
        rel0 = world.gripper_pose.inverse().compose(world.objects[0].shape.pose)
        target = Pose(DOWN, grasp.translation + [0.05, -0.03, 0.08])
        for _ in range(6):
            world.step(action_from_pose(target, 0.0))
            rel = world.gripper_pose.inverse().compose(world.objects[0].shape.pose)
            assert np.allclose(rel.translation, rel0.translation, atol=1e-12)
            assert np.allclose(rel.rotation, rel0.rotation, atol=1e-12)

    def test_success_is_monotone_and_episode_ends(self):
        world = spawn(single_box_spec(), seed=0, cfg=CFG)
        grasp = self.grasp_pose(world)
        drive_to(world, grasp)
        world.step(action_from_pose(grasp, 0.0))
        lifted = Pose(DOWN, grasp.translation + [0.0, 0.0, 0.15])
        success_seen = False
        with pytest.raises(EpisodeFinished):
            for _ in range(20):
                r = world.step(action_from_pose(lifted, 0.0))
                success_seen = success_seen or r.success
                if success_seen:
                    assert r.success
        assert success_seen

    def test_t_max_finishes_episode(self):
        cfg = dict(CFG)
        cfg["t_max"] = 150
        world = spawn(single_box_spec(pos=(0.1, 0.1)), seed=0, cfg=cfg)
        for i in range(150):
            r = world.step(hold(world))
        assert r.done and not r.success
        with pytest.raises(EpisodeFinished):
            world.step(hold(world))

    def test_per_step_displacement_clamped(self):
        world = spawn(single_box_spec(pos=(0.1, 0.1)), seed=0, cfg=CFG)
        start = world.gripper_pose.translation.copy()
        far = Pose(DOWN, start + [0.5, 0.0, 0.0])
        world.step(action_from_pose(far, 1.0))
        moved = np.linalg.norm(world.gripper_pose.translation - start)
        assert moved <= CFG["max_step_translation"] + 1e-9


class TestDeterminism:
    def test_identical_seed_and_actions_identical_stream(self):
        spec = get_suite("spatial").scene_spec(2)
        actions = []
        rng = np.random.default_rng(4)
        for _ in range(6):
            t = rng.uniform(-0.1, 0.1, 3) + [0, 0, 0.2]
            actions.append(action_from_pose(Pose(DOWN, t), 1.0))
        streams = []
        for _ in range(2):
            world = spawn(spec, seed=11, cfg=CFG)
            frames = []
            for a in actions:
                r = world.step(a)
                frames.append((r.observation.wrist.copy(), r.observation.agent.copy(),
                               r.observation.proprio.copy(), r.done, r.success))
            streams.append(frames)
        for fa, fb in zip(*streams):
            assert np.array_equal(fa[0], fb[0])
            assert np.array_equal(fa[1], fb[1])
            assert np.array_equal(fa[2], fb[2])
            assert fa[3:] == fb[3:]


class TestMoving:
    def test_paths_stay_inside_workspace(self):
        suite = get_suite("dynamic")
        spec = suite.scene_spec(1)
        world = spawn(spec, seed=7, cfg=CFG)
        assert world.objects[0].motion is not None
        half_x, half_y = 0.25, 0.25
        from latentgrasp.primitives import footprint_radius
        for _ in range(150):
            try:
                world.step(hold(world))
            except EpisodeFinished:
                break
            for obj in world.objects:
                t = obj.shape.pose.translation
                r = footprint_radius(obj.shape)
                assert abs(t[0]) + r <= half_x + 1e-9
                assert abs(t[1]) + r <= half_y + 1e-9


class TestRender:
    def test_empty_world_all_far(self):
        world = spawn(SceneSpec(objects=[]), seed=0, cfg=CFG)
        depth = world.render_depth(world.wrist_camera())
        assert (depth == 0.0).all()

    def test_sphere_depth_minimum_on_axis(self):
        world = spawn(SceneSpec(objects=[]), seed=0, cfg=CFG)
        cam = world.wrist_camera()
        # place a sphere on the wrist camera's optical axis
        center = cam.pose.apply(np.array([0.0, 0.0, 0.25]))
        from latentgrasp.primitives import Sphere
        from latentgrasp.simworld import SceneObject
        world.objects.append(SceneObject(Sphere(Pose(np.eye(3), center), 0.05),
                                         center.copy()))
        depth = world.render_depth(cam)
        hit = depth > 0
        assert hit.any()
        j, k = np.unravel_index(np.argmin(np.where(hit, depth, np.inf)),
                                depth.shape)
        n = depth.shape[0]
        assert abs(j - (n / 2 - 0.5)) <= 1.0 and abs(k - (n / 2 - 0.5)) <= 1.0
        # analytic ray-sphere oracle for this pixel's ray, in camera frame
        d = np.array([(k - cam.cx) / cam.fx, (j - cam.cy) / cam.fy, 1.0])
        d /= np.linalg.norm(d)
        c = np.array([0.0, 0.0, 0.25])
        b = -d @ c
        t = -b - np.sqrt(b * b - (c @ c - 0.05 ** 2))
        assert depth[j, k] == pytest.approx(t * d[2], abs=1e-9)

    def test_cue_channel_zero_when_masking_disabled(self):
        world = spawn(single_box_spec(), seed=0, cfg=CFG)
        frame = world.render_frame(apply_cue=False)
        assert (frame["wrist"][..., 1] == 0.0).all()
        cued = world.render_frame(apply_cue=True)
        assert (cued["wrist"][..., 1] > 0.0).any()

    def test_masked_pixels_have_zero_depth(self):
        world = spawn(single_box_spec(), seed=0, cfg=CFG)
        frame = world.render_frame()
        cue = frame["wrist"][..., 1] > 0
        assert (frame["wrist"][cue, 0] == 0.0).all()


class TestSceneSpecText:
    def test_round_trip(self):
        spec = get_suite("visual").scene_spec(3)
        text = spec.to_text()
        back = SceneSpec.from_text(text)
        assert back.render_gain == spec.render_gain
        assert back.render_noise == spec.render_noise
        assert len(back.objects) == len(spec.objects)
        for a, b in zip(back.objects, spec.objects):
            assert a.kind == b.kind and a.dims == b.dims
            assert a.pos == b.pos and a.motion_speed == b.motion_speed

    def test_fixed_pose_entry(self):
        text = ("object kind=box dims=0.04,0.04,0.04 pos=0.1;-0.05 yaw=0.5 "
                "motion=0.0\n")
        spec = SceneSpec.from_text(text)
        assert spec.objects[0].pos == (0.1, -0.05)
        assert spec.objects[0].yaw == 0.5


class TestSuites:
    def test_all_suites_constructible(self):
        for name in ("in_domain", "spatial", "object", "visual", "cluttered-1",
                     "cluttered-4", "dynamic"):
            suite = get_suite(name)
            spec = suite.scene_spec(0)
            assert len(spec.objects) >= 1

    def test_object_suite_uses_novel_geometry(self):
        novel = get_suite("object").scene_spec(0).objects[0]
        assert (novel.kind, novel.dims) in NOVEL_OBJECTS
        assert (novel.kind, novel.dims) not in TRAIN_OBJECTS

    def test_seed_spaces_disjoint(self):
        a = get_suite("in_domain").spawn_seed(0, 3)
        b = get_suite("spatial").spawn_seed(0, 3)
        assert a != b
