"""Synthetic demonstration factory.

Per episode: spawn a scene, detect grasp candidates on the target, pick a
diverse reachable target grasp, synthesize a waypoint trajectory (SLERP
rotations, linear translations), reparameterize it to constant translational
speed, roll it through the simulator, and keep the episode only if the grasp
succeeds.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import config_hash
from .errors import CorruptFile, EmptyDataset, NoFeasibleGrasp
from .geometry import (
    Pose,
    action_from_pose,
    interpolate_pose,
    matrix_to_rot6d,
    rotation_angle,
)
from .graspsense import GraspCandidate
from .primitives import GripperGeometry, Shape, scored_surface_cloud
from .graspsense import detect_grasps
from .selector import HeuristicPoseSelector, collision_filter, nearest_jaw_variant
from .scenes import SINGLE_POS, TRAIN_OBJECTS, training_suite
from .simworld import GRIPPER_HOME, ObjectSpec, SceneSpec, World, spawn

EPISODE_MAGIC = b"GEPD"
EPISODE_VERSION = 1
PREGRASP_OFFSET = 0.08
LIFT_DISTANCE = 0.12
ROT_SPEED_CAP = np.radians(15.0)


@dataclass
class Trajectory:
    """Commanded pose sequence with per-step gripper commands."""

    poses: List[Pose]
    grippers: np.ndarray
    grasp_index: int  # first close-command step

    def actions(self) -> np.ndarray:
        return np.stack([action_from_pose(p, g)
                         for p, g in zip(self.poses, self.grippers)])


@dataclass
class Episode:
    wrist: np.ndarray    # (T, H, W, 2) float32
    agent: np.ndarray    # (T, H, W, 2) float32
    proprio: np.ndarray  # (T, 10) float32
    actions: np.ndarray  # (T, 10) float32
    target_grasp: GraspCandidate
    success: bool
    object_id: int
    seed: int

    def __len__(self) -> int:
        return len(self.actions)

    def grasp_condition(self) -> np.ndarray:
        g = np.empty(9)
        g[:3] = self.target_grasp.pose.translation
        g[3:] = matrix_to_rot6d(self.target_grasp.pose.rotation)
        return g


class Rejected:
    """Marker result for a rolled-out demonstration that did not succeed."""

    def __init__(self, reason: str):
        self.reason = reason

    def __repr__(self):
        return f"Rejected({self.reason!r})"


def sample_targets(shape: Shape, n: int, seed: int, cfg) -> List[GraspCandidate]:
    """Diverse candidate grasps on one object: detector followed by NMS."""
    cloud = scored_surface_cloud(shape, cfg["gripper_max_width"])
    cands = detect_grasps(cloud, n, seed, cfg["gripper_max_width"])
    selector = HeuristicPoseSelector.from_config(cfg)
    survivors = selector.shortlist(cands)
    if not survivors:
        raise NoFeasibleGrasp("no candidate survives NMS")
    return survivors


def synthesize_trajectory(start: Pose, grasp: GraspCandidate, steps: int,
                          pregrasp_offset: float = PREGRASP_OFFSET,
                          lift_distance: float = LIFT_DISTANCE) -> Trajectory:
    """start -> pre-grasp -> grasp approach, one close dwell, then the lift.

    The approach allocates half its poses per segment regardless of length;
    debias_speed evens the speed out afterwards.
    """
    approach_dir = grasp.pose.rotation[:, 2]
    pre = Pose(grasp.pose.rotation,
               grasp.pose.translation - pregrasp_offset * approach_dir)
    if steps < 2:
        raise ValueError("trajectory needs at least 2 steps")
    if steps == 2:
        poses = [start, grasp.pose]
    else:
        n1 = (steps - 1) // 2
        n2 = steps - 1 - n1
        poses = [interpolate_pose(start, pre, i / n1) for i in range(n1 + 1)]
        poses += [interpolate_pose(pre, grasp.pose, j / n2)
                  for j in range(1, n2 + 1)]
    grippers = [1.0] * len(poses)
    poses.append(grasp.pose)  # close dwell
    grippers.append(0.0)
    grasp_index = len(poses) - 1
    lift_steps = max(1, int(np.ceil(lift_distance / 0.02)))
    for i in range(1, lift_steps + 1):
        poses.append(Pose(grasp.pose.rotation,
                          grasp.pose.translation
                          + [0.0, 0.0, lift_distance * i / lift_steps]))
        grippers.append(0.0)
    return Trajectory(poses, np.array(grippers), grasp_index)


def debias_speed(poses: List[Pose], rot_cap: float = ROT_SPEED_CAP) -> List[Pose]:
    """Arc-length reparameterization to constant translational speed.

    Endpoints are exact and the path is unchanged (samples stay on the original
    polyline, in order). If the resampled path rotates faster than rot_cap per
    step, the pose count is increased until it does not.
    """
    if len(poses) < 3:
        return list(poses)
    seg = np.array([np.linalg.norm(b.translation - a.translation)
                    for a, b in zip(poses[:-1], poses[1:])])
    total = float(seg.sum())
    if total < 1e-9:
        return list(poses)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    n = len(poses)
    while True:
        targets = np.linspace(0.0, total, n)
        out = [poses[0]]
        for u in targets[1:-1]:
            i = int(np.searchsorted(cum, u, side="right") - 1)
            i = min(i, len(seg) - 1)
            local = (u - cum[i]) / seg[i] if seg[i] > 1e-12 else 0.0
            out.append(interpolate_pose(poses[i], poses[i + 1], float(local)))
        out.append(poses[-1])
        worst = max(rotation_angle(a.rotation, b.rotation)
                    for a, b in zip(out[:-1], out[1:]))
        if worst <= rot_cap or n > 16 * len(poses):
            return out
        n = 2 * n - 1


def debias_trajectory(traj: Trajectory, rot_cap: float = ROT_SPEED_CAP,
                      lift_distance: float = LIFT_DISTANCE) -> Trajectory:
    """Speed de-biasing across the whole demonstration.

    The approach is arc-length reparameterized; the lift is then rebuilt at the
    approach's per-step displacement (total lift rounds up to a whole number of
    such steps) so every moving step of the episode shares one speed.
    """
    approach = debias_speed(traj.poses[:traj.grasp_index], rot_cap)
    grasp_pose = traj.poses[traj.grasp_index]
    seg = [np.linalg.norm(b.translation - a.translation)
           for a, b in zip(approach[:-1], approach[1:])]
    delta = float(np.mean(seg)) if seg else 0.02
    poses = approach + [grasp_pose]  # close dwell
    n_lift = max(1, int(np.ceil(lift_distance / max(delta, 1e-6))))
    for i in range(1, n_lift + 1):
        poses.append(Pose(grasp_pose.rotation,
                          grasp_pose.translation + [0.0, 0.0, delta * i]))
    grippers = np.concatenate([np.ones(len(approach)), np.zeros(n_lift + 1)])
    return Trajectory(poses, grippers, len(approach))


def roll_and_record(world: World, traj: Trajectory, target: GraspCandidate,
                    object_id: int = 0):
    """Execute the trajectory; return an Episode on success, Rejected otherwise."""
    wrist, agent, proprio, actions = [], [], [], []
    world.observation()  # prime the frame history with the initial state
    result = None
    for pose, grip in zip(traj.poses, traj.grippers):
        frame = world.current_frame()
        wrist.append(frame["wrist"])
        agent.append(frame["agent"])
        proprio.append(frame["proprio"])
        action = action_from_pose(pose, grip)
        actions.append(action)
        result = world.step(action)
        if result.done:
            break
    if result is None or not result.success:
        return Rejected("grasp did not succeed in simulation")
    return Episode(
        wrist=np.asarray(wrist, dtype=np.float32),
        agent=np.asarray(agent, dtype=np.float32),
        proprio=np.asarray(proprio, dtype=np.float32),
        actions=np.asarray(actions, dtype=np.float32),
        target_grasp=target,
        success=True,
        object_id=object_id,
        seed=world.seed,
    )


def plan_episode(world: World, cfg, choice_seed: int,
                 target_index: int = 0) -> tuple[Trajectory, GraspCandidate]:
    """Pick a reachable diverse grasp on the target object and plan to it."""
    target_shape = world.objects[target_index].shape
    candidates = sample_targets(target_shape, cfg["detector_samples"],
                                choice_seed, cfg)
    gripper = GripperGeometry(max_width=cfg["gripper_max_width"])
    reachable = collision_filter(candidates, world.shapes(), gripper,
                                 target=target_shape)
    if not reachable:
        raise NoFeasibleGrasp("all candidates collide with the scene")
    rng = np.random.default_rng(choice_seed)
    grasp = nearest_jaw_variant(reachable[int(rng.integers(len(reachable)))],
                                GRIPPER_HOME)
    pre = grasp.pose.translation - PREGRASP_OFFSET * grasp.pose.rotation[:, 2]
    path_len = (np.linalg.norm(GRIPPER_HOME.translation - pre)
                + PREGRASP_OFFSET)
    steps = max(12, int(np.ceil(path_len / 0.018)) + 1)
    traj = synthesize_trajectory(GRIPPER_HOME, grasp, steps)
    return debias_trajectory(traj), grasp


def generate_dataset(out_dir, n_objects: int, n_episodes: int, seed: int, cfg,
                     max_attempts_per_episode: int = 5):
    """Write a dataset directory; returns (episode_count, rejected_count)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    suite = training_suite()
    objects = TRAIN_OBJECTS[:n_objects]
    stored = 0
    rejected = 0
    for e in range(n_episodes):
        episode = None
        for attempt in range(max_attempts_per_episode):
            spawn_seed = suite.spawn_seed(seed, e * max_attempts_per_episode
                                          + attempt)
            obj_kind, obj_dims = objects[e % len(objects)]
            spec = SceneSpec(objects=[ObjectSpec(obj_kind, obj_dims,
                                                 pos=SINGLE_POS)])
            world = spawn(spec, spawn_seed, cfg)
            try:
                traj, grasp = plan_episode(world, cfg,
                                           choice_seed=spawn_seed + 17)
            except NoFeasibleGrasp:
                rejected += 1
                continue
            result = roll_and_record(world, traj, grasp,
                                     object_id=e % len(objects))
            if isinstance(result, Rejected):
                rejected += 1
                continue
            episode = result
            break
        if episode is not None:
            write_episode(out_dir / f"episode_{stored:05d}.bin", episode)
            stored += 1
    manifest = {
        "episodes": stored,
        "rejected": rejected,
        "requested": n_episodes,
        "objects": len(objects),
        "seed": seed,
        "config_hash": config_hash(cfg),
        "horizon": cfg["horizon"],
        "raster_size": cfg["raster_size"],
    }
    lines = "".join(f"{k}={manifest[k]}\n" for k in sorted(manifest))
    (out_dir / "manifest.txt").write_text(lines)
    return stored, rejected


# -- binary episode records ----------------------------------------------------

def write_episode(path, ep: Episode) -> None:
    T, H, W = ep.wrist.shape[0], ep.wrist.shape[1], ep.wrist.shape[2]
    with open(path, "wb") as f:
        f.write(EPISODE_MAGIC)
        f.write(struct.pack("<IIIII", EPISODE_VERSION, T, H, W, ep.object_id))
        f.write(struct.pack("<q", ep.seed))
        f.write(ep.wrist.astype("<f4").tobytes())
        f.write(ep.agent.astype("<f4").tobytes())
        f.write(ep.proprio.astype("<f4").tobytes())
        f.write(ep.actions.astype("<f4").tobytes())
        f.write(ep.target_grasp.pose.to_bytes())
        f.write(struct.pack("<dd", ep.target_grasp.score, ep.target_grasp.width))
        f.write(struct.pack("<B", 1 if ep.success else 0))


def read_episode(path) -> Episode:
    data = Path(path).read_bytes()
    if data[:4] != EPISODE_MAGIC:
        raise CorruptFile(f"{path}: bad episode magic")
    try:
        version, T, H, W, object_id = struct.unpack_from("<IIIII", data, 4)
        if version != EPISODE_VERSION:
            raise CorruptFile(f"{path}: unsupported version {version}")
        (seed,) = struct.unpack_from("<q", data, 24)
        off = 32
        raster_n = T * H * W * 2

        def take(count):
            nonlocal off
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=off)
            off += 4 * count
            return arr

        wrist = take(raster_n).reshape(T, H, W, 2).copy()
        agent = take(raster_n).reshape(T, H, W, 2).copy()
        proprio = take(T * 10).reshape(T, 10).copy()
        actions = take(T * 10).reshape(T, 10).copy()
        pose = Pose.from_bytes(data[off:off + 96])
        off += 96
        score, width = struct.unpack_from("<dd", data, off)
        off += 16
        (success,) = struct.unpack_from("<B", data, off)
        off += 1
    except (struct.error, ValueError) as exc:
        raise CorruptFile(f"{path}: truncated episode record: {exc}") from exc
    if off != len(data):
        raise CorruptFile(f"{path}: trailing bytes in episode record")
    return Episode(wrist, agent, proprio, actions,
                   GraspCandidate(pose, score, width), bool(success),
                   object_id, seed)


def read_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / "manifest.txt"
    if not path.exists():
        raise CorruptFile(f"{dataset_dir} has no manifest.txt")
    out = {}
    for line in path.read_text().splitlines():
        if line:
            k, _, v = line.partition("=")
            out[k] = v
    return out


def read_dataset(dataset_dir) -> List[Episode]:
    dataset_dir = Path(dataset_dir)
    manifest = read_manifest(dataset_dir)
    files = sorted(dataset_dir.glob("episode_*.bin"))
    if int(manifest.get("episodes", -1)) != len(files):
        raise CorruptFile(
            f"manifest lists {manifest.get('episodes')} episodes, found {len(files)}")
    return [read_episode(p) for p in files]


# -- training windows ----------------------------------------------------------

class TrainingWindows:
    """Sliding windows (stride 1) over episodes for the two training stages.

    Rasters are held per episode in float16 to keep memory bounded; batches are
    gathered on demand as float32 channel-first stacks.
    """

    def __init__(self, episodes: List[Episode], horizon: int, n_obs: int):
        if not episodes:
            raise EmptyDataset("no episodes to window")
        self.horizon = horizon
        self.n_obs = n_obs
        self._rasters = []
        chunks, conds, proprio, index = [], [], [], []
        for e_idx, ep in enumerate(episodes):
            T = len(ep)
            stacked = np.concatenate([ep.wrist, ep.agent], axis=-1)  # (T,H,W,4)
            self._rasters.append(
                np.moveaxis(stacked, -1, 1).astype(np.float16))  # (T,4,H,W)
            cond = ep.grasp_condition()
            padded = np.concatenate(
                [ep.actions,
                 np.repeat(ep.actions[-1:], self.horizon, axis=0)], axis=0)
            for s in range(T):
                chunks.append(padded[s:s + self.horizon])
                conds.append(cond)
                hist = [ep.proprio[max(0, s - d)]
                        for d in range(self.n_obs - 1, -1, -1)]
                proprio.append(np.stack(hist))
                index.append((e_idx, s))
        self.chunks = np.asarray(chunks, dtype=np.float32)
        self.grasp_conds = np.asarray(conds, dtype=np.float32)
        self.proprio = np.asarray(proprio, dtype=np.float32)
        self._index = np.asarray(index, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.chunks)

    def raster_batch(self, idx) -> np.ndarray:
        out = []
        for e_idx, s in self._index[idx]:
            ep = self._rasters[e_idx]
            frames = [ep[max(0, s - d)] for d in range(self.n_obs - 1, -1, -1)]
            out.append(np.concatenate(frames, axis=0))
        return np.asarray(out, dtype=np.float32)

    def cue_batch(self, idx) -> np.ndarray:
        out = []
        for e_idx, s in self._index[idx]:
            out.append(self._rasters[e_idx][s, :2])
        return np.asarray(out, dtype=np.float32)
