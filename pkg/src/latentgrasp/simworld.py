"""Kinematic parallel-jaw grasping world.

Quasi-static rules: the commanded end-effector pose is applied directly with a
per-step displacement clamp, objects never move from contact, and a close
command attaches the target iff symmetric closing brings both finger pads onto
it within the contact tolerance. Success is lifting the attached object above
its spawn height by the lift threshold. Everything is deterministic given the
spawn seed and the action sequence.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    EpisodeFinished,
    NoTarget,
    PlacementFailure,
    ShapeMismatch,
    UsageError,
)
from .geometry import (
    Pose,
    action_from_pose,
    interpolate_pose,
    matrix_to_rot6d,
    pose_from_action,
    rotation_angle,
)
from .graspsense import (
    CameraModel,
    GraspnessMap,
    SurfaceCloud,
    apply_visual_cue,
    project_points,
)
from .diffusion import ObservationBundle
from .primitives import (
    Box,
    Cylinder,
    GripperGeometry,
    Shape,
    Sphere,
    footprint_radius,
    ray_hits,
    scored_surface_cloud,
    surface_cloud,
    with_pose,
)

CONTACT_TOLERANCE = 0.003  # residual finger gap allowed at attach, meters
SPAWN_MARGIN = 0.005
SPAWN_ATTEMPTS = 100
GRIPPER_HOME = Pose(
    np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]),
    np.array([0.0, -0.18, 0.30]))  # approach axis pointing down at the table


# -- scene specification -----------------------------------------------------

@dataclass
class ObjectSpec:
    """One object entry: fixed or range-sampled planar pose, optional motion."""

    kind: str  # box | cylinder | sphere
    dims: tuple
    pos: tuple = ((-0.15, 0.15), (-0.15, 0.15))  # (x, y): floats or (lo, hi)
    yaw: object = (0.0, 2.0 * np.pi)
    motion_speed: float = 0.0  # meters per step along a sampled direction

    def sample(self, rng: np.random.Generator):
        xy = [v if np.isscalar(v) else float(rng.uniform(*v)) for v in self.pos]
        yaw = self.yaw if np.isscalar(self.yaw) else float(rng.uniform(*self.yaw))
        return np.array(xy), float(yaw)

    def resting_height(self) -> float:
        if self.kind == "box":
            return self.dims[2] / 2.0
        if self.kind == "cylinder":
            return self.dims[1] / 2.0
        return self.dims[0]

    def build(self, xy, yaw) -> Shape:
        c, s = np.cos(yaw), np.sin(yaw)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        pose = Pose(R, [xy[0], xy[1], self.resting_height()])
        if self.kind == "box":
            return Box(pose, tuple(self.dims))
        if self.kind == "cylinder":
            return Cylinder(pose, self.dims[0], self.dims[1])
        if self.kind == "sphere":
            return Sphere(pose, self.dims[0])
        raise UsageError(f"unknown object kind {self.kind!r}")


@dataclass
class SceneSpec:
    objects: list
    workspace: tuple = (0.5, 0.5, 0.2)  # extents centered on the origin, meters
    render_gain: float = 1.0
    render_noise: float = 0.0

    def to_text(self) -> str:
        lines = [f"workspace={self.workspace[0]},{self.workspace[1]},{self.workspace[2]}",
                 f"render_gain={self.render_gain}",
                 f"render_noise={self.render_noise}"]
        for o in self.objects:
            pos = ";".join(str(v) if np.isscalar(v) else f"{v[0]}:{v[1]}"
                           for v in o.pos)
            yaw = str(o.yaw) if np.isscalar(o.yaw) else f"{o.yaw[0]}:{o.yaw[1]}"
            dims = ",".join(str(d) for d in o.dims)
            lines.append(f"object kind={o.kind} dims={dims} pos={pos} yaw={yaw} "
                         f"motion={o.motion_speed}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "SceneSpec":
        spec = SceneSpec(objects=[])
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("object "):
                fields = dict(part.split("=", 1) for part in line.split()[1:])
                parse_span = lambda v: (float(v.split(":")[0]), float(v.split(":")[1])) \
                    if ":" in v else float(v)
                spec.objects.append(ObjectSpec(
                    kind=fields["kind"],
                    dims=tuple(float(d) for d in fields["dims"].split(",")),
                    pos=tuple(parse_span(v) for v in fields["pos"].split(";")),
                    yaw=parse_span(fields["yaw"]),
                    motion_speed=float(fields.get("motion", 0.0))))
            else:
                key, _, value = line.partition("=")
                if key == "workspace":
                    spec.workspace = tuple(float(v) for v in value.split(","))
                elif key == "render_gain":
                    spec.render_gain = float(value)
                elif key == "render_noise":
                    spec.render_noise = float(value)
                else:
                    raise UsageError(f"unknown scene spec line {line!r}")
        return spec


@dataclass
class MotionState:
    direction: np.ndarray  # unit xy direction
    speed: float
    amplitude: float
    origin: np.ndarray

    def offset_at(self, step: int) -> np.ndarray:
        if self.amplitude <= 0.0 or self.speed <= 0.0:
            return np.zeros(3)
        u = (self.speed * step) % (4.0 * self.amplitude)
        off = self.amplitude - abs(u - 2.0 * self.amplitude)
        return np.array([off * self.direction[0], off * self.direction[1], 0.0])


@dataclass
class SceneObject:
    shape: Shape
    spawn_translation: np.ndarray
    motion: Optional[MotionState] = None


@dataclass
class StepResult:
    observation: ObservationBundle
    done: bool
    success: bool
    grasp_frame_index: Optional[int]


# -- world -------------------------------------------------------------------

class World:
    """One grasping episode; owns the gripper, the objects, and the cameras."""

    def __init__(self, objects, seed, cfg, render_gain=1.0, render_noise=0.0):
        self.objects: list[SceneObject] = objects
        self.seed = seed
        self.gripper = GripperGeometry(max_width=cfg["gripper_max_width"])
        self.gripper_pose = GRIPPER_HOME
        self.width = self.gripper.max_width
        self.attached: Optional[int] = None
        self.attach_rel: Optional[Pose] = None
        self.step_count = 0
        self.done = False
        self.success = False
        self.grasp_frame_index: Optional[int] = None
        self.t_max = cfg["t_max"]
        self.lift_height = cfg["lift_height"]
        self.max_step_translation = cfg["max_step_translation"]
        self.max_step_rotation = cfg["max_step_rotation"]
        self.raster_size = cfg["raster_size"]
        self.tau = cfg["tau"]
        self.n_obs = cfg["n_obs_steps"]
        self.render_gain = render_gain
        self.render_noise = render_noise
        self._frames: deque = deque(maxlen=cfg["n_obs_steps"])

    # -- cameras ---------------------------------------------------------

    def wrist_camera(self) -> CameraModel:
        n = self.raster_size
        cam_pose = self.gripper_pose.compose(Pose(np.eye(3), [0.0, 0.0, -0.12]))
        return CameraModel(fx=0.75 * n, fy=0.75 * n, cx=n / 2 - 0.5, cy=n / 2 - 0.5,
                           pose=cam_pose, height=n, width=n)

    def agent_camera(self) -> CameraModel:
        n = self.raster_size
        # fixed view from behind the home pose, pitched down at the table center
        pitch = np.radians(55.0)
        cp, sp = np.cos(pitch), np.sin(pitch)
        R = np.array([[1.0, 0.0, 0.0],
                      [0.0, -cp, sp],
                      [0.0, -sp, -cp]])
        return CameraModel(fx=0.85 * n, fy=0.85 * n, cx=n / 2 - 0.5, cy=n / 2 - 0.5,
                           pose=Pose(R, [0.0, -0.40, 0.38]), height=n, width=n)

    # -- queries -----------------------------------------------------------

    def shapes(self) -> list:
        return [o.shape for o in self.objects]

    def scene_cloud(self, max_width: float, scored: bool = True) -> SurfaceCloud:
        clouds = []
        for obj in self.objects:
            c = (scored_surface_cloud(obj.shape, max_width) if scored
                 else surface_cloud(obj.shape))
            clouds.append(c)
        if not clouds:
            return SurfaceCloud(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
        return SurfaceCloud(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.normals for c in clouds]),
            np.concatenate([c.graspness if c.graspness is not None
                            else np.zeros(len(c)) for c in clouds]))

    def proprio(self) -> np.ndarray:
        out = np.empty(10)
        out[:3] = self.gripper_pose.translation
        out[3:9] = matrix_to_rot6d(self.gripper_pose.rotation)
        out[9] = self.width / self.gripper.max_width
        return out

    # -- rendering ---------------------------------------------------------

    def render_depth(self, cam: CameraModel) -> np.ndarray:
        n = cam.height
        jj, kk = np.meshgrid(np.arange(n), np.arange(cam.width), indexing="ij")
        dirs_cam = np.stack([(kk.ravel() - cam.cx) / cam.fx,
                             (jj.ravel() - cam.cy) / cam.fy,
                             np.ones(n * cam.width)], axis=1)
        norms = np.linalg.norm(dirs_cam, axis=1)
        dirs_world = (dirs_cam / norms[:, None]) @ cam.pose.rotation.T
        origins = np.tile(cam.pose.translation, (len(dirs_world), 1))
        best = np.full(len(dirs_world), np.inf)
        for shape in self.shapes():
            t = ray_hits(shape, origins, dirs_world)
            best = np.minimum(best, t)
        depth = np.where(np.isinf(best), 0.0, best / norms)  # camera-z depth
        return depth.reshape(n, cam.width)

    def render_frame(self, apply_cue: bool = True) -> dict:
        """One observation frame: wrist/agent rasters [depth, cue] and proprio."""
        cloud = self.scene_cloud(self.gripper.max_width) if self.objects else None
        frame = {}
        for name, cam in (("wrist", self.wrist_camera()),
                          ("agent", self.agent_camera())):
            depth = self.render_depth(cam)
            if self.render_gain != 1.0 or self.render_noise > 0.0:
                salt = 1 if name == "wrist" else 2
                g = np.random.default_rng(
                    (self.seed * 1000003 + self.step_count * 31 + salt)
                    % (2 ** 63 - 1))
                hit = depth > 0.0
                depth = depth * self.render_gain \
                    + self.render_noise * g.standard_normal(depth.shape)
                depth[~hit] = 0.0
            image = np.stack([depth, np.zeros_like(depth)], axis=-1)
            if apply_cue and cloud is not None and len(cloud):
                cue_map = project_points(cloud, cam)
                image = apply_visual_cue(image, cue_map, self.tau)
            frame[name] = image
        frame["proprio"] = self.proprio()
        return frame

    def observation(self) -> ObservationBundle:
        if not self._frames:
            self._frames.append(self.render_frame())
        frames = list(self._frames)
        while len(frames) < self.n_obs:
            frames.insert(0, frames[0])  # pad history by repeating the oldest
        return ObservationBundle(
            wrist=np.stack([f["wrist"] for f in frames]),
            agent=np.stack([f["agent"] for f in frames]),
            proprio=np.stack([f["proprio"] for f in frames]))

    def current_frame(self) -> dict:
        """Latest rendered single frame (renders the initial state if needed)."""
        if not self._frames:
            self._frames.append(self.render_frame())
        return self._frames[-1]

    def _push_frame(self):
        self._frames.append(self.render_frame())

    # -- contact -----------------------------------------------------------

    def _attach_candidates(self):
        """Objects pinched by a symmetric close at the current pose."""
        inv = self.gripper_pose.inverse()
        z_lo, z_hi = self.gripper.finger_z_range()
        hits = []
        for idx, obj in enumerate(self.objects):
            local = inv.apply(surface_cloud(obj.shape).positions)
            sel = ((np.abs(local[:, 1]) <= self.gripper.finger_depth / 2.0)
                   & (local[:, 2] >= z_lo) & (local[:, 2] <= z_hi))
            if not sel.any():
                continue
            s = local[sel, 0]
            s_min, s_max = float(s.min()), float(s.max())
            if max(s_max, -s_min) > self.width / 2.0 + 1e-9:
                continue  # object is not between the fingers
            residual = abs(s_max + s_min)  # second finger gap after first contact
            if residual <= CONTACT_TOLERANCE:
                hits.append((residual, idx, s_max - s_min))
        return sorted(hits)

    def _try_attach(self):
        hits = self._attach_candidates()
        if not hits:
            self.width = 0.0
            return
        _, idx, span = hits[0]
        self.attached = idx
        self.attach_rel = self.gripper_pose.inverse().compose(
            Pose(self.objects[idx].shape.pose.rotation,
                 self.objects[idx].shape.pose.translation))
        self.width = max(span, 1e-4)

    # -- stepping ------------------------------------------------------------

    def step(self, action: np.ndarray) -> StepResult:
        if self.done:
            raise EpisodeFinished(f"episode ended at step {self.step_count}")
        if not self.objects:
            raise NoTarget("world has no objects")
        action = np.asarray(action, dtype=float).reshape(-1)
        if action.shape != (10,):
            raise ShapeMismatch("action must be a 10-vector")

        for i, obj in enumerate(self.objects):
            if obj.motion is not None and self.attached != i:
                new_t = obj.motion.origin + obj.motion.offset_at(self.step_count + 1)
                obj.shape = with_pose(obj.shape,
                                      Pose(obj.shape.pose.rotation, new_t))

        commanded = pose_from_action(action)
        delta_t = commanded.translation - self.gripper_pose.translation
        dist = np.linalg.norm(delta_t)
        angle = rotation_angle(self.gripper_pose.rotation, commanded.rotation)
        frac = min(1.0,
                   self.max_step_translation / dist if dist > 1e-12 else 1.0,
                   self.max_step_rotation / angle if angle > 1e-12 else 1.0)
        self.gripper_pose = interpolate_pose(self.gripper_pose, commanded, frac)

        if self.attached is not None:
            obj = self.objects[self.attached]
            obj.shape = with_pose(obj.shape, self.gripper_pose.compose(self.attach_rel))

        closing = action[9] < 0.5
        if closing:
            if self.grasp_frame_index is None:
                self.grasp_frame_index = self.step_count
            if self.attached is None:
                self._try_attach()
        else:
            self.attached = None
            self.attach_rel = None
            self.width = self.gripper.max_width

        if not self.success and self.attached is not None:
            obj = self.objects[self.attached]
            lift = obj.shape.pose.translation[2] - obj.spawn_translation[2]
            if lift >= self.lift_height:
                self.success = True
                self.done = True

        self.step_count += 1
        if self.step_count >= self.t_max:
            self.done = True
        self._push_frame()
        return StepResult(self.observation(), self.done, self.success,
                          self.grasp_frame_index)

    def remove_object(self, index: int) -> None:
        """Take a grasped object out of the scene (table-clearing protocol)."""
        self.objects.pop(index)
        self.attached = None
        self.attach_rel = None
        self.width = self.gripper.max_width

    def reset_attempt(self) -> None:
        """Home the gripper and grant a fresh step budget; objects stay put."""
        self.gripper_pose = GRIPPER_HOME
        self.width = self.gripper.max_width
        self.attached = None
        self.attach_rel = None
        self.step_count = 0
        self.done = False
        self.success = False
        self.grasp_frame_index = None
        self._frames.clear()


def spawn(spec: SceneSpec, seed: int, cfg) -> World:
    """Place the scene's objects without interpenetration, deterministic per seed."""
    rng = np.random.default_rng(seed)
    half_x = spec.workspace[0] / 2.0
    half_y = spec.workspace[1] / 2.0
    placed: list[SceneObject] = []
    for ospec in spec.objects:
        shape = None
        for _ in range(SPAWN_ATTEMPTS):
            xy, yaw = ospec.sample(rng)
            cand = ospec.build(xy, yaw)
            r = footprint_radius(cand)
            if abs(xy[0]) + r > half_x or abs(xy[1]) + r > half_y:
                continue
            ok = True
            for other in placed:
                gap = np.linalg.norm(cand.pose.translation[:2]
                                     - other.shape.pose.translation[:2])
                if gap < r + footprint_radius(other.shape) + SPAWN_MARGIN:
                    ok = False
                    break
            if ok:
                shape = cand
                break
        if shape is None:
            raise PlacementFailure(
                f"could not place a {ospec.kind} after {SPAWN_ATTEMPTS} attempts")
        motion = None
        if ospec.motion_speed > 0.0:
            theta = float(rng.uniform(0.0, 2.0 * np.pi))
            direction = np.array([np.cos(theta), np.sin(theta)])
            t = shape.pose.translation
            r = footprint_radius(shape)
            amp = np.inf
            for d, pos, half in ((direction[0], t[0], half_x),
                                 (direction[1], t[1], half_y)):
                if abs(d) > 1e-9:
                    amp = min(amp, (half - r - SPAWN_MARGIN - abs(pos)) / abs(d))
            amp = max(0.0, min(amp, 0.12))
            motion = MotionState(direction, ospec.motion_speed, amp,
                                 t.copy())
        placed.append(SceneObject(shape, shape.pose.translation.copy(), motion))
    world = World(placed, seed, cfg, spec.render_gain, spec.render_noise)
    return world
