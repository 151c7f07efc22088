"""Closed-loop policy evaluation and metrics.

Each control cycle renders the observation, re-runs grasp detection, selects a
guiding grasp, samples an action latent with DDIM, decodes it under the grasp
condition, and executes a fixed number of actions before re-planning. The
grasp frame error is the weighted geodesic distance between the executed pose
at the first close command and the guiding grasp active at that moment.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from .config import config_hash
from .diffusion import LatentDiffusionPolicy, ObservationBundle
from .errors import (
    CheckpointMismatch,
    DegenerateInput,
    EmptyResults,
    NoCandidates,
    NoFeasibleGrasp,
    PlacementFailure,
)
from .geometry import (
    DistanceWeights,
    Pose,
    matrix_to_rot6d,
    pose_from_action,
    weighted_distance,
)
from .graspsense import GraspCandidate, detect_grasps
from .primitives import GripperGeometry, scored_surface_cloud
from .scenes import get_suite
from .selector import HeuristicPoseSelector, collision_filter, nearest_jaw_variant
from .simworld import World, spawn
from .vae import ActionChunkVAE


def grasp_frame_error(gfp: Pose, guide: Pose, weights: DistanceWeights) -> float:
    """Weighted geodesic distance from the first-close pose to the guide pose."""
    return weighted_distance(gfp, guide, weights)


@dataclass
class TrialResult:
    suite: str
    seed: int
    object_id: int
    success: bool
    steps_used: int
    gfe: Optional[float]
    selected_grasp: Optional[GraspCandidate]


def success_rate(results: List[TrialResult]) -> float:
    """Percentage of successful trials."""
    if not results:
        raise EmptyResults("no trials to aggregate")
    return 100.0 * sum(r.success for r in results) / len(results)


def scene_completion_rate(cleared: int, total: int) -> float:
    """Percentage of scene objects cleared within the attempt budget."""
    if total <= 0:
        raise EmptyResults("scene had no objects")
    return 100.0 * cleared / total


def mean_gfe(results: List[TrialResult]) -> Optional[float]:
    vals = [r.gfe for r in results if r.gfe is not None]
    return float(np.mean(vals)) if vals else None


class PolicyRunner:
    """Binds the two-stage policy, the selector, and the pipeline flags."""

    def __init__(self, vae: ActionChunkVAE, policy: LatentDiffusionPolicy,
                 selector: HeuristicPoseSelector, cfg,
                 planner: Optional[Callable] = None):
        if policy is not None and vae is not None:
            if (policy.latent_len != vae.latent_len
                    or policy.n_latent_dims != vae.n_latent_dims):
                raise CheckpointMismatch("policy and VAE latent shapes differ")
        self.vae = vae
        self.policy = policy
        self.selector = selector
        self.cfg = cfg
        self.guidance = cfg["guidance"]
        self.action_horizon = cfg["action_horizon"]
        self.discard_head = cfg["discard_head_actions"]
        self.detect_every_cycle = cfg["detect_every_cycle"]
        self.planner = planner
        self.stage_log: List[str] = []
        self.gripper = GripperGeometry(max_width=cfg["gripper_max_width"])

    # -- detection and selection -------------------------------------------

    def detect_candidates(self, world: World, seed: int):
        """Per-object detection; returns candidates with source object indices."""
        cands, sources = [], []
        for idx, obj in enumerate(world.objects):
            cloud = scored_surface_cloud(obj.shape, self.gripper.max_width)
            try:
                found = detect_grasps(cloud, self.cfg["detector_samples"],
                                      seed + idx * 131, self.gripper.max_width)
            except NoFeasibleGrasp:
                continue
            kept = collision_filter(found, world.shapes(), self.gripper,
                                    target=obj.shape)
            cands.extend(kept)
            sources.extend([idx] * len(kept))
        return cands, sources

    def select_guide(self, world: World, cands, sources, seed: int):
        """Strategy selection over pre-filtered candidates plus their source."""
        if not cands:
            raise NoCandidates("detector produced no collision-free candidates")
        chosen = self.selector.select(cands, world.gripper_pose, seed=seed)
        source = None  # jaw canonicalization keeps translations unchanged
        for c, s in zip(cands, sources):
            if np.array_equal(c.pose.translation, chosen.pose.translation):
                source = s
                break
        return chosen, source

    # -- planning ------------------------------------------------------------

    def plan_chunk(self, obs: ObservationBundle, guide: Optional[GraspCandidate],
                   seed: int) -> np.ndarray:
        """One action chunk (horizon, 10) from the observation and the guide."""
        if self.planner is not None:
            return self.planner(obs, guide, seed)
        g_cond = None
        if guide is not None:
            g_cond = np.concatenate([guide.pose.translation,
                                     matrix_to_rot6d(guide.pose.rotation)])
        z = self.policy.predict_latent(
            obs, grasp_cond=g_cond if self.guidance == "condition" else None,
            seed=seed)
        cond = g_cond if self.guidance == "latent" else None
        if self.vae.guided and cond is None:
            raise CheckpointMismatch("guided VAE decoder needs a grasp condition")
        chunk = self.vae.decode(z[None], cond[None] if cond is not None else None)
        return chunk[0]

    # -- episode loop --------------------------------------------------------

    def run_episode(self, world: World, seed: int, suite: str = "",
                    object_id: int = 0) -> TrialResult:
        weights = DistanceWeights(self.cfg["w_t"], self.cfg["w_r"])
        guide: Optional[GraspCandidate] = None
        gfe: Optional[float] = None
        cycle = 0
        self.stage_log = []
        while not world.done:
            obs = world.observation()
            if self.guidance != "none":
                if self.detect_every_cycle or guide is None:
                    cands, sources = self.detect_candidates(world, seed)
                    try:
                        guide, _ = self.select_guide(world, cands, sources,
                                                     seed + cycle)
                    except NoCandidates:
                        if guide is None:
                            return TrialResult(suite, seed, object_id, False,
                                               world.step_count, None, None)
                    self.stage_log.append(
                        f"detect+select:{self.selector.strategy}")
            self.stage_log.append(f"cue:{'on' if self.policy is None or self.policy.use_cue else 'off'}")
            chunk = self.plan_chunk(obs, guide, seed * 7919 + cycle)
            self.stage_log.append(f"plan:{self.guidance}")
            actions = chunk[self.discard_head:]
            for action in actions[:self.action_horizon]:
                had_grasp_frame = world.grasp_frame_index is not None
                result = self._step_safely(world, action)
                if (not had_grasp_frame and world.grasp_frame_index is not None
                        and guide is not None):
                    gfe = grasp_frame_error(world.gripper_pose, guide.pose,
                                            weights)
                if result.done:
                    break
            cycle += 1
        return TrialResult(suite, seed, object_id, world.success,
                           world.step_count, gfe, guide)

    def _step_safely(self, world: World, action: np.ndarray):
        """Execute a policy action; malformed rotations hold the current pose."""
        action = np.asarray(action, dtype=float).reshape(-1)
        try:
            pose_from_action(action)
        except DegenerateInput:
            hold = np.concatenate([world.gripper_pose.translation,
                                   matrix_to_rot6d(world.gripper_pose.rotation),
                                   action[-1:]])
            return world.step(hold)
        return world.step(action)

    def manifest_checksum(self) -> str:
        return hashlib.sha256("|".join(self.stage_log).encode()).hexdigest()[:16]

    # -- suites ----------------------------------------------------------------

    def run_suite(self, suite_name: str, n_episodes: int, master_seed: int,
                  cfg_for_world=None) -> List[TrialResult]:
        suite = get_suite(suite_name)
        cfg = cfg_for_world or self.cfg
        results = []
        for e in range(n_episodes):
            world = None
            for attempt in range(5):
                try:
                    world = spawn(suite.scene_spec(e),
                                  suite.spawn_seed(master_seed, e) + attempt,
                                  cfg)
                    break
                except PlacementFailure:
                    continue
            if world is None:
                raise PlacementFailure(f"suite {suite_name} episode {e}")
            results.append(self.run_episode(
                world, seed=suite.spawn_seed(master_seed, e), suite=suite_name,
                object_id=e % len(suite.objects)))
        return results

    def run_scene_completion(self, world: World, master_seed: int,
                             attempt_budget: int = 10,
                             suite: str = "cluttered") -> tuple:
        """Table-clearing protocol: repeated attempts, each with a fresh budget."""
        total = len(world.objects)
        cleared = 0
        attempts = []
        for attempt in range(attempt_budget):
            if not world.objects:
                break
            world.reset_attempt()
            result = self.run_episode(world, seed=master_seed + attempt * 37,
                                      suite=suite)
            attempts.append(result)
            if result.success and world.attached is not None:
                world.remove_object(world.attached)
                cleared += 1
        return cleared, total, attempts


# -- results files --------------------------------------------------------------

def write_results(path, results: List[TrialResult], cfg) -> None:
    """Line-oriented results records plus a config-hash header."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# config_hash={config_hash(cfg)}\n")
        for r in results:
            grasp = "na"
            if r.selected_grasp is not None:
                raw = r.selected_grasp.pose.to_bytes() + struct.pack(
                    "<dd", r.selected_grasp.score, r.selected_grasp.width)
                grasp = raw.hex()
            gfe = "na" if r.gfe is None else repr(r.gfe)
            f.write(f"suite={r.suite} seed={r.seed} object={r.object_id} "
                    f"success={int(r.success)} steps={r.steps_used} "
                    f"gfe={gfe} grasp={grasp}\n")


def read_results(path) -> List[TrialResult]:
    results = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        fields = dict(part.split("=", 1) for part in line.split())
        grasp = None
        if fields["grasp"] != "na":
            raw = bytes.fromhex(fields["grasp"])
            pose = Pose.from_bytes(raw[:96])
            score, width = struct.unpack_from("<dd", raw, 96)
            grasp = GraspCandidate(pose, score, width)
        results.append(TrialResult(
            suite=fields["suite"], seed=int(fields["seed"]),
            object_id=int(fields["object"]), success=fields["success"] == "1",
            steps_used=int(fields["steps"]),
            gfe=None if fields["gfe"] == "na" else float(fields["gfe"]),
            selected_grasp=grasp))
    if not results:
        raise EmptyResults(f"{path} holds no trial records")
    return results


def format_report(results: List[TrialResult]) -> str:
    """Text table of SR and mean GFE per suite."""
    if not results:
        raise EmptyResults("no trials to report")
    suites = sorted({r.suite for r in results})
    lines = [f"{'suite':<14} {'trials':>6} {'SR%':>7} {'GFE':>8}"]
    for s in suites:
        rs = [r for r in results if r.suite == s]
        sr = success_rate(rs)
        g = mean_gfe(rs)
        lines.append(f"{s:<14} {len(rs):>6} {sr:>7.1f} "
                     f"{g if g is not None else float('nan'):>8.3f}")
    overall = success_rate(results)
    lines.append(f"{'overall':<14} {len(results):>6} {overall:>7.1f} "
                 f"{mean_gfe(results) or float('nan'):>8.3f}")
    return "\n".join(lines) + "\n"
