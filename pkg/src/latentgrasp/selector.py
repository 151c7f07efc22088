"""Grasp pose selection: collision filtering, non-maximum suppression, and the
score/proximity argmin against the current end-effector pose.

The full pipeline is collision filter -> NMS -> top-k by detector score ->
argmin of the weighted SE(3) geodesic distance. The simpler strategies
(random / highest / nearest) skip the top-k stage and pick directly from the
post-NMS set, matching their single-criterion definitions.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .errors import NoCandidates, UsageError
from .geometry import DistanceWeights, Pose, rotation_angle, weighted_distance
from .graspsense import GraspCandidate
from .primitives import GripperGeometry, Shape, gjk_intersects, min_z

STRATEGIES = ("hps", "random", "highest", "nearest")

JAW_FLIP = np.diag([-1.0, -1.0, 1.0])  # closing axis sign is physically moot


def nearest_jaw_variant(cand: GraspCandidate, reference: Pose) -> GraspCandidate:
    """Jaw-symmetric representative closest in rotation to the reference.

    Parallel jaws make a grasp and its 180-degree flip about the approach axis
    identical; picking the nearer one keeps relative rotations off the pi
    branch that the geodesic metric rejects.
    """
    flipped = Pose(cand.pose.rotation @ JAW_FLIP, cand.pose.translation)
    if rotation_angle(reference.rotation, flipped.rotation) \
            < rotation_angle(reference.rotation, cand.pose.rotation):
        return GraspCandidate(flipped, cand.score, cand.width)
    return cand


def collision_filter(candidates: Sequence[GraspCandidate],
                     scene: Sequence[Shape],
                     gripper: GripperGeometry,
                     target: Optional[Shape] = None,
                     table_z: float = 0.0) -> list[GraspCandidate]:
    """Keep candidates whose jaw volumes clear the table and the scene.

    Finger boxes are allowed to straddle the target's graspable band, so the
    target is excluded from the finger checks; the palm must clear everything.
    """
    kept = []
    for cand in candidates:
        boxes = gripper.collision_boxes(cand.pose, cand.width)
        fingers, palm = boxes[:2], boxes[2]
        collides = any(min_z(b) < table_z - 1e-9 for b in boxes)
        if not collides:
            for shape in scene:
                if shape is target:
                    collides = gjk_intersects(palm, shape)
                else:
                    collides = any(gjk_intersects(b, shape) for b in boxes)
                if collides:
                    break
        if not collides:
            kept.append(cand)
    return kept


def _canonical_order(candidates: Sequence[GraspCandidate]) -> list[int]:
    """Descending score; exact ties broken by pose content so the result is
    independent of input permutation."""
    keys = []
    for i, c in enumerate(candidates):
        keys.append((-c.score, tuple(c.pose.translation),
                     tuple(c.pose.rotation.reshape(9)), i))
    return [k[-1] for k in sorted(keys)]


def grasp_nms(candidates: Sequence[GraspCandidate], nms_trans: float,
              nms_rot: float) -> list[GraspCandidate]:
    """Greedy suppression of candidates close to an already-kept one in both
    translation and rotation."""
    kept: list[GraspCandidate] = []
    for i in _canonical_order(candidates):
        cand = candidates[i]
        redundant = False
        for k in kept:
            dt = np.linalg.norm(cand.pose.translation - k.pose.translation)
            if dt > nms_trans:
                continue
            if rotation_angle(cand.pose.rotation, k.pose.rotation) <= nms_rot:
                redundant = True
                break
        if not redundant:
            kept.append(cand)
    return kept


def top_k_by_score(candidates: Sequence[GraspCandidate], k: int) -> list[GraspCandidate]:
    order = _canonical_order(candidates)
    return [candidates[i] for i in order[:k]]


def argmin_distance(candidates: Sequence[GraspCandidate], pose: Pose,
                    weights: DistanceWeights) -> GraspCandidate:
    """Closest candidate under the weighted geodesic pseudo-metric; exact ties
    go to the higher score, then the lower index."""
    if not candidates:
        raise NoCandidates("no grasp candidates to select from")
    best = None
    for i, cand in enumerate(candidates):
        d = weighted_distance(pose, cand.pose, weights)
        key = (d, -cand.score, i)
        if best is None or key < best[0]:
            best = (key, cand)
    return best[1]


class HeuristicPoseSelector(BaseEstimator):
    """Strategy-switchable grasp selector over detector candidates."""

    def __init__(self, k=30, w_t=100.0, w_r=20.0, nms_trans=0.02,
                 nms_rot=np.radians(30.0), strategy="hps"):
        self.k = k
        self.w_t = w_t
        self.w_r = w_r
        self.nms_trans = nms_trans
        self.nms_rot = nms_rot
        self.strategy = strategy

    def _weights(self) -> DistanceWeights:
        return DistanceWeights(self.w_t, self.w_r)

    def shortlist(self, candidates: Sequence[GraspCandidate],
                  scene: Optional[Sequence[Shape]] = None,
                  gripper: Optional[GripperGeometry] = None,
                  target: Optional[Shape] = None) -> list[GraspCandidate]:
        """Collision filter (when a scene is given) followed by NMS."""
        cands = list(candidates)
        if scene is not None:
            cands = collision_filter(cands, scene, gripper or GripperGeometry(),
                                     target=target)
        return grasp_nms(cands, self.nms_trans, self.nms_rot)

    def select(self, candidates: Sequence[GraspCandidate], current_pose: Pose,
               scene: Optional[Sequence[Shape]] = None,
               gripper: Optional[GripperGeometry] = None,
               target: Optional[Shape] = None,
               seed: int = 0) -> GraspCandidate:
        if self.strategy not in STRATEGIES:
            raise UsageError(f"unknown selection strategy {self.strategy!r}")
        shortlist = self.shortlist(candidates, scene, gripper, target)
        if not shortlist:
            raise NoCandidates("no candidates survive collision filtering and NMS")
        shortlist = [nearest_jaw_variant(c, current_pose) for c in shortlist]
        if self.strategy == "hps":
            return argmin_distance(top_k_by_score(shortlist, self.k),
                                   current_pose, self._weights())
        if self.strategy == "highest":
            return top_k_by_score(shortlist, 1)[0]
        if self.strategy == "nearest":
            return argmin_distance(shortlist, current_pose, self._weights())
        idx = int(np.random.default_rng(seed).integers(len(shortlist)))
        return shortlist[idx]

    @classmethod
    def from_config(cls, cfg) -> "HeuristicPoseSelector":
        return cls(k=cfg["k"], w_t=cfg["w_t"], w_r=cfg["w_r"],
                   nms_trans=cfg["nms_trans"], nms_rot=cfg["nms_rot"],
                   strategy=cfg["select_strategy"])
