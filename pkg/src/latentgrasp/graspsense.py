"""Analytic grasp sensing: point-wise graspness, antipodal candidate generation,
pinhole back-projection of graspness to rasters, and visual-cue masking.

Graspness here is a geometric antipodal-feasibility score rather than a learned
quantity: a point scores high when an opposing surface point exists within the
gripper width whose normal is anti-aligned and whose pair axis lines up with
both normals.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CorruptFile, EmptyInput, NoFeasibleGrasp, ShapeMismatch
from .geometry import Pose

GRASPNESS_KAPPA = 4.0  # sharpness of the axis-misalignment penalty
DEFAULT_TAU = 0.2
MASKED_COLOR = (0.0, 1.0)  # [depth, cue]: depth zeroed, cue channel set
WIDTH_MARGIN = 0.01  # jaw clearance added to the antipodal gap, meters

CANDIDATE_MAGIC = b"GCND"
CANDIDATE_RECORD_BYTES = 96 + 8 + 8


@dataclass
class SurfaceCloud:
    """Parallel arrays of surface samples; graspness filled by score_graspness."""

    positions: np.ndarray
    normals: np.ndarray
    graspness: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        if self.positions.shape != self.normals.shape:
            raise ShapeMismatch("positions and normals must have matching shapes")
        if len(self.normals) and not np.allclose(
                np.linalg.norm(self.normals, axis=1), 1.0, atol=1e-6):
            raise ShapeMismatch("normals must be unit length")
        if self.graspness is not None:
            self.graspness = np.asarray(self.graspness, dtype=float).reshape(-1)
            if self.graspness.shape[0] != self.positions.shape[0]:
                raise ShapeMismatch("graspness length must match point count")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def transformed(self, pose: Pose) -> "SurfaceCloud":
        return SurfaceCloud(pose.apply(self.positions),
                            self.normals @ pose.rotation.T,
                            None if self.graspness is None else self.graspness.copy())


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    """Gripper pose (approach = +z, closing axis = +x) with score and jaw width."""

    pose: Pose
    score: float
    width: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ShapeMismatch(f"grasp score {self.score} outside [0, 1]")
        if self.width <= 0.0:
            raise ShapeMismatch("grasp width must be positive")


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus camera-to-world extrinsics."""

    fx: float
    fy: float
    cx: float
    cy: float
    pose: Pose
    height: int
    width: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ShapeMismatch("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ShapeMismatch("principal point outside the image")


@dataclass
class GraspnessMap:
    """Raster of back-projected graspness with occupancy and nearest depth."""

    values: np.ndarray
    valid: np.ndarray
    depth: np.ndarray

    def __post_init__(self):
        if not (self.values.shape == self.valid.shape == self.depth.shape):
            raise ShapeMismatch("graspness map channels must share one shape")


def _pair_scores(anchor_pos, anchor_normal, positions, normals, max_width):
    """Antipodal score of one point against every other point; -1 where infeasible."""
    diff = positions - anchor_pos
    dist = np.linalg.norm(diff, axis=1)
    feasible = (dist > 1e-9) & (dist <= max_width)
    scores = np.full(len(positions), -1.0)
    if not feasible.any():
        return scores, dist
    u = diff[feasible] / dist[feasible, None]
    anti = np.clip(-(normals[feasible] @ anchor_normal), 0.0, None)
    # misalignment between the pair axis and both surface normals, radians
    cos_a = np.clip(-(u @ anchor_normal), -1.0, 1.0)
    cos_b = np.clip(np.sum(u * normals[feasible], axis=1), -1.0, 1.0)
    misalign = 0.5 * (np.arccos(cos_a) + np.arccos(cos_b))
    scores[feasible] = np.clip(anti * np.exp(-GRASPNESS_KAPPA * misalign), 0.0, 1.0)
    return scores, dist


def score_graspness(cloud: SurfaceCloud, gripper_max_width: float) -> SurfaceCloud:
    """Antipodal feasibility score in [0, 1] for every point.

    Brute force over opposing points within gripper_max_width; order-independent
    because only the per-point maximum is kept.
    """
    if len(cloud) == 0:
        raise EmptyInput("cannot score an empty point set")
    n = len(cloud)
    scores = np.zeros(n)
    for i in range(n):
        pair, _ = _pair_scores(cloud.positions[i], cloud.normals[i],
                               cloud.positions, cloud.normals, gripper_max_width)
        best = pair.max()
        if best > 0.0:
            scores[i] = best
    return SurfaceCloud(cloud.positions, cloud.normals, scores)


def _lexicographic_order(positions: np.ndarray) -> np.ndarray:
    return np.lexsort((positions[:, 2], positions[:, 1], positions[:, 0]))


def _grasp_frame(center, axis, n_a, n_b):
    """Gripper rotation with closing axis x and approach z from the pair normals."""
    x = axis / np.linalg.norm(axis)
    v = -(n_a + n_b)
    v -= np.dot(v, x) * x
    if np.linalg.norm(v) < 1e-8:
        v = np.array([0.0, 0.0, -1.0]) - np.dot([0.0, 0.0, -1.0], x) * x
    if np.linalg.norm(v) < 1e-8:
        v = np.array([0.0, 1.0, 0.0]) - np.dot([0.0, 1.0, 0.0], x) * x
    z = v / np.linalg.norm(v)
    y = np.cross(z, x)
    return Pose(np.stack([x, y, z], axis=1), center)


def detect_grasps(cloud: SurfaceCloud, n_samples: int, seed: int,
                  gripper_max_width: float) -> list[GraspCandidate]:
    """Sample antipodal grasp candidates from a scored cloud, deterministic per seed."""
    if cloud.graspness is None:
        raise ShapeMismatch("detect_grasps requires a scored cloud")
    if len(cloud) == 0:
        raise EmptyInput("cannot detect grasps on an empty point set")
    weights = np.asarray(cloud.graspness, dtype=float)
    anchors = np.flatnonzero(weights > 0.0)
    if anchors.size == 0:
        raise NoFeasibleGrasp("no point has an antipodal partner within the jaw width")
    rng = np.random.default_rng(seed)
    take = min(n_samples, anchors.size)
    p = weights[anchors] / weights[anchors].sum()
    chosen = rng.choice(anchors, size=take, replace=False, p=p)

    lex_rank = np.empty(len(cloud), dtype=int)
    lex_rank[_lexicographic_order(cloud.positions)] = np.arange(len(cloud))

    candidates: list[GraspCandidate] = []
    seen: set[tuple[int, int]] = set()
    for i in chosen:
        pair, dist = _pair_scores(cloud.positions[i], cloud.normals[i],
                                  cloud.positions, cloud.normals, gripper_max_width)
        best = pair.max()
        if best <= 0.0:
            continue
        tied = np.flatnonzero(pair >= best - 1e-12)
        j = int(tied[np.argmin(lex_rank[tied])])
        key = (min(int(i), j), max(int(i), j))
        if key in seen:
            continue
        seen.add(key)
        center = 0.5 * (cloud.positions[i] + cloud.positions[j])
        pose = _grasp_frame(center, cloud.positions[j] - cloud.positions[i],
                            cloud.normals[i], cloud.normals[j])
        score = float(np.clip(0.5 * (weights[i] + weights[j]), 0.0, 1.0))
        width = float(min(dist[j] + WIDTH_MARGIN, gripper_max_width))
        candidates.append(GraspCandidate(pose, score, width))
    if not candidates:
        raise NoFeasibleGrasp("sampled anchors produced no antipodal pair")
    return candidates


def project_points(cloud: SurfaceCloud, cam: CameraModel) -> GraspnessMap:
    """Z-buffered pinhole projection of per-point graspness onto the raster."""
    values = cloud.graspness if cloud.graspness is not None else np.zeros(len(cloud))
    pts_cam = cam.pose.inverse().apply(cloud.positions)
    z = pts_cam[:, 2]
    front = z > 1e-9
    grid = np.zeros((cam.height, cam.width))
    valid = np.zeros((cam.height, cam.width), dtype=bool)
    depth = np.zeros((cam.height, cam.width))
    if not front.any():
        return GraspnessMap(grid, valid, depth)
    pts = pts_cam[front]
    vals = values[front]
    zz = pts[:, 2]
    k = np.round(cam.fx * pts[:, 0] / zz + cam.cx).astype(int)
    j = np.round(cam.fy * pts[:, 1] / zz + cam.cy).astype(int)
    inside = (j >= 0) & (j < cam.height) & (k >= 0) & (k < cam.width)
    if not inside.any():
        return GraspnessMap(grid, valid, depth)
    j, k, zz, vals = j[inside], k[inside], zz[inside], vals[inside]
    idx = np.flatnonzero(front)[inside]
    # nearest point per pixel; depth ties within 1e-9 go to the lower point index
    zq = np.round(zz / 1e-9).astype(np.int64)
    order = np.lexsort((idx, zq))
    pix = j[order] * cam.width + k[order]
    first = np.unique(pix, return_index=True)[1]
    sel = order[first]
    grid[j[sel], k[sel]] = vals[sel]
    valid[j[sel], k[sel]] = True
    depth[j[sel], k[sel]] = zz[sel]
    return GraspnessMap(grid, valid, depth)


def unproject_pixel(cam: CameraModel, j: int, k: int, depth: float) -> np.ndarray:
    """World-frame point for a pixel with known depth; inverse of project_points."""
    x = (k - cam.cx) / cam.fx * depth
    y = (j - cam.cy) / cam.fy * depth
    return cam.pose.apply(np.array([x, y, depth]))


def apply_visual_cue(image: np.ndarray, cue_map: GraspnessMap, tau: float = DEFAULT_TAU,
                     masked_color=MASKED_COLOR) -> np.ndarray:
    """Replace pixels whose graspness exceeds tau with the mask color.

    Pixels with graspness <= tau keep the original image; idempotent for a
    fixed map and threshold.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[:2] != cue_map.values.shape:
        raise ShapeMismatch(
            f"image {image.shape} does not match map {cue_map.values.shape}")
    color = np.asarray(masked_color, dtype=float).reshape(-1)
    if color.shape[0] != image.shape[2]:
        raise ShapeMismatch("masked_color length must match image channels")
    out = image.copy()
    out[cue_map.values > tau] = color
    return out


def write_candidates(path, candidates: list[GraspCandidate]) -> None:
    """Binary candidate file: magic, u32 count, per-candidate pose/score/width."""
    with open(path, "wb") as f:
        f.write(CANDIDATE_MAGIC)
        f.write(struct.pack("<I", len(candidates)))
        for c in candidates:
            f.write(c.pose.to_bytes())
            f.write(struct.pack("<dd", c.score, c.width))


def read_candidates(path) -> list[GraspCandidate]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CANDIDATE_MAGIC:
        raise CorruptFile("bad candidate file magic")
    (count,) = struct.unpack_from("<I", data, 4)
    expected = 8 + count * CANDIDATE_RECORD_BYTES
    if len(data) != expected:
        raise CorruptFile(f"candidate file length {len(data)} != expected {expected}")
    out = []
    off = 8
    for _ in range(count):
        pose = Pose.from_bytes(data[off:off + 96])
        score, width = struct.unpack_from("<dd", data, off + 96)
        out.append(GraspCandidate(pose, score, width))
        off += CANDIDATE_RECORD_BYTES
    return out
