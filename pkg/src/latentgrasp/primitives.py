"""Convex scene primitives: sampling, intersection, containment, and ray casts.

All shapes carry a world pose; boxes use full extents, cylinders have their
axis along local +z. Intersection between convex shapes uses GJK on support
functions, which keeps box/cylinder/sphere pairs exact without a case
explosion. Surface sampling is a fixed deterministic pattern so per-object
graspness and candidate caches are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .geometry import Pose
from .graspsense import SurfaceCloud

SAMPLING_STEP = 0.008  # surface grid resolution, meters


@dataclass(frozen=True)
class GripperGeometry:
    """Parallel-jaw dimensions; the grasp frame origin sits between the
    fingertips with approach +z and closing axis +x. Fingers overshoot the
    grasp center slightly so contacts at the center land on the finger pads."""

    max_width: float = 0.08
    finger_length: float = 0.04
    finger_thickness: float = 0.012
    finger_depth: float = 0.024
    palm_height: float = 0.024
    fingertip_overshoot: float = 0.01

    def finger_z_range(self) -> tuple:
        return (self.fingertip_overshoot - self.finger_length,
                self.fingertip_overshoot)

    def collision_boxes(self, grasp_pose: Pose, width: float) -> list:
        """Two finger boxes and the palm box, in world frame."""
        fl, ft, fd = self.finger_length, self.finger_thickness, self.finger_depth
        z_lo, z_hi = self.finger_z_range()
        z_mid = 0.5 * (z_lo + z_hi)
        boxes = []
        for sign in (-1.0, 1.0):
            center = np.array([sign * (width / 2.0 + ft / 2.0), 0.0, z_mid])
            boxes.append(Box(grasp_pose.compose(Pose(np.eye(3), center)),
                             (ft, fd, fl)))
        palm_center = np.array([0.0, 0.0, z_lo - self.palm_height / 2.0])
        boxes.append(Box(grasp_pose.compose(Pose(np.eye(3), palm_center)),
                         (width + 2.0 * ft, fd, self.palm_height)))
        return boxes


@dataclass(frozen=True)
class Box:
    pose: Pose
    dims: tuple  # full extents (lx, ly, lz)


@dataclass(frozen=True)
class Cylinder:
    pose: Pose
    radius: float
    height: float


@dataclass(frozen=True)
class Sphere:
    pose: Pose
    radius: float


Shape = Box | Cylinder | Sphere


def with_pose(shape: Shape, pose: Pose) -> Shape:
    return replace(shape, pose=pose)


def bounding_radius(shape: Shape) -> float:
    if isinstance(shape, Box):
        return float(np.linalg.norm(shape.dims) / 2.0)
    if isinstance(shape, Cylinder):
        return float(np.hypot(shape.radius, shape.height / 2.0))
    return shape.radius


def footprint_radius(shape: Shape) -> float:
    """Radius of the xy footprint for upright shapes (placement separation)."""
    if isinstance(shape, Box):
        return float(np.hypot(shape.dims[0], shape.dims[1]) / 2.0)
    return shape.radius


def support(shape: Shape, direction: np.ndarray) -> np.ndarray:
    """Farthest point of the shape along a world-frame direction."""
    d_local = shape.pose.rotation.T @ direction
    if isinstance(shape, Box):
        half = np.asarray(shape.dims) / 2.0
        local = np.where(d_local >= 0.0, half, -half)
    elif isinstance(shape, Sphere):
        n = np.linalg.norm(d_local)
        local = shape.radius * d_local / n if n > 1e-12 else np.array(
            [shape.radius, 0.0, 0.0])
    else:
        radial = d_local[:2]
        n = np.linalg.norm(radial)
        xy = shape.radius * radial / n if n > 1e-12 else np.zeros(2)
        z = np.sign(d_local[2]) * shape.height / 2.0 if d_local[2] != 0.0 \
            else shape.height / 2.0
        local = np.array([xy[0], xy[1], z])
    return shape.pose.apply(local)


def min_z(shape: Shape) -> float:
    """Lowest world z of the shape (for table-plane checks)."""
    return float(support(shape, np.array([0.0, 0.0, -1.0]))[2])


def _gjk_support(a: Shape, b: Shape, d: np.ndarray) -> np.ndarray:
    return support(a, d) - support(b, -d)


def _handle_simplex(simplex: list, d: np.ndarray):
    """Evolve the GJK simplex toward the origin; returns (done, new_d)."""
    if len(simplex) == 2:
        b, a = simplex
        ab, ao = b - a, -a
        if ab @ ao > 0:
            d = np.cross(np.cross(ab, ao), ab)
        else:
            simplex[:] = [a]
            d = ao
        return False, d
    if len(simplex) == 3:
        c, b, a = simplex
        ab, ac, ao = b - a, c - a, -a
        abc = np.cross(ab, ac)
        if np.cross(abc, ac) @ ao > 0:
            if ac @ ao > 0:
                simplex[:] = [c, a]
                d = np.cross(np.cross(ac, ao), ac)
            else:
                simplex[:] = [b, a]
                return False, None  # retry as line
        elif np.cross(ab, abc) @ ao > 0:
            simplex[:] = [b, a]
            return False, None
        else:
            if abc @ ao > 0:
                d = abc
            else:
                simplex[:] = [b, c, a]
                d = -abc
        return False, d
    # tetrahedron
    dd, c, b, a = simplex
    ab, ac, ad, ao = b - a, c - a, dd - a, -a
    abc = np.cross(ab, ac)
    acd = np.cross(ac, ad)
    adb = np.cross(ad, ab)
    if abc @ ad > 0:
        abc = -abc
    if acd @ ab > 0:
        acd = -acd
    if adb @ ac > 0:
        adb = -adb
    for face, tri in ((abc, [c, b, a]), (acd, [dd, c, a]), (adb, [b, dd, a])):
        if face @ ao > 0:
            simplex[:] = tri
            return False, face
    return True, d  # origin enclosed


def gjk_intersects(a: Shape, b: Shape, max_iter: int = 64) -> bool:
    """Boolean convex intersection test; conservative (True) on slow convergence."""
    d = b.pose.translation - a.pose.translation
    if np.linalg.norm(d) < 1e-12:
        return True
    simplex = [_gjk_support(a, b, d)]
    d = -simplex[0]
    for _ in range(max_iter):
        if np.linalg.norm(d) < 1e-12:
            return True
        p = _gjk_support(a, b, d)
        if p @ d < 0:
            return False
        simplex.append(p)
        done, new_d = _handle_simplex(simplex, d)
        if done:
            return True
        if new_d is None:
            done, new_d = _handle_simplex(simplex, d)
            if done:
                return True
        d = new_d
    return True


def contains_points(shape: Shape, points: np.ndarray, pad: float = 0.0) -> np.ndarray:
    """Boolean mask of world points inside the (optionally padded) shape."""
    local = shape.pose.inverse().apply(np.asarray(points, dtype=float))
    if isinstance(shape, Box):
        half = np.asarray(shape.dims) / 2.0 + pad
        return (np.abs(local) <= half).all(axis=-1)
    if isinstance(shape, Sphere):
        return np.linalg.norm(local, axis=-1) <= shape.radius + pad
    r = np.linalg.norm(local[..., :2], axis=-1)
    return (r <= shape.radius + pad) & (np.abs(local[..., 2]) <= shape.height / 2.0 + pad)


# -- surface sampling --------------------------------------------------------

def _box_cloud(dims, step) -> SurfaceCloud:
    half = np.asarray(dims) / 2.0
    pos, nrm = [], []
    for axis in range(3):
        u_axis, v_axis = [x for x in range(3) if x != axis]
        nu = max(2, int(round(dims[u_axis] / step)) + 1)
        nv = max(2, int(round(dims[v_axis] / step)) + 1)
        us = np.linspace(-half[u_axis], half[u_axis], nu)
        vs = np.linspace(-half[v_axis], half[v_axis], nv)
        uu, vv = np.meshgrid(us, vs, indexing="ij")
        for sign in (-1.0, 1.0):
            p = np.zeros((nu * nv, 3))
            p[:, axis] = sign * half[axis]
            p[:, u_axis] = uu.ravel()
            p[:, v_axis] = vv.ravel()
            n = np.zeros((nu * nv, 3))
            n[:, axis] = sign
            pos.append(p)
            nrm.append(n)
    return SurfaceCloud(np.concatenate(pos), np.concatenate(nrm))


def _cylinder_cloud(radius, height, step) -> SurfaceCloud:
    n_theta = max(8, int(round(2.0 * np.pi * radius / step)))
    n_z = max(2, int(round(height / step)) + 1)
    theta = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
    zs = np.linspace(-height / 2.0, height / 2.0, n_z)
    tt, zz = np.meshgrid(theta, zs, indexing="ij")
    side = np.column_stack([radius * np.cos(tt.ravel()), radius * np.sin(tt.ravel()),
                            zz.ravel()])
    side_n = np.column_stack([np.cos(tt.ravel()), np.sin(tt.ravel()),
                              np.zeros(tt.size)])
    pos, nrm = [side], [side_n]
    n_r = max(1, int(round(radius / step)))
    for sign in (-1.0, 1.0):
        for r in np.linspace(radius / n_r, radius, n_r):
            m = max(6, int(round(2.0 * np.pi * r / step)))
            th = np.linspace(0.0, 2.0 * np.pi, m, endpoint=False)
            cap = np.column_stack([r * np.cos(th), r * np.sin(th),
                                   np.full(m, sign * height / 2.0)])
            cap_n = np.tile([0.0, 0.0, sign], (m, 1))
            pos.append(cap)
            nrm.append(cap_n)
        pos.append(np.array([[0.0, 0.0, sign * height / 2.0]]))
        nrm.append(np.array([[0.0, 0.0, sign]]))
    return SurfaceCloud(np.concatenate(pos), np.concatenate(nrm))


def _sphere_cloud(radius, step) -> SurfaceCloud:
    n = max(64, int(round(4.0 * np.pi * radius * radius / (step * step))))
    k = np.arange(n)
    phi = np.arccos(1.0 - 2.0 * (k + 0.5) / n)
    theta = np.pi * (1.0 + 5 ** 0.5) * k
    nrm = np.column_stack([np.sin(phi) * np.cos(theta),
                           np.sin(phi) * np.sin(theta), np.cos(phi)])
    return SurfaceCloud(radius * nrm, nrm)


@lru_cache(maxsize=256)
def _canonical_cloud(kind: str, key: tuple, step: float) -> SurfaceCloud:
    if kind == "box":
        return _box_cloud(key, step)
    if kind == "cylinder":
        return _cylinder_cloud(key[0], key[1], step)
    return _sphere_cloud(key[0], step)


def shape_key(shape: Shape):
    if isinstance(shape, Box):
        return "box", tuple(float(v) for v in shape.dims)
    if isinstance(shape, Cylinder):
        return "cylinder", (float(shape.radius), float(shape.height))
    return "sphere", (float(shape.radius),)


def surface_cloud(shape: Shape, step: float = SAMPLING_STEP) -> SurfaceCloud:
    """World-frame surface samples with outward normals (canonical cache + pose)."""
    kind, key = shape_key(shape)
    return _canonical_cloud(kind, key, step).transformed(shape.pose)


@lru_cache(maxsize=256)
def _scored_canonical(kind: str, key: tuple, step: float, max_width: float):
    from .graspsense import score_graspness
    return score_graspness(_canonical_cloud(kind, key, step), max_width)


def scored_surface_cloud(shape: Shape, max_width: float,
                         step: float = SAMPLING_STEP) -> SurfaceCloud:
    """World-frame scored samples; scores are rigid-invariant so the canonical
    scoring is cached per object geometry."""
    kind, key = shape_key(shape)
    return _scored_canonical(kind, key, step, max_width).transformed(shape.pose)


# -- ray casting ---------------------------------------------------------------

def ray_hits(shape: Shape, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Smallest positive hit distance per ray, inf on miss. Directions unit-length."""
    inv = shape.pose.inverse()
    o = inv.apply(origins)
    d = dirs @ inv.rotation.T
    t = np.full(len(o), np.inf)
    if isinstance(shape, Sphere):
        b = np.sum(o * d, axis=1)
        c = np.sum(o * o, axis=1) - shape.radius ** 2
        disc = b * b - c
        ok = disc >= 0.0
        root = np.sqrt(np.maximum(disc, 0.0))
        t0 = -b - root
        t1 = -b + root
        cand = np.where(t0 > 1e-9, t0, np.where(t1 > 1e-9, t1, np.inf))
        t[ok] = cand[ok]
        return t
    if isinstance(shape, Box):
        half = np.asarray(shape.dims) / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_d = 1.0 / d
            t1 = (-half - o) * inv_d
            t2 = (half - o) * inv_d
        tmin = np.nanmax(np.minimum(t1, t2), axis=1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=1)
        parallel_miss = ((np.abs(d) < 1e-12) & (np.abs(o) > half)).any(axis=1)
        hit = (tmax >= tmin) & (tmax > 1e-9) & ~parallel_miss
        entry = np.where(tmin > 1e-9, tmin, tmax)
        t[hit] = entry[hit]
        return t
    # finite cylinder: side surface then caps
    ox, oy, oz = o[:, 0], o[:, 1], o[:, 2]
    dx, dy, dz = d[:, 0], d[:, 1], d[:, 2]
    a = dx * dx + dy * dy
    b = ox * dx + oy * dy
    c = ox * ox + oy * oy - shape.radius ** 2
    best = np.full(len(o), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = b * b - a * c
        ok = (disc >= 0.0) & (a > 1e-14)
        root = np.sqrt(np.maximum(disc, 0.0))
        for sign in (-1.0, 1.0):
            tt = (-b + sign * root) / a
            z = oz + tt * dz
            good = ok & (tt > 1e-9) & (np.abs(z) <= shape.height / 2.0)
            best = np.where(good & (tt < best), tt, best)
        for zcap in (-shape.height / 2.0, shape.height / 2.0):
            tt = (zcap - oz) / dz
            r2 = (ox + tt * dx) ** 2 + (oy + tt * dy) ** 2
            good = (np.abs(dz) > 1e-12) & (tt > 1e-9) & (r2 <= shape.radius ** 2)
            best = np.where(good & (tt < best), tt, best)
    return best
