"""Object libraries and evaluation suite protocols.

Suites reuse the spawn machinery with different object sets, seed offsets, and
render perturbations: in-domain shares the training seed space, spatial uses a
held-out seed space over the same objects, object swaps in unseen geometry,
visual perturbs the rasters, cluttered-N packs N+4 objects with an attempt
budget, and dynamic puts the target on a linear ping-pong path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .errors import UsageError
from .simworld import ObjectSpec, SceneSpec

TRAIN_OBJECTS = [
    ("box", (0.040, 0.040, 0.080)),
    ("box", (0.030, 0.060, 0.060)),
    ("box", (0.050, 0.050, 0.050)),
    ("box", (0.026, 0.046, 0.070)),
    ("box", (0.060, 0.036, 0.046)),
    ("box", (0.036, 0.036, 0.100)),
    ("cylinder", (0.018, 0.090)),
    ("cylinder", (0.025, 0.060)),
    ("cylinder", (0.016, 0.110)),
    ("sphere", (0.024,)),
]

NOVEL_OBJECTS = [
    ("box", (0.045, 0.028, 0.065)),
    ("box", (0.055, 0.042, 0.038)),
    ("box", (0.033, 0.052, 0.084)),
    ("box", (0.047, 0.047, 0.060)),
    ("box", (0.028, 0.064, 0.050)),
    ("cylinder", (0.021, 0.075)),
    ("cylinder", (0.028, 0.055)),
    ("cylinder", (0.014, 0.095)),
    ("sphere", (0.027,)),
    ("cylinder", (0.022, 0.100)),
]

# pose sampling region for single-object scenes, inside the 50x50 cm workspace
SINGLE_POS = ((-0.14, 0.14), (-0.14, 0.14))

SUITE_NAMES = ("in_domain", "spatial", "object", "visual",
               "cluttered-1", "cluttered-2", "cluttered-3", "cluttered-4",
               "dynamic")


@dataclass
class SuiteProtocol:
    name: str
    objects: list
    n_objects: int = 1
    seed_offset: int = 0
    render_gain: float = 1.0
    render_noise: float = 0.0
    motion_speed: float = 0.0
    attempt_budget: Optional[int] = None  # cluttered scenes only

    def scene_spec(self, episode: int) -> SceneSpec:
        """Deterministic per-episode scene; objects cycle through the library."""
        chosen = [self.objects[(episode + i) % len(self.objects)]
                  for i in range(self.n_objects)]
        specs = [ObjectSpec(kind=k, dims=d, pos=SINGLE_POS,
                            motion_speed=self.motion_speed)
                 for k, d in chosen]
        return SceneSpec(objects=specs, render_gain=self.render_gain,
                         render_noise=self.render_noise)

    def spawn_seed(self, master_seed: int, episode: int) -> int:
        return (master_seed + self.seed_offset + episode * 9973) % (2 ** 62)


def get_suite(name: str) -> SuiteProtocol:
    name = name.replace("_", "-") if name.startswith("cluttered") else name
    if name in ("in_domain", "in-domain"):
        return SuiteProtocol("in_domain", TRAIN_OBJECTS, seed_offset=0)
    if name == "spatial":
        return SuiteProtocol("spatial", TRAIN_OBJECTS, seed_offset=1_000_000)
    if name == "object":
        return SuiteProtocol("object", NOVEL_OBJECTS, seed_offset=2_000_000)
    if name == "visual":
        return SuiteProtocol("visual", TRAIN_OBJECTS, seed_offset=3_000_000,
                             render_gain=1.06, render_noise=0.004)
    if name.startswith("cluttered-"):
        level = int(name.split("-")[1])
        if not 1 <= level <= 4:
            raise UsageError("cluttered suites are cluttered-1..4")
        return SuiteProtocol(name, TRAIN_OBJECTS + NOVEL_OBJECTS,
                             n_objects=4 + level,
                             seed_offset=4_000_000 + level * 100_000,
                             attempt_budget=10)
    if name == "dynamic":
        # slow enough that the 1-3 step lag between planning and the close
        # command stays within the simulator's contact tolerance
        return SuiteProtocol("dynamic", TRAIN_OBJECTS, seed_offset=5_000_000,
                             motion_speed=0.0006)
    raise UsageError(f"unknown suite {name!r}; choose from {SUITE_NAMES}")


def training_suite() -> SuiteProtocol:
    """Demonstrations are collected over the in-domain protocol."""
    return get_suite("in_domain")
