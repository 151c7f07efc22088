"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: usage errors exit 1, data errors
exit 2, numeric failures exit 3.
"""


class LatentGraspError(Exception):
    """Base class for all package errors."""


class UsageError(LatentGraspError):
    """Bad command-line arguments or unknown config keys."""


class DataError(LatentGraspError):
    """Missing, empty, or corrupt inputs."""


class NumericError(LatentGraspError):
    """Numerically invalid or degenerate inputs."""


# -- numeric ---------------------------------------------------------------

class ShapeMismatch(NumericError):
    """Array shapes do not satisfy an operation's contract."""


class DegenerateInput(NumericError):
    """Input is singular or near-singular (e.g. parallel 6D rotation columns)."""


class NotARotation(NumericError):
    """Matrix violates the orthonormality / determinant invariants."""


class NearPiRotation(NumericError):
    """Relative rotation is within tolerance of pi; the log branch is rejected."""


class IndexOutOfRange(NumericError):
    """Diffusion timestep index outside [1, K]."""


class BadConfig(NumericError):
    """Config values violate an operation's preconditions."""


class NoFeasibleGrasp(NumericError):
    """No antipodal pair clears the gripper width."""


class NoCandidates(NumericError):
    """Candidate set is empty after filtering."""


class NoTarget(NumericError):
    """World has no objects to grasp."""


# -- data ------------------------------------------------------------------

class EmptyInput(DataError):
    """An operation received an empty collection."""


class EmptyDataset(DataError):
    """Training requires at least one episode."""


class EmptyResults(DataError):
    """Metric aggregation over zero trials."""


class MissingVAE(DataError):
    """Stage-2 training requires a stage-1 checkpoint."""


class CorruptFile(DataError):
    """Magic, version, or length mismatch in a binary file."""


class CheckpointMismatch(DataError):
    """Checkpoint incompatible with the requested configuration."""


class PlacementFailure(DataError):
    """Rejection sampling failed to place scene objects."""


class EpisodeFinished(LatentGraspError):
    """step() called on a world whose episode already ended."""
