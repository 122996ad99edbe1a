"""Exception types raised by voxmap."""


class VoxmapError(Exception):
    """Base class for all library errors."""


class AllocationError(VoxmapError):
    """A layer ran out of block capacity."""


class ConfigurationError(VoxmapError, ValueError):
    """Invalid parameters or mismatched layers."""


class PoseError(VoxmapError, ValueError):
    """A pose is not a proper rigid transform."""


class SnapshotError(VoxmapError):
    """A map snapshot is malformed or has the wrong version."""


class DatasetError(VoxmapError):
    """Base class for dataset loading problems."""


class MissingFileError(DatasetError):
    """A file referenced by a dataset does not exist."""


class DimensionMismatchError(DatasetError):
    """An image does not match the sensor resolution."""


class TimestampOrderError(DatasetError):
    """Pose timestamps are not strictly increasing."""


class QuaternionError(DatasetError):
    """A pose quaternion is too far from unit length."""


class OracleError(VoxmapError):
    """The brute-force oracle was given an unusable problem."""
