"""Exception types shared across the toolkit."""


class PanoVOSError(Exception):
    """Base class for toolkit errors."""


class DataError(PanoVOSError, ValueError):
    """Malformed masks, corpora, manifests or numeric inputs."""


class ShapeError(DataError):
    """Arrays whose shapes do not agree."""


class CapacityError(PanoVOSError):
    """More objects than an ID bank can hold."""

    def __init__(self, message, n_objects=None, capacity=None):
        super().__init__(message)
        self.n_objects = n_objects
        self.capacity = capacity
