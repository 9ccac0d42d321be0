"""Exception types raised across the package."""


class ContractViolation(ValueError):
    """An operation was called with inputs outside its precondition."""


class PlyFormatError(ValueError):
    """A PLY file could not be parsed or is missing required data."""


class CameraFormatError(ValueError):
    """A camera description is malformed or its rotation is invalid."""


class TrainingError(RuntimeError):
    """Training hit a non-finite loss."""

    def __init__(self, iteration: int, camera: int, message: str = "non-finite loss"):
        super().__init__(f"{message} at iteration {iteration} (camera {camera})")
        self.iteration = iteration
        self.camera = camera
