"""Exception taxonomy shared across the package."""


class EdgeOrchError(Exception):
    """Base class for all package errors."""


class StructuralError(EdgeOrchError):
    """Inputs are structurally inconsistent (dimension mismatch, unlinked pair, ...)."""


class ConfigError(EdgeOrchError):
    """A scenario/plan config file is malformed or fails schema validation."""


class SetupError(EdgeOrchError):
    """A scenario cannot be instantiated (e.g. budget demand exceeds cluster capacity)."""


class UnreachableStageError(EdgeOrchError):
    """Some chain stage has no reachable instance from a possible predecessor location."""

    def __init__(self, request_id: str, stage: int, message: str = ""):
        self.request_id = request_id
        self.stage = stage
        super().__init__(
            message or f"request {request_id!r}: no reachable instance for chain stage {stage}"
        )


class UnstableQueueError(EdgeOrchError):
    """Offered load meets or exceeds service capacity (rho >= 1)."""


class ConservationError(EdgeOrchError):
    """Propagated traffic mass is not conserved across chain stages."""


class DeadlockError(EdgeOrchError):
    """No server can host the pending instance; the episode cannot continue."""


class CheckpointError(EdgeOrchError):
    """Checkpoint file is missing, truncated, or incompatible."""


class PlotError(EdgeOrchError):
    """CSV input for plotting is empty or malformed."""


class InfeasiblePlanError(EdgeOrchError):
    """A deployment plan violates resource constraints or cannot serve all requests."""


class TrainingDivergedError(EdgeOrchError):
    """A loss became non-finite during training."""

    def __init__(self, message: str, snapshot: dict | None = None):
        self.snapshot = snapshot or {}
        super().__init__(message)
