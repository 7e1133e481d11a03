"""Exception hierarchy shared across the pipeline."""


class GazemanipError(Exception):
    """Base class for all library errors."""


class InvalidDepthError(GazemanipError):
    """Depth value is zero or negative where a valid depth is required."""


class BehindCameraError(GazemanipError):
    """3D point has non-positive Z in the camera frame."""


class EmptyInputError(GazemanipError):
    """An operation received an empty cloud, list, or stream it cannot handle."""


class NoDepthCoverageError(GazemanipError):
    """Gaze reprojection found no usable depth candidate."""


class PoseUnavailableError(GazemanipError):
    """Ego pose invalid for this sample; the sample is dropped."""


class NoObjectAtGazeError(GazemanipError):
    """No segmented object within the query margin."""


class NoFeasibleGraspError(GazemanipError):
    """The generator produced no candidate that fits the gripper."""


class FallbackNeededError(GazemanipError):
    """Every rotation view filtered empty; caller should use the gaze fallback."""


class UnsupportedStyleError(GazemanipError):
    """The requested visual prompt style is not supported by the backend."""


class BackendFailureError(GazemanipError):
    """Remote backend exhausted retries; carries the raw replies."""

    def __init__(self, message, replies=None):
        super().__init__(message)
        self.replies = list(replies or [])


class AmbiguousIntentError(GazemanipError):
    """Oracle rule table matched more than one option."""

    def __init__(self, message, tied_options=None):
        super().__init__(message)
        self.tied_options = list(tied_options or [])


class IntentRuleError(GazemanipError):
    """Fixation pattern matches no rule, or no option fits the rule outcome."""


class AllCandidatesInvalidError(GazemanipError):
    """Oracle grasp selection found no collision-free candidate."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        # label -> description of the violated constraint
        self.violations = dict(violations or {})


class PlanningError(GazemanipError):
    """Intent cannot be compiled into a precondition-closed plan."""


class ExecutionFailure(GazemanipError):
    """Collision or goal-predicate failure during simulated execution."""

    def __init__(self, message, colliding_pair=None, step_index=None):
        super().__init__(message)
        # (moving body label, obstacle object name) at the failing sample
        self.colliding_pair = tuple(colliding_pair) if colliding_pair else None
        self.step_index = step_index


class ReachabilityError(GazemanipError):
    """A commanded TCP pose lies outside the reachable workspace shell."""


class SceneError(GazemanipError):
    """Scenario schema violation or unresolvable reference."""


class ManifestError(GazemanipError):
    """Benchmark manifest failed validation before any case ran."""
