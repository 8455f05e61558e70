"""Exception hierarchy shared by all pwenv modules."""


class PwenvError(Exception):
    """Base class for library errors."""

    code = "ERROR"


class ForwardDirectionError(PwenvError, ValueError):
    """No mirror maps an incident direction onto itself."""

    code = "FORWARD_DIRECTION"


class NonPositiveInputError(PwenvError, ValueError):
    code = "NONPOSITIVE_INPUT"


class EmptyTableError(PwenvError, ValueError):
    code = "EMPTY_TABLE"


class NotSteerError(PwenvError, ValueError):
    code = "NOT_STEER"


class InvalidSceneError(PwenvError, ValueError):
    code = "INVALID_SCENE"


class NoLosTilesError(PwenvError):
    code = "NO_LOS_TILES"


class NoPathError(PwenvError):
    code = "NO_PATH"


class NoCommonPathsError(PwenvError):
    code = "NO_COMMON_PATHS"


class ScenarioError(PwenvError, ValueError):
    """Scenario file failed to parse or validate; ``line`` is 1-based when known."""

    code = "SCHEMA"

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
