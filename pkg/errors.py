"""Exception hierarchy shared by the numerical package and the command line.

The command layer maps these onto process exit codes (see ``app.py``):
anything deriving from ``ValidationError`` exits with 3, every other
``UnitokError`` (and any unexpected exception) exits with 4.
"""


class UnitokError(Exception):
    """Base class for all errors raised by this project"""


class ShapeError(UnitokError):
    """Operand shapes are incompatible"""

    def __init__(self, message, *shapes):
        if shapes:
            rendered = ', '.join(str(tuple(s)) for s in shapes)
            message = f"{message} (shapes: {rendered})"
        super().__init__(message)
        self.shapes = tuple(tuple(s) for s in shapes)


class DomainError(UnitokError):
    """A value lies outside the mathematical domain of an operation"""


class GraphError(UnitokError):
    """Misuse of the differentiation graph"""


class OptimizerError(UnitokError):
    """Raised by the optimizer, e.g. on a non-finite gradient"""

    def __init__(self, message, param_name=None):
        super().__init__(message)
        self.param_name = param_name


class CheckpointError(UnitokError):
    """A checkpoint file could not be written or read back"""


class TrainingDivergedError(UnitokError):
    """A component loss became non-finite during training"""

    def __init__(self, component, step, stage=None):
        where = f"step {step}" if stage is None else f"stage {stage}, step {step}"
        super().__init__(f"Loss component '{component}' is not finite at {where}")
        self.component = component
        self.step = step
        self.stage = stage


class ValidationError(UnitokError):
    """User-supplied input failed validation"""


class ConfigError(ValidationError):
    """The run configuration is invalid"""

    def __init__(self, message, key=None, line=None):
        self.detail = message
        if key is not None and line is not None:
            message = f"{message} (key '{key}', line {line})"
        elif key is not None:
            message = f"{message} (key '{key}')"
        super().__init__(message)
        self.key = key
        self.line = line


class CorpusError(ValidationError):
    """An image/caption corpus is missing, malformed or undecodable"""

    def __init__(self, message, path=None, line=None):
        details = []
        if path is not None:
            details.append(f"path '{path}'")
        if line is not None:
            details.append(f"line {line}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)
        self.path = path
        self.line = line
