"""Exception hierarchy shared by all pipeline stages.

Each class carries the process exit code the CLI uses when it surfaces.
"""


class Gaze2SegError(Exception):
    exit_code = 1

    def __init__(self, message, *, stage=None, region=None):
        super().__init__(message)
        self.stage = stage
        self.region = region

    def __str__(self):
        msg = super().__str__()
        where = []
        if self.stage is not None:
            where.append(f"stage={self.stage}")
        if self.region is not None:
            where.append(f"region={self.region}")
        return f"[{' '.join(where)}] {msg}" if where else msg


class ParseError(Gaze2SegError):
    exit_code = 3

    def __init__(self, message, *, line=None, **kw):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, **kw)
        self.line = line


class ValidationError(Gaze2SegError):
    exit_code = 3


class FormatError(Gaze2SegError):
    exit_code = 3


class ConfigurationError(Gaze2SegError):
    exit_code = 2


class ConvergenceError(Gaze2SegError):
    exit_code = 4

    def __init__(self, message, *, residual=None, iterations=None, **kw):
        super().__init__(message, **kw)
        self.residual = residual
        self.iterations = iterations


class NoBoundaryFound(Gaze2SegError):
    exit_code = 5
