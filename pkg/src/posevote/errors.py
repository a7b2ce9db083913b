"""Exception types shared across the package."""


class PoseVoteError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PoseVoteError, ValueError):
    pass


class ShapeError(PoseVoteError, ValueError):
    pass


class DegenerateRotationError(PoseVoteError, ValueError):
    """A 6D rotation input whose columns are near-zero or near-parallel."""


class RankDeficiencyError(PoseVoteError, ValueError):
    pass


class PoisonedGradientError(PoseVoteError, FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


class DeterminismError(PoseVoteError, RuntimeError):
    pass


class ScheduleRangeError(PoseVoteError, ValueError):
    pass


class InputError(PoseVoteError, ValueError):
    pass


class GraphError(PoseVoteError, IndexError):
    pass


class MissingClassError(PoseVoteError, KeyError):
    pass


class ModelError(PoseVoteError, ValueError):
    pass


class SanityError(PoseVoteError, ValueError):
    pass


class NonFiniteLossError(PoseVoteError, FloatingPointError):
    def __init__(self, batch_id, component: str):
        super().__init__(f"non-finite loss component {component!r} in batch {batch_id}")
        self.batch_id = batch_id
        self.component = component


class ParseError(PoseVoteError, ValueError):
    def __init__(self, message: str, offset: int | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.offset = offset
        self.line = line


class VersionError(ParseError):
    pass


class EmptyInputError(PoseVoteError, ValueError):
    pass
