"""Exception types raised across the package."""


class CgcnError(Exception):
    """Base class for all package errors."""


class GraphError(CgcnError, ValueError):
    pass


class IndexOutOfRange(GraphError):
    pass


class SelfLoop(GraphError):
    pass


class DuplicateEdge(GraphError):
    pass


class DirectedCycle(GraphError):
    pass


class NonFiniteCoordinate(CgcnError, ValueError):
    pass


class ZeroLengthBone(GraphError):
    pass


class ZeroLengthBoneWarning(UserWarning):
    pass


class NegativeWeight(GraphError):
    pass


class DisconnectedGraph(GraphError):
    pass


class IsolatedNode(GraphError):
    pass


class DimensionMismatch(CgcnError, ValueError):
    pass


class NonFiniteActivation(CgcnError, FloatingPointError):
    pass


class MissingCache(CgcnError, RuntimeError):
    pass


class KernelLargerThanSequence(CgcnError, ValueError):
    pass


class BatchTooSmall(CgcnError, ValueError):
    pass


class StreamClassMismatch(CgcnError, ValueError):
    pass


class InvalidLabel(CgcnError, ValueError):
    pass


class ShapeMismatch(CgcnError, ValueError):
    pass


class NonFiniteGradient(CgcnError, FloatingPointError):
    pass


class EmptyDataset(CgcnError, ValueError):
    pass


class SchemaViolation(CgcnError, ValueError):
    pass


class UnknownTemplate(CgcnError, ValueError):
    pass


class ConfigError(CgcnError, ValueError):
    pass


class MissingCheckpoint(CgcnError, FileNotFoundError):
    pass
