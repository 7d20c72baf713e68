"""Exception hierarchy. Every error raised by the package derives from NRelaggsError."""


class NRelaggsError(Exception):
    pass


# schema / loading
class SchemaError(NRelaggsError):
    pass


class MissingTableFile(SchemaError):
    pass


class HeaderMismatch(SchemaError):
    pass


class DanglingForeignKey(SchemaError):
    def __init__(self, table, column, value):
        super().__init__(f"{table}.{column}: value {value!r} matches no key of the referenced table")
        self.table = table
        self.column = column
        self.value = value


class CyclicJoinGraph(SchemaError):
    pass


class TargetNotCategorical(SchemaError):
    pass


class UnknownTable(NRelaggsError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# preprocessing
class EmptyTrainSet(NRelaggsError):
    pass


class UnknownInstanceKey(NRelaggsError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class IncompatibleWidths(NRelaggsError):
    pass


class PlanMismatch(NRelaggsError):
    pass


# numerics
class ShapeMismatch(NRelaggsError, ValueError):
    pass


class BadSegmentIndex(NRelaggsError, ValueError):
    pass


class LabelDomain(NRelaggsError, ValueError):
    pass


class WidthChainBroken(NRelaggsError):
    pass


class OversizeBatch(NRelaggsError):
    pass


class NonFiniteLoss(NRelaggsError, FloatingPointError):
    pass


class UnknownLayer(NRelaggsError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# evaluation
class TooFewInstances(NRelaggsError, ValueError):
    pass


class LengthMismatch(NRelaggsError, ValueError):
    pass


class SingleClass(NRelaggsError, ValueError):
    pass


# cli
class MissingCheckpoint(NRelaggsError):
    pass
