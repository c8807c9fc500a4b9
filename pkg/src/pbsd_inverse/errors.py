"""Exception hierarchy shared by every stage of the toolkit."""


class PbsdError(Exception):
    """Base class; the CLI turns these into structured error messages."""


class DatasetError(PbsdError):
    pass


class EmptyFile(DatasetError):
    def __init__(self, path):
        super().__init__(f"empty file: {path}")
        self.path = str(path)


class MissingColumn(DatasetError):
    def __init__(self, name):
        super().__init__(f"missing column {name!r}")
        self.name = name


class UnexpectedColumn(DatasetError):
    def __init__(self, name):
        super().__init__(f"column {name!r} is not in the schema")
        self.name = name


class OutOfBounds(DatasetError):
    def __init__(self, row, feature, value):
        super().__init__(f"row {row}: {feature}={value!r} outside schema bounds")
        self.row = row
        self.feature = feature
        self.value = value


class NonNumericCell(DatasetError):
    def __init__(self, row, column):
        super().__init__(f"row {row}: non-numeric value in column {column!r}")
        self.row = row
        self.column = column


class DegenerateSplit(DatasetError):
    pass


class ZeroVarianceColumn(DatasetError):
    def __init__(self, name):
        super().__init__(f"column {name!r} has zero variance")
        self.name = name


class SchemaError(DatasetError):
    pass


class SchemaMismatch(DatasetError):
    pass


class AssessmentError(PbsdError):
    pass


class InsufficientData(AssessmentError):
    pass


class NonPositiveValue(AssessmentError):
    pass


class NonPositiveEdp(AssessmentError):
    pass


class MissingDemandModel(AssessmentError):
    def __init__(self, edp_kind):
        super().__init__(f"no demand model for EDP kind {edp_kind!r}")
        self.edp_kind = edp_kind


class EmptyHazard(AssessmentError):
    pass


class SvrError(PbsdError):
    pass


class NoConvergence(SvrError):
    def __init__(self, max_iter):
        super().__init__(f"SMO did not converge within {max_iter} pair updates")
        self.max_iter = max_iter


class DimensionMismatch(SvrError):
    pass


class MetricsError(PbsdError):
    pass


class ZeroMeanTarget(MetricsError):
    pass


class ZeroVarianceTarget(MetricsError):
    pass


class InsufficientDof(MetricsError):
    pass


class SelectionError(PbsdError):
    pass


class TooFewRows(SelectionError):
    pass


class TooFewFeatures(SelectionError):
    pass


class EmptyBudget(SelectionError):
    pass


class ExplainError(PbsdError):
    pass


class TooManyFeatures(ExplainError):
    pass


class EmptyBackground(ExplainError):
    pass


class ConstantFeature(ExplainError):
    pass


class InvalidConfig(PbsdError):
    pass


class InvalidGroundTruth(PbsdError):
    pass
