"""Exception hierarchy shared across the package."""


class GatedInterpError(Exception):
    """Base class for all package errors."""


class SchemaError(GatedInterpError):
    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or column)


class ParseError(GatedInterpError):
    def __init__(self, row, column, value):
        self.row, self.column, self.value = row, column, value
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r}")


class ValidationError(GatedInterpError):
    def __init__(self, record_id, message):
        self.record_id = record_id
        super().__init__(f"record {record_id}: {message}")


class EmptyDatasetError(GatedInterpError):
    pass


class SplitError(GatedInterpError):
    pass


class ConfigError(GatedInterpError):
    pass


class DimensionError(GatedInterpError):
    pass


class StateError(GatedInterpError):
    pass


class DomainError(GatedInterpError):
    pass


class IoError(GatedInterpError):
    pass


class FormatError(GatedInterpError):
    pass


class VersionError(FormatError):
    def __init__(self, found, supported):
        self.found, self.supported = found, supported
        super().__init__(f"unsupported format version {found} (this build reads version {supported})")


class DatasetHashWarning(UserWarning):
    """Model artifact was trained on a different dataset than the one supplied."""
