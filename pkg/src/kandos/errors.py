"""Exception types. Each carries a short machine-readable ``code`` used by the CLI."""


class KandosError(Exception):
    code = "E_INTERNAL"


class ConfigError(KandosError, ValueError):
    """Invalid configuration value (grid, model, training, sweep step, ...)."""

    code = "E_CONFIG"


class ShapeError(KandosError, ValueError):
    code = "E_SHAPE"


class NonFiniteError(KandosError, ValueError):
    code = "E_NONFINITE"


class SchemaError(KandosError, ValueError):
    """Feature columns do not match what a model or stats block expects."""

    code = "E_SCHEMA"


class DataError(KandosError, ValueError):
    code = "E_DATA"


class UnparseableCellError(DataError):
    code = "E_PARSE"

    def __init__(self, row: int, column: str, value: str):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"cannot parse {value!r} as a number at row {row}, column {column!r}")


class UnmappedLabelError(DataError):
    code = "E_LABEL"

    def __init__(self, label: str):
        self.label = label
        super().__init__(f"label {label!r} is not covered by the label mapping")


class ModelFileError(KandosError):
    code = "E_MODEL_FILE"


class CorruptModelError(ModelFileError):
    code = "E_CORRUPT"


class FormatVersionError(ModelFileError):
    code = "E_VERSION"

    def __init__(self, found, expected):
        self.found = found
        self.expected = expected
        super().__init__(f"model file format_version {found!r} is not supported (expected {expected})")
