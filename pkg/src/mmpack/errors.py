"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: ConfigError -> 1, data errors
(StructuralError and subclasses, ContractViolation) -> 2, OSError -> 3.
"""


class MmpackError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MmpackError):
    """Bad run configuration or unusable command-line arguments."""


class StructuralError(MmpackError):
    """Input data does not have the shape it claims (archive, container)."""


class FormatError(StructuralError):
    """A container file fails magic/version/layout validation."""


class CorruptRecordError(FormatError):
    """A container record failed its checksum or could not be parsed."""

    def __init__(self, record_index: int, message: str):
        super().__init__(f"record {record_index}: {message}")
        self.record_index = record_index


class ContractViolation(MmpackError):
    """A value handed to an operation violates a documented invariant."""
