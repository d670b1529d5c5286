from __future__ import annotations

from typing import Sequence


class ImddError(RuntimeError):
    code = "imdd_error"


class ParameterError(ImddError, ValueError):
    code = "parameter_error"


class ShapeError(ImddError, ValueError):
    code = "shape_error"


class DegenerateInputError(ImddError, ValueError):
    code = "degenerate_input"


class ContractError(ImddError):
    code = "contract_error"


class UsageError(ImddError):
    code = "usage_error"


class ConfigError(ImddError):
    code = "config_error"


class TrainingDivergence(ImddError):
    code = "training_divergence"

    def __init__(self, message: str, *, step: int, trace: Sequence[float] = ()) -> None:
        super().__init__(f"{message} (step={step})")
        self.step = step
        self.trace = list(trace)


class StorageError(ImddError):
    code = "storage_error"


class DatasetFormatError(StorageError):
    code = "format_error"


class TruncatedFileError(StorageError):
    code = "truncated_file"


class VersionMismatchError(StorageError):
    code = "version_mismatch"
