"""Hidden-state extraction from transformer checkpoints into HNAV dumps."""

from .extract import (
    DeviceUnavailable,
    EmptyInput,
    ExtractionJob,
    ExtractorError,
    ModelLoadError,
    ProbeMismatch,
    StepCountMismatch,
    TokenizationError,
    extract,
    extract_cot,
)
from .hnav_format import FORMAT_VERSION, MAGIC, write_dump
from .probes import CotSeries, Probe, ProbeFileError, load_probes, load_series

__all__ = [
    "CotSeries",
    "DeviceUnavailable",
    "EmptyInput",
    "ExtractionJob",
    "ExtractorError",
    "FORMAT_VERSION",
    "MAGIC",
    "ModelLoadError",
    "Probe",
    "ProbeFileError",
    "ProbeMismatch",
    "StepCountMismatch",
    "TokenizationError",
    "extract",
    "extract_cot",
    "load_probes",
    "load_series",
    "write_dump",
]
